//! Problem configuration in a small INI dialect.
//!
//! ```text
//! [problem]
//! dimension = 1
//! nx = 64
//! n_membranes = 2
//! p = 2
//! t_final = 0.25
//! dt = 1e-3
//! epsilon = 1e-4
//!
//! [source.1]
//! term = const -5
//! transient = gauss 2.0 0.5 0.1
//! lambda = 1
//!
//! [initial.2]
//! term = sinprod -0.1 1
//!
//! [tolerances]
//! newton_tol = 1e-9
//! ```
//!
//! `#` starts a comment anywhere on a line, `;` only at its start. `term`
//! and `transient` may repeat; their contributions add up.

use crate::error::{Error, Result};
use crate::evolution::EvolutionSetup;
use crate::grid::{GridSpec, MultiField, ScalarField};
use crate::p_laplacian::{PFluxParams, DEFAULT_DELTA_REG};

#[derive(Debug, Clone, PartialEq)]
pub enum SourceTerm {
    Const(f64),
    /// `amp * exp(-|x - c|^2 / (2 sigma^2))`.
    Gauss { amp: f64, center: (f64, f64), sigma: f64 },
    /// `amp * sin(k_x pi x / L_x) * sin(k_y pi y / L_y)`; `k_y` unused in 1D.
    SinProd { amp: f64, kx: u32, ky: u32 },
}

impl SourceTerm {
    pub fn eval(&self, grid: &GridSpec, x: f64, y: f64) -> f64 {
        match *self {
            SourceTerm::Const(c) => c,
            SourceTerm::Gauss { amp, center, sigma } => {
                let mut r2 = (x - center.0).powi(2);
                if grid.dimension() == 2 {
                    r2 += (y - center.1).powi(2);
                }
                amp * (-r2 / (2.0 * sigma * sigma)).exp()
            }
            SourceTerm::SinProd { amp, kx, ky } => {
                let pi = std::f64::consts::PI;
                let mut v = amp * (kx as f64 * pi * x / grid.length_x()).sin();
                if grid.dimension() == 2 {
                    v *= (ky as f64 * pi * y / grid.length_y()).sin();
                }
                v
            }
        }
    }

    fn parse(text: &str, dimension: usize, line: usize) -> Result<Self> {
        let mut parts = text.split_whitespace();
        let kind = parts.next().ok_or_else(|| Error::config(line, "empty term"))?;
        let nums: Vec<f64> = parts
            .map(|p| p.parse::<f64>().map_err(|_| Error::config(line, format!("bad number '{p}'"))))
            .collect::<Result<_>>()?;
        let want = |n: usize| -> Result<()> {
            if nums.len() == n {
                Ok(())
            } else {
                Err(Error::config(
                    line,
                    format!("'{kind}' takes {n} numbers in {dimension}D, got {}", nums.len()),
                ))
            }
        };
        let wave = |v: f64| -> Result<u32> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as u32)
            } else {
                Err(Error::config(line, format!("wave numbers must be integers >= 1, got {v}")))
            }
        };
        match kind {
            "const" => {
                want(1)?;
                Ok(SourceTerm::Const(nums[0]))
            }
            "gauss" => {
                let (center, sigma) = if dimension == 1 {
                    want(3)?;
                    ((nums[1], 0.0), nums[2])
                } else {
                    want(4)?;
                    ((nums[1], nums[2]), nums[3])
                };
                if !(sigma > 0.0) {
                    return Err(Error::config(line, format!("sigma must be positive, got {sigma}")));
                }
                Ok(SourceTerm::Gauss {
                    amp: nums[0],
                    center,
                    sigma,
                })
            }
            "sinprod" => {
                if dimension == 1 {
                    want(2)?;
                    Ok(SourceTerm::SinProd {
                        amp: nums[0],
                        kx: wave(nums[1])?,
                        ky: 1,
                    })
                } else {
                    want(3)?;
                    Ok(SourceTerm::SinProd {
                        amp: nums[0],
                        kx: wave(nums[1])?,
                        ky: wave(nums[2])?,
                    })
                }
            }
            other => Err(Error::config(line, format!("unknown term kind '{other}'"))),
        }
    }
}

/// `f(x, t) = base(x) + transient(x) * exp(-lambda t)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SourceSpec {
    pub terms: Vec<SourceTerm>,
    pub transient: Vec<SourceTerm>,
    pub lambda: f64,
}

impl SourceSpec {
    pub fn constant(c: f64) -> Self {
        SourceSpec {
            terms: vec![SourceTerm::Const(c)],
            ..Default::default()
        }
    }

    fn sum(terms: &[SourceTerm], grid: &GridSpec, x: f64, y: f64) -> f64 {
        terms.iter().map(|t| t.eval(grid, x, y)).sum()
    }

    pub fn eval(&self, grid: &GridSpec, t: f64) -> ScalarField {
        let decay = if self.transient.is_empty() { 0.0 } else { (-self.lambda * t).exp() };
        ScalarField::from_fn(*grid, |x, y| {
            let mut v = Self::sum(&self.terms, grid, x, y);
            if decay != 0.0 {
                v += decay * Self::sum(&self.transient, grid, x, y);
            }
            v
        })
    }

    /// The forcing as `t -> infinity`.
    pub fn limit(&self, grid: &GridSpec) -> ScalarField {
        if self.lambda > 0.0 || self.transient.is_empty() {
            ScalarField::from_fn(*grid, |x, y| Self::sum(&self.terms, grid, x, y))
        } else {
            self.eval(grid, 0.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tolerances {
    pub newton_tol: f64,
    pub oracle_tol: f64,
    pub tol_c: f64,
    pub gap_tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemConfig {
    pub grid: GridSpec,
    pub n_membranes: usize,
    pub p: f64,
    pub delta_reg: f64,
    pub t_final: f64,
    pub dt: f64,
    pub epsilon: f64,
    pub sources: Vec<SourceSpec>,
    pub initials: Vec<SourceSpec>,
    pub tolerances: Tolerances,
    pub snapshot_times: Vec<f64>,
    pub seed: u64,
    /// Notes produced while validating, e.g. initial data repaired by projection.
    pub warnings: Vec<String>,
}

impl ProblemConfig {
    /// A configuration with zero data and default tolerances.
    pub fn new(grid: GridSpec, n_membranes: usize, p: f64, t_final: f64, dt: f64, epsilon: f64) -> Self {
        let h = grid.h();
        ProblemConfig {
            grid,
            n_membranes,
            p,
            delta_reg: if p == 2.0 { 0.0 } else { DEFAULT_DELTA_REG },
            t_final,
            dt,
            epsilon,
            sources: vec![SourceSpec::default(); n_membranes],
            initials: vec![SourceSpec::default(); n_membranes],
            tolerances: Tolerances {
                newton_tol: 1e-9,
                oracle_tol: 1e-12,
                tol_c: (10.0 * epsilon).max(h),
                gap_tol: 1e-12,
            },
            snapshot_times: vec![t_final],
            seed: 0,
            warnings: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n_membranes < 1 {
            return bad("n_membranes must be at least 1".into());
        }
        if !(self.t_final > 0.0) {
            return bad(format!("t_final must be positive, got {}", self.t_final));
        }
        if !(self.dt > 0.0) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        PFluxParams::new(self.p, self.delta_reg)?;
        if self.sources.len() != self.n_membranes || self.initials.len() != self.n_membranes {
            return bad("one source and one initial spec per membrane".into());
        }
        if self.sources.iter().any(|s| !(s.lambda >= 0.0)) {
            return bad("lambda must be nonnegative".into());
        }
        Ok(())
    }

    pub fn pflux(&self) -> PFluxParams {
        PFluxParams::new(self.p, self.delta_reg).expect("validated config")
    }

    pub fn forcing(&self, t: f64) -> MultiField {
        MultiField::new(self.sources.iter().map(|s| s.eval(&self.grid, t)).collect()).expect("common grid")
    }

    pub fn forcing_limit(&self) -> MultiField {
        MultiField::new(self.sources.iter().map(|s| s.limit(&self.grid)).collect()).expect("common grid")
    }

    /// Initial data as given, before projection.
    pub fn raw_initial(&self) -> MultiField {
        MultiField::new(self.initials.iter().map(|s| s.eval(&self.grid, 0.0)).collect()).expect("common grid")
    }

    /// Initial data projected onto the ordered cone.
    pub fn initial(&self) -> MultiField {
        self.raw_initial().project_ordered()
    }

    pub fn setup(&self) -> EvolutionSetup {
        EvolutionSetup {
            pflux: self.pflux(),
            epsilon: self.epsilon,
            dt: self.dt,
            t_final: self.t_final,
            newton_tol: self.tolerances.newton_tol,
        }
    }

    /// The same problem restricted to membrane `i` (0-based).
    pub fn single_membrane(&self, i: usize) -> ProblemConfig {
        ProblemConfig {
            n_membranes: 1,
            sources: vec![self.sources[i].clone()],
            initials: vec![self.initials[i].clone()],
            warnings: Vec::new(),
            ..self.clone()
        }
    }

    fn record_projection_warning(&mut self) {
        let raw = self.raw_initial();
        let defect = raw.ordering_defect();
        if defect > 0.0 {
            self.warnings.push(format!(
                "warning: initial data not ordered (defect {defect:e}); projected onto u_1 >= ... >= u_N"
            ));
        }
    }
}

#[derive(Debug)]
struct Entry {
    line: usize,
    key: String,
    value: String,
}

#[derive(Debug)]
struct Section {
    line: usize,
    name: String,
    entries: Vec<Entry>,
}

fn split_sections(text: &str) -> Result<Vec<Section>> {
    let mut sections: Vec<Section> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let s = raw.split('#').next().unwrap_or("").trim();
        if s.is_empty() || s.starts_with(';') {
            continue;
        }
        if let Some(rest) = s.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| Error::config(line, "unterminated section header"))?
                .trim()
                .to_string();
            if sections.iter().any(|sec| sec.name == name) {
                return Err(Error::config(line, format!("duplicate section [{name}]")));
            }
            sections.push(Section {
                line,
                name,
                entries: Vec::new(),
            });
            continue;
        }
        let (key, value) = s
            .split_once('=')
            .ok_or_else(|| Error::config(line, "expected key = value"))?;
        let section = sections
            .last_mut()
            .ok_or_else(|| Error::config(line, "key outside of any section"))?;
        section.entries.push(Entry {
            line,
            key: key.trim().to_string(),
            value: value.trim().to_string(),
        });
    }
    Ok(sections)
}

fn parse_f64(e: &Entry) -> Result<f64> {
    e.value
        .parse::<f64>()
        .map_err(|_| Error::config(e.line, format!("'{}' is not a number", e.value)))
}

fn parse_usize(e: &Entry) -> Result<usize> {
    e.value
        .parse::<usize>()
        .map_err(|_| Error::config(e.line, format!("'{}' is not a nonnegative integer", e.value)))
}

fn component_index(name: &str, prefix: &str, line: usize, n: usize) -> Result<Option<usize>> {
    let Some(rest) = name.strip_prefix(prefix) else {
        return Ok(None);
    };
    let i: usize = rest
        .parse()
        .map_err(|_| Error::config(line, format!("bad component index in [{name}]")))?;
    if i < 1 || i > n {
        return Err(Error::config(
            line,
            format!("section for nonexistent component: [{name}] with n_membranes = {n}"),
        ));
    }
    Ok(Some(i - 1))
}

/// Parses and validates a configuration.
pub fn parse_config(text: &str) -> Result<ProblemConfig> {
    let sections = split_sections(text)?;
    let problem = sections
        .iter()
        .find(|s| s.name == "problem")
        .ok_or_else(|| Error::config(0, "missing section [problem]"))?;

    let mut dimension = 1usize;
    let mut nx = None;
    let mut ny = None;
    let mut length_x = 1.0;
    let mut length_y = None;
    let mut n_membranes = None;
    let mut p = None;
    let mut t_final = None;
    let mut dt = None;
    let mut epsilon = None;
    let mut delta_reg = None;
    let mut seed = 0u64;
    let mut snapshot_times = None;
    for e in &problem.entries {
        match e.key.as_str() {
            "dimension" => dimension = parse_usize(e)?,
            "nx" => nx = Some(parse_usize(e)?),
            "ny" => ny = Some(parse_usize(e)?),
            "length_x" => length_x = parse_f64(e)?,
            "length_y" => length_y = Some(parse_f64(e)?),
            "n_membranes" => n_membranes = Some(parse_usize(e)?),
            "p" => p = Some(parse_f64(e)?),
            "t_final" => t_final = Some(parse_f64(e)?),
            "dt" => dt = Some(parse_f64(e)?),
            "epsilon" => epsilon = Some(parse_f64(e)?),
            "delta_reg" => delta_reg = Some(parse_f64(e)?),
            "seed" => seed = parse_usize(e)? as u64,
            "snapshot_times" => {
                let times = e
                    .value
                    .split(',')
                    .map(|v| {
                        v.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::config(e.line, format!("bad snapshot time '{v}'")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                snapshot_times = Some(times);
            }
            other => return Err(Error::config(e.line, format!("unknown key '{other}' in [problem]"))),
        }
    }
    let require = |v: Option<f64>, key: &str| v.ok_or_else(|| Error::config(problem.line, format!("[problem] needs '{key}'")));
    let nx = nx.ok_or_else(|| Error::config(problem.line, "[problem] needs 'nx'"))?;
    let n = n_membranes.ok_or_else(|| Error::config(problem.line, "[problem] needs 'n_membranes'"))?;
    if n < 1 {
        return Err(Error::config(problem.line, "n_membranes must be at least 1"));
    }
    let grid = if dimension == 2 {
        GridSpec::new(2, nx, ny, length_x, Some(length_y.unwrap_or(1.0)))
    } else {
        GridSpec::new(dimension, nx, ny, length_x, length_y)
    }
    .map_err(|e| Error::config(problem.line, e.to_string()))?;
    let p = require(p, "p")?;
    let t_final = require(t_final, "t_final")?;
    let dt = require(dt, "dt")?;
    let epsilon = epsilon.unwrap_or(grid.h() * grid.h());

    let mut cfg = ProblemConfig::new(grid, n, p, t_final, dt, epsilon);
    if let Some(d) = delta_reg {
        cfg.delta_reg = d;
    }
    cfg.seed = seed;
    if let Some(times) = snapshot_times {
        cfg.snapshot_times = times;
    }

    for section in &sections {
        let line = section.line;
        if section.name == "problem" {
            continue;
        }
        if section.name == "tolerances" {
            for e in &section.entries {
                let v = parse_f64(e)?;
                match e.key.as_str() {
                    "newton_tol" => cfg.tolerances.newton_tol = v,
                    "oracle_tol" => cfg.tolerances.oracle_tol = v,
                    "tol_c" => cfg.tolerances.tol_c = v,
                    "gap_tol" => cfg.tolerances.gap_tol = v,
                    other => return Err(Error::config(e.line, format!("unknown key '{other}' in [tolerances]"))),
                }
                if !(v >= 0.0) {
                    return Err(Error::config(e.line, format!("{} must be nonnegative", e.key)));
                }
            }
            continue;
        }
        if let Some(i) = component_index(&section.name, "source.", line, n)? {
            let spec = &mut cfg.sources[i];
            for e in &section.entries {
                match e.key.as_str() {
                    "term" => spec.terms.push(SourceTerm::parse(&e.value, dimension, e.line)?),
                    "transient" => spec.transient.push(SourceTerm::parse(&e.value, dimension, e.line)?),
                    "lambda" => {
                        spec.lambda = parse_f64(e)?;
                        if !(spec.lambda >= 0.0) {
                            return Err(Error::config(e.line, "lambda must be nonnegative"));
                        }
                    }
                    other => return Err(Error::config(e.line, format!("unknown key '{other}' in [{}]", section.name))),
                }
            }
            continue;
        }
        if let Some(i) = component_index(&section.name, "initial.", line, n)? {
            for e in &section.entries {
                match e.key.as_str() {
                    "term" => cfg.initials[i].terms.push(SourceTerm::parse(&e.value, dimension, e.line)?),
                    other => return Err(Error::config(e.line, format!("unknown key '{other}' in [{}]", section.name))),
                }
            }
            continue;
        }
        return Err(Error::config(line, format!("unknown section [{}]", section.name)));
    }
    cfg.validate().map_err(|e| Error::config(problem.line, e.to_string()))?;
    cfg.record_projection_warning();
    Ok(cfg)
}
