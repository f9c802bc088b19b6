//! Experiment drivers behind the command line: each takes a validated
//! [`ProblemConfig`], returns its results as data, and can write them as CSV.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coincidence::{
    coincidence_masks, mask_distance, nondegeneracy_check, system_identity_residual, verify_ls, LsReport,
    NondegeneracyReport,
};
use crate::config::{ProblemConfig, SourceTerm};
use crate::error::Result;
use crate::evolution::{evolve_penalized, Trajectory};
use crate::grid::{grad_p_integral, l2_norm, lp_grad_norm, GridSpec, MultiField, ScalarField};
use crate::output::{snapshot_csv, timeseries_csv, write_file, Table, TimeseriesRow};
use crate::p_laplacian::{PFluxParams, DEFAULT_DELTA_REG};
use crate::penalty::{t_monotone_pairing, PenaltyParams};
use crate::vi_oracle::{evolve_projected, ProjectedSolver};

/// Maps `f` over `items` on up to `jobs` threads; the result order (and
/// every value) is the same as for a serial map.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let jobs = jobs.max(1).min(items.len().max(1));
    if jobs == 1 {
        return items.iter().map(f).collect();
    }
    let f = &f;
    let mut indexed: Vec<(usize, R)> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..jobs)
            .map(|k| {
                s.spawn(move || {
                    (k..items.len())
                        .step_by(jobs)
                        .map(|i| (i, f(&items[i])))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    indexed.sort_by_key(|(i, _)| *i);
    indexed.into_iter().map(|(_, r)| r).collect()
}

fn collect_results<R>(results: Vec<Result<R>>) -> Result<Vec<R>> {
    results.into_iter().collect()
}

/// Sum over components of the squared L2 norm of `a - b`.
fn l2_dist_sq(a: &MultiField, b: &MultiField) -> f64 {
    a.components()
        .iter()
        .zip(b.components())
        .map(|(x, y)| l2_norm(&x.zip_map(y, |u, v| u - v).expect("same grid")).powi(2))
        .sum()
}

fn grad_p_dist(a: &MultiField, b: &MultiField, p: f64) -> f64 {
    a.components()
        .iter()
        .zip(b.components())
        .map(|(x, y)| grad_p_integral(&x.zip_map(y, |u, v| u - v).expect("same grid"), p))
        .sum()
}

/// Flux parameters for exponent `p`, reusing the configured regularization.
fn pflux_for(cfg: &ProblemConfig, p: f64) -> Result<PFluxParams> {
    let delta = if p == cfg.p {
        cfg.delta_reg
    } else if p == 2.0 {
        0.0
    } else if cfg.delta_reg > 0.0 {
        cfg.delta_reg
    } else {
        DEFAULT_DELTA_REG
    };
    PFluxParams::new(p, delta)
}

/// The same problem with `h` and `dt` halved.
pub fn refined(cfg: &ProblemConfig) -> Result<ProblemConfig> {
    let g = cfg.grid;
    let grid = if g.dimension() == 2 {
        GridSpec::new_2d(2 * g.nx() + 1, 2 * g.ny() + 1, g.length_x(), g.length_y())?
    } else {
        GridSpec::new_1d(2 * g.nx() + 1, g.length_x())?
    };
    Ok(ProblemConfig {
        grid,
        dt: cfg.dt / 2.0,
        warnings: Vec::new(),
        ..cfg.clone()
    })
}

/// Penalized trajectory of the configured problem.
pub fn penalized_trajectory(cfg: &ProblemConfig) -> Result<Trajectory> {
    evolve_penalized(&cfg.setup(), cfg.initial(), |t| cfg.forcing(t))
}

/// Projected (variational inequality) trajectory of the configured problem.
pub fn oracle_trajectory(cfg: &ProblemConfig, tol: f64) -> Result<Trajectory> {
    evolve_projected(&cfg.pflux(), cfg.dt, cfg.t_final, tol, cfg.initial(), |t| cfg.forcing(t))
}

fn timeseries_row(cfg: &ProblemConfig, t: f64, u: &MultiField, ls_violation: f64) -> Result<TimeseriesRow> {
    let masks = coincidence_masks(u, cfg.tolerances.tol_c)?;
    let n = u.n_components();
    Ok(TimeseriesRow {
        t,
        l2: u.components().iter().map(l2_norm).collect(),
        grad_p: u.components().iter().map(|c| grad_p_integral(c, cfg.p)).collect(),
        ordering_defect: u.ordering_defect(),
        ls_violation,
        mask_areas: (1..n).map(|i| masks.area(i, i + 1)).collect(),
        distance_to_stationary: None,
    })
}

/// Rows for every state of `traj`; `ls_violation` is NaN at `t = 0`.
pub fn trajectory_timeseries(cfg: &ProblemConfig, traj: &Trajectory) -> Result<Vec<TimeseriesRow>> {
    let ls = if traj.states.len() > 1 {
        verify_ls(traj, |t| cfg.forcing(t), &cfg.pflux(), 0.0)?.per_step
    } else {
        Vec::new()
    };
    traj.states
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let v = if k == 0 { f64::NAN } else { ls[k - 1] };
            timeseries_row(cfg, s.t, &s.u, v)
        })
        .collect()
}

fn snapshot_files(cfg: &ProblemConfig, traj: &Trajectory) -> Result<Vec<(String, String)>> {
    cfg.snapshot_times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let u = &traj.at_time(t).u;
            let masks = coincidence_masks(u, cfg.tolerances.tol_c)?;
            Ok((format!("snapshot_{k:03}.csv"), snapshot_csv(u, &masks)?))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SolveRun {
    pub trajectory: Trajectory,
    pub timeseries: Vec<TimeseriesRow>,
    /// `(file name, contents)` for each requested snapshot time.
    pub snapshots: Vec<(String, String)>,
    pub warnings: Vec<String>,
}

impl SolveRun {
    pub fn write(&self, dir: &Path) -> Result<()> {
        for (name, contents) in &self.snapshots {
            write_file(dir, name, contents)?;
        }
        write_file(dir, "timeseries.csv", &timeseries_csv(&self.timeseries))
    }
}

/// Marches the penalized system and collects snapshots and the time series.
pub fn run_solve(cfg: &ProblemConfig) -> Result<SolveRun> {
    let trajectory = penalized_trajectory(cfg)?;
    Ok(SolveRun {
        timeseries: trajectory_timeseries(cfg, &trajectory)?,
        snapshots: snapshot_files(cfg, &trajectory)?,
        trajectory,
        warnings: cfg.warnings.clone(),
    })
}

#[derive(Debug, Clone)]
pub struct StationaryRun {
    pub u: MultiField,
    pub sweeps: usize,
    pub snapshot: String,
    pub timeseries: Vec<TimeseriesRow>,
}

impl StationaryRun {
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_file(dir, "snapshot_stationary.csv", &self.snapshot)?;
        write_file(dir, "timeseries.csv", &timeseries_csv(&self.timeseries))
    }
}

fn stationary_solver(cfg: &ProblemConfig) -> ProjectedSolver {
    let mut solver = ProjectedSolver::new(cfg.grid, cfg.pflux());
    if cfg.p == 2.0 {
        solver.relaxation = ProjectedSolver::optimal_relaxation(&cfg.grid);
    }
    solver
}

/// Solves the stationary problem for the limit forcing `f(t -> infinity)`.
pub fn run_stationary(cfg: &ProblemConfig) -> Result<StationaryRun> {
    let sol = stationary_solver(cfg).stationary(&cfg.forcing_limit(), cfg.tolerances.oracle_tol, None)?;
    let masks = coincidence_masks(&sol.u, cfg.tolerances.tol_c)?;
    let row = timeseries_row(cfg, f64::INFINITY, &sol.u, f64::NAN)?;
    Ok(StationaryRun {
        snapshot: snapshot_csv(&sol.u, &masks)?,
        timeseries: vec![row],
        sweeps: sol.sweeps,
        u: sol.u,
    })
}

/// Distances at `t_final` between penalized runs (one per `(p, epsilon)`)
/// and the projected solver. Columns: `p, epsilon, max_dist, grad_p_dist,
/// ordering_defect`, where `grad_p_dist` is the largest per-component
/// `||grad(u_eps - u)||_{L^p}`.
pub fn run_oracle_compare(cfg: &ProblemConfig, eps_list: &[f64], p_list: &[f64], jobs: usize) -> Result<Table> {
    let oracles = collect_results(parallel_map(p_list, jobs, |&p| -> Result<MultiField> {
        let c = ProblemConfig {
            p,
            delta_reg: pflux_for(cfg, p)?.delta_reg(),
            ..cfg.clone()
        };
        Ok(oracle_trajectory(&c, cfg.tolerances.oracle_tol)?.last().u.clone())
    }))?;
    let cells: Vec<(usize, f64)> = (0..p_list.len())
        .flat_map(|k| eps_list.iter().map(move |&e| (k, e)))
        .collect();
    let rows = collect_results(parallel_map(&cells, jobs, |&(k, eps)| -> Result<Vec<f64>> {
        let p = p_list[k];
        let c = ProblemConfig {
            p,
            delta_reg: pflux_for(cfg, p)?.delta_reg(),
            epsilon: eps,
            ..cfg.clone()
        };
        let traj = penalized_trajectory(&c)?;
        let u = &traj.last().u;
        let oracle = &oracles[k];
        let grad = u
            .components()
            .iter()
            .zip(oracle.components())
            .map(|(a, b)| lp_grad_norm(&a.zip_map(b, |x, y| x - y).expect("same grid"), p))
            .fold(0.0, f64::max);
        let defect = traj.states.iter().map(|s| s.u.ordering_defect()).fold(0.0, f64::max);
        Ok(vec![p, eps, u.max_abs_diff(oracle)?, grad, defect])
    }))?;
    let mut table = Table::new(&["p", "epsilon", "max_dist", "grad_p_dist", "ordering_defect"]);
    for r in rows {
        table.push(r);
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    /// Also rerun with `h` and `dt` halved to compare the LS excess.
    pub refine: bool,
    /// Number of random pairs for the T-monotonicity sampling.
    pub monotone_samples: usize,
    /// Tolerance of the projected solver used for the system identity.
    pub identity_tol: f64,
    /// Coincidence threshold on the projected trajectory. Pooled components
    /// are equal to rounding there, so this can be far below `tol_c`.
    pub identity_tol_c: f64,
    pub jobs: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            refine: true,
            monotone_samples: 10_000,
            identity_tol: 1e-13,
            identity_tol_c: 1e-9,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    /// LS check of the penalized run against `3 * baseline`.
    pub ls: LsReport,
    /// Largest `|P u - f|` over single-membrane runs of each component.
    pub baseline: f64,
    /// `(coarse, fine)` positive LS excess over the baseline-free bounds.
    pub refinement: Option<(f64, f64)>,
    /// Largest per-step L1 identity residual on the projected trajectory.
    pub identity_oracle: f64,
    /// The same on the penalized trajectory with masks at `10 epsilon`
    /// (reported, not asserted: the penalty leaves an O(epsilon / h^2) layer).
    pub identity_penalized: f64,
    pub monotone_min: f64,
    pub ordering_defect: f64,
    pub ordering_bound: f64,
}

impl VerifyReport {
    pub fn ls_passed(&self) -> bool {
        self.ls.passed()
    }

    /// Fine-grid excess no larger than the coarse one, up to the solver floor.
    pub fn refinement_passed(&self, floor: f64) -> bool {
        self.refinement.map_or(true, |(c, f)| f <= c.max(floor))
    }

    pub fn identity_passed(&self) -> bool {
        self.identity_oracle <= 10.0 * self.ls.slack
    }

    pub fn monotone_passed(&self) -> bool {
        self.monotone_min >= -1e-12
    }

    pub fn ordering_passed(&self) -> bool {
        self.ordering_defect <= self.ordering_bound
    }

    pub fn lines(&self, floor: f64) -> Vec<(String, bool)> {
        let mut out = vec![
            (
                format!(
                    "lewy-stampacchia: max violation {:e}, slack {:e} (baseline {:e})",
                    self.ls.max_violation, self.ls.slack, self.baseline
                ),
                self.ls_passed(),
            ),
            (
                format!(
                    "system identity: projected {:e} <= {:e}; penalized {:e} (not asserted)",
                    self.identity_oracle,
                    10.0 * self.ls.slack,
                    self.identity_penalized
                ),
                self.identity_passed(),
            ),
            (
                format!("t-monotonicity: min pairing {:e}", self.monotone_min),
                self.monotone_passed(),
            ),
            (
                format!(
                    "ordering defect: {:e} <= {:e}",
                    self.ordering_defect, self.ordering_bound
                ),
                self.ordering_passed(),
            ),
        ];
        if let Some((c, f)) = self.refinement {
            out.push((
                format!("ls refinement: excess {c:e} -> {f:e} (floor {floor:e})"),
                self.refinement_passed(floor),
            ));
        }
        out
    }

    pub fn passed(&self, floor: f64) -> bool {
        self.lines(floor).iter().all(|(_, ok)| *ok)
    }
}

/// Largest positive violation of the LS bounds with zero slack.
fn ls_excess(cfg: &ProblemConfig) -> Result<f64> {
    let traj = penalized_trajectory(cfg)?;
    Ok(verify_ls(&traj, |t| cfg.forcing(t), &cfg.pflux(), 0.0)?.max_violation.max(0.0))
}

/// Residual of single-membrane runs, where the bounds collapse to `P u = f`.
pub fn ls_baseline(cfg: &ProblemConfig, jobs: usize) -> Result<f64> {
    let comps: Vec<usize> = (0..cfg.n_membranes).collect();
    let r = collect_results(parallel_map(&comps, jobs, |&i| ls_excess(&cfg.single_membrane(i))))?;
    Ok(r.into_iter().fold(0.0, f64::max))
}

/// Smallest `<Bv - Bw, (v - w)^+>` over random pairs, half of them drawn
/// so that differences fall inside the linear band of the penalty.
pub fn sample_t_monotone(cfg: &ProblemConfig, samples: usize) -> Result<f64> {
    let params = PenaltyParams::from_forcing(cfg.epsilon, &cfg.forcing(cfg.t_final))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (grid, n, eps) = (cfg.grid, cfg.n_membranes, cfg.epsilon);
    let mut worst = f64::INFINITY;
    for _ in 0..samples {
        let v: Vec<f64> = (0..n * grid.len()).map(|_| rng.gen_range(-2.0 * eps..2.0 * eps)).collect();
        let w: Vec<f64> = if rng.gen_bool(0.5) {
            v.iter().map(|x| x + rng.gen_range(-eps..eps)).collect()
        } else {
            (0..v.len()).map(|_| rng.gen_range(-2.0 * eps..2.0 * eps)).collect()
        };
        let pair = t_monotone_pairing(
            &MultiField::from_flat(grid, n, &v),
            &MultiField::from_flat(grid, n, &w),
            &params,
        )?;
        worst = worst.min(pair);
    }
    Ok(worst)
}

/// Runs the LS, system-identity, T-monotonicity and ordering checks.
pub fn run_verify(cfg: &ProblemConfig, opts: &VerifyOptions) -> Result<VerifyReport> {
    let pflux = cfg.pflux();
    let traj = penalized_trajectory(cfg)?;
    let baseline = ls_baseline(cfg, opts.jobs)?;
    let ls = verify_ls(&traj, |t| cfg.forcing(t), &pflux, 3.0 * baseline)?;
    let refinement = if opts.refine {
        let coarse = ls.max_violation.max(0.0);
        Some((coarse, ls_excess(&refined(cfg)?)?))
    } else {
        None
    };
    let oracle = oracle_trajectory(cfg, opts.identity_tol)?;
    let max_of = |v: Vec<f64>| v.into_iter().fold(0.0, f64::max);
    let identity_oracle = max_of(system_identity_residual(
        &oracle,
        |t| cfg.forcing(t),
        &pflux,
        opts.identity_tol_c,
    )?);
    let identity_penalized = max_of(system_identity_residual(
        &traj,
        |t| cfg.forcing(t),
        &pflux,
        10.0 * cfg.epsilon,
    )?);
    let ordering_defect = traj.states.iter().map(|s| s.u.ordering_defect()).fold(0.0, f64::max);
    Ok(VerifyReport {
        ls,
        baseline,
        refinement,
        identity_oracle,
        identity_penalized,
        monotone_min: sample_t_monotone(cfg, opts.monotone_samples)?,
        ordering_defect,
        ordering_bound: cfg.epsilon + 10.0 * cfg.tolerances.newton_tol,
    })
}

/// The perturbation shape: a Gaussian bump of unit height at the centre.
pub fn perturbation_bump(grid: &GridSpec) -> ScalarField {
    let bump = SourceTerm::Gauss {
        amp: 1.0,
        center: (grid.length_x() / 2.0, grid.length_y() / 2.0),
        sigma: 0.1 * grid.length_x(),
    };
    ScalarField::from_fn(*grid, |x, y| bump.eval(grid, x, y))
}

/// `q = min(p', 2)`.
pub fn perturbation_exponent(p: f64) -> f64 {
    (p / (p - 1.0)).min(2.0)
}

/// `sup_t ||u* - u||^2 + int |grad(u* - u)|^p`, with the gradient term
/// raised to `2/p` when `p < 2`.
pub fn perturbation_functional(a: &Trajectory, b: &Trajectory, p: f64) -> f64 {
    let mut sup = 0.0f64;
    let mut grad = 0.0;
    for (k, (sa, sb)) in a.states.iter().zip(&b.states).enumerate() {
        sup = sup.max(l2_dist_sq(&sa.u, &sb.u));
        if k > 0 {
            grad += (sa.t - a.states[k - 1].t) * grad_p_dist(&sa.u, &sb.u, p);
        }
    }
    if p < 2.0 {
        sup + grad.powf(2.0 / p)
    } else {
        sup + grad
    }
}

/// Perturbs every forcing component by `delta_k * bump` with
/// `delta_k = delta / 2^k`, `k = 0..=halvings`, and tabulates
/// `delta, eps_star, E, ratio` against the unperturbed projected run.
pub fn run_perturb(cfg: &ProblemConfig, delta: f64, halvings: usize, jobs: usize) -> Result<Table> {
    let tol = cfg.tolerances.oracle_tol;
    let base = oracle_trajectory(cfg, tol)?;
    let bump = perturbation_bump(&cfg.grid);
    let q = perturbation_exponent(cfg.p);
    let bump_q: f64 = bump.values().iter().map(|v| v.abs().powf(q)).sum::<f64>() * cfg.grid.cell_measure();
    let n = cfg.n_membranes as f64;
    let deltas: Vec<f64> = (0..=halvings).map(|k| delta / 2f64.powi(k as i32)).collect();
    let rows = collect_results(parallel_map(&deltas, jobs, |&d| -> Result<Vec<f64>> {
        let shifted = |t: f64| {
            let f = cfg.forcing(t);
            MultiField::new(
                f.components()
                    .iter()
                    .map(|c| c.zip_map(&bump, |a, b| a + d * b).expect("same grid"))
                    .collect(),
            )
            .expect("same grid")
        };
        let pert = evolve_projected(&cfg.pflux(), cfg.dt, cfg.t_final, tol, cfg.initial(), shifted)?;
        let e = perturbation_functional(&pert, &base, cfg.p);
        let eps_star = n * cfg.t_final * d.abs().powf(q) * bump_q;
        let ratio = if eps_star > 0.0 { e / eps_star } else { 0.0 };
        Ok(vec![d, eps_star, e, ratio])
    }))?;
    let mut table = Table::new(&["delta", "eps_star", "E", "ratio"]);
    for r in rows {
        table.push(r);
    }
    Ok(table)
}

#[derive(Debug, Clone)]
pub struct AsymptoticReport {
    pub nondegeneracy: NondegeneracyReport,
    pub stationary: MultiField,
    /// Rows at each check time, with `distance_to_stationary` filled in.
    pub timeseries: Vec<TimeseriesRow>,
    /// Adjacent-pair mask distances at each check time.
    pub mask_distances: Vec<(f64, BTreeMap<(usize, usize), f64>)>,
    pub final_distance: f64,
    pub final_snapshot: String,
    pub stationary_snapshot: String,
}

impl AsymptoticReport {
    pub fn mask_convergence_asserted(&self) -> bool {
        self.nondegeneracy.passed()
    }

    /// Largest adjacent mask distance at the final time.
    pub fn final_mask_distance(&self) -> f64 {
        self.mask_distances
            .last()
            .map_or(0.0, |(_, m)| m.values().copied().fold(0.0, f64::max))
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "final L2 distance to stationary: {:e}\nfinal max adjacent mask distance: {:e}\n",
            self.final_distance,
            self.final_mask_distance()
        );
        if self.mask_convergence_asserted() {
            s.push_str("nondegeneracy passed; mask convergence asserted\n");
        } else {
            s.push_str("nondegeneracy failed; mask convergence not asserted\n");
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_file(dir, "timeseries.csv", &timeseries_csv(&self.timeseries))?;
        write_file(dir, "snapshot_final.csv", &self.final_snapshot)?;
        write_file(dir, "snapshot_stationary.csv", &self.stationary_snapshot)?;
        write_file(dir, "asymptotic.txt", &self.summary())
    }
}

/// Marches to `t_final` and compares with the stationary solution every
/// `check_interval` units of time (and at the end).
pub fn run_asymptotic(cfg: &ProblemConfig, check_interval: f64) -> Result<AsymptoticReport> {
    let f_inf = cfg.forcing_limit();
    let nondegeneracy = nondegeneracy_check(&f_inf, cfg.tolerances.gap_tol)?;
    let stationary = stationary_solver(cfg).stationary(&f_inf, cfg.tolerances.oracle_tol, None)?.u;
    let tol_c = cfg.tolerances.tol_c;
    let masks_inf = coincidence_masks(&stationary, tol_c)?;
    let traj = penalized_trajectory(cfg)?;
    let every = ((check_interval / cfg.dt).round() as usize).max(1);
    let last = traj.states.len() - 1;
    let mut timeseries = Vec::new();
    let mut mask_distances = Vec::new();
    let ls = verify_ls(&traj, |t| cfg.forcing(t), &cfg.pflux(), 0.0)?.per_step;
    for (k, s) in traj.states.iter().enumerate() {
        if k % every != 0 && k != last {
            continue;
        }
        let mut row = timeseries_row(cfg, s.t, &s.u, if k == 0 { f64::NAN } else { ls[k - 1] })?;
        row.distance_to_stationary = Some(l2_dist_sq(&s.u, &stationary).sqrt());
        timeseries.push(row);
        let adjacent: BTreeMap<_, _> = mask_distance(&coincidence_masks(&s.u, tol_c)?, &masks_inf)?
            .into_iter()
            .filter(|((j, k), _)| k - j == 1)
            .collect();
        mask_distances.push((s.t, adjacent));
    }
    let u_t = &traj.last().u;
    Ok(AsymptoticReport {
        final_distance: l2_dist_sq(u_t, &stationary).sqrt(),
        final_snapshot: snapshot_csv(u_t, &coincidence_masks(u_t, tol_c)?)?,
        stationary_snapshot: snapshot_csv(&stationary, &masks_inf)?,
        nondegeneracy,
        stationary,
        timeseries,
        mask_distances,
    })
}
