//! Backward-Euler time stepping of the penalized N-membranes system and of
//! the penalized double-obstacle problem.
//!
//! Each step solves the coupled nonlinear system for all components with a
//! damped semismooth Newton method. The Jacobian (mass term, p-Laplacian
//! Jacobian, and the a.e. derivative of the penalty) is symmetric positive
//! definite, so the linear solves use preconditioned conjugate gradients.

use crate::error::{Error, Result};
use crate::grid::{GridSpec, MultiField, ScalarField};
use crate::linalg::{pcg, CsrMatrix};
use crate::p_laplacian::{discrete_p_values, PFluxParams, PLaplacian};
use crate::penalty::{theta_eps, theta_eps_slope, PenaltyParams};

pub const DEFAULT_MAX_NEWTON_ITERATIONS: usize = 50;
const LINEAR_REL_TOL: f64 = 1e-10;
const MAX_BACKTRACKS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolveReport {
    pub newton_iterations: usize,
    pub final_residual_norm: f64,
    /// Max over nodes and i of `(u_{i+1} - u_i)^+`.
    pub ordering_defect: f64,
    pub converged: bool,
    /// Number of times the step was redone with half the time step.
    pub retries: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionState {
    pub t: f64,
    pub u: MultiField,
    pub step_index: usize,
    pub last_report: SolveReport,
}

/// All accepted states of a run, in time order; `states[0]` is the initial data.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<EvolutionState>,
}

impl Trajectory {
    pub fn last(&self) -> &EvolutionState {
        self.states.last().expect("a trajectory holds at least the initial state")
    }

    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.t).collect()
    }

    /// The state whose time is closest to `t`.
    pub fn at_time(&self, t: f64) -> &EvolutionState {
        self.states
            .iter()
            .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
            .expect("non-empty trajectory")
    }
}

/// Damped Newton on `F(x) = 0` with backtracking on `|F|_2`.
///
/// Converged means `|F|_inf <= tol`.
fn damped_newton(
    mut x: Vec<f64>,
    tol: f64,
    max_iterations: usize,
    residual: impl Fn(&[f64]) -> Vec<f64>,
    jacobian: impl Fn(&[f64]) -> CsrMatrix,
) -> (Vec<f64>, SolveReport) {
    let norm2 = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>().sqrt();
    let norm_inf = |r: &[f64]| r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut r = residual(&x);
    let mut report = SolveReport::default();
    for it in 0..=max_iterations {
        report.newton_iterations = it;
        report.final_residual_norm = norm_inf(&r);
        if report.final_residual_norm <= tol {
            report.converged = true;
            return (x, report);
        }
        if it == max_iterations || !report.final_residual_norm.is_finite() {
            break;
        }
        let jac = jacobian(&x);
        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        let (dx, _) = pcg(&jac, &rhs, LINEAR_REL_TOL, 20 * x.len() + 100);
        let phi0 = norm2(&r);
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_BACKTRACKS {
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + alpha * d).collect();
            let r_trial = residual(&trial);
            let phi = norm2(&r_trial);
            if phi.is_finite() && phi <= (1.0 - 1e-4 * alpha) * phi0 {
                x = trial;
                r = r_trial;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            report.newton_iterations = it + 1;
            break;
        }
    }
    report.converged = false;
    (x, report)
}

/// Reusable solver for one grid and flux law.
#[derive(Debug, Clone)]
pub struct PenalizedStepper {
    op: PLaplacian,
    pflux: PFluxParams,
    pub max_iterations: usize,
}

impl PenalizedStepper {
    pub fn new(grid: GridSpec, pflux: PFluxParams) -> Self {
        PenalizedStepper {
            op: PLaplacian::new(grid),
            pflux,
            max_iterations: DEFAULT_MAX_NEWTON_ITERATIONS,
        }
    }

    pub fn operator(&self) -> &PLaplacian {
        &self.op
    }

    pub fn pflux(&self) -> &PFluxParams {
        &self.pflux
    }

    fn residual(&self, x: &[f64], old: &[f64], dt: f64, f: &[f64], params: &PenaltyParams, n: usize) -> Vec<f64> {
        let len = self.op.grid().len();
        let eps = params.epsilon();
        let mut r = vec![0.0; n * len];
        for i in 0..n {
            let range = i * len..(i + 1) * len;
            let p = discrete_p_values(&self.op, &x[range.clone()], &old[range.clone()], dt, &self.pflux);
            for (k, v) in p.into_iter().enumerate() {
                r[i * len + k] = v - f[i * len + k];
            }
        }
        for i in 0..n.saturating_sub(1) {
            for node in 0..len {
                let s = x[i * len + node] - x[(i + 1) * len + node];
                let b = params.xi_at(i + 1, node) * theta_eps(s, eps);
                r[i * len + node] += b;
                r[(i + 1) * len + node] -= b;
            }
        }
        r
    }

    fn jacobian(&self, x: &[f64], dt: f64, params: &PenaltyParams, n: usize) -> CsrMatrix {
        let len = self.op.grid().len();
        let eps = params.epsilon();
        let mut t = Vec::new();
        for i in 0..n {
            self.op
                .jacobian_triplets(&x[i * len..(i + 1) * len], &self.pflux, i * len, &mut t);
            for node in 0..len {
                t.push((i * len + node, i * len + node, 1.0 / dt));
            }
        }
        for i in 0..n.saturating_sub(1) {
            for node in 0..len {
                let (a, b) = (i * len + node, (i + 1) * len + node);
                let d = params.xi_at(i + 1, node) * theta_eps_slope(x[a] - x[b], eps);
                if d != 0.0 {
                    t.push((a, a, d));
                    t.push((b, b, d));
                    t.push((a, b, -d));
                    t.push((b, a, -d));
                }
            }
        }
        CsrMatrix::from_triplets(n * len, t)
    }

    /// One implicit step of the penalized system, without the retry policy.
    pub fn solve_step(
        &self,
        u_old: &MultiField,
        dt: f64,
        f: &MultiField,
        params: &PenaltyParams,
        tol: f64,
    ) -> (MultiField, SolveReport) {
        let n = u_old.n_components();
        let grid = *u_old.grid();
        let old = u_old.to_flat();
        let forcing = f.to_flat();
        let (x, mut report) = damped_newton(
            old.clone(),
            tol,
            self.max_iterations,
            |x| self.residual(x, &old, dt, &forcing, params, n),
            |x| self.jacobian(x, dt, params, n),
        );
        let u = MultiField::from_flat(grid, n, &x);
        report.ordering_defect = u.ordering_defect();
        (u, report)
    }

    /// Advances `state` by `dt`; on Newton failure redoes the step as two
    /// half steps once before giving up.
    pub fn step(
        &self,
        state: &EvolutionState,
        dt: f64,
        f: &MultiField,
        params: &PenaltyParams,
        tol: f64,
    ) -> Result<EvolutionState> {
        check_step_inputs(state, dt, f, tol)?;
        let (u, report) = self.solve_step(&state.u, dt, f, params, tol);
        if report.converged {
            return Ok(EvolutionState {
                t: state.t + dt,
                u,
                step_index: state.step_index + 1,
                last_report: report,
            });
        }
        let half = 0.5 * dt;
        let (mid, r1) = self.solve_step(&state.u, half, f, params, tol);
        if !r1.converged {
            return Err(Error::NewtonFailure {
                time: state.t + half,
                report: SolveReport { retries: 1, ..r1 },
            });
        }
        let (u, r2) = self.solve_step(&mid, half, f, params, tol);
        let report = SolveReport {
            newton_iterations: r1.newton_iterations + r2.newton_iterations,
            retries: 1,
            ..r2
        };
        if !r2.converged {
            return Err(Error::NewtonFailure {
                time: state.t + dt,
                report,
            });
        }
        Ok(EvolutionState {
            t: state.t + dt,
            u,
            step_index: state.step_index + 1,
            last_report: report,
        })
    }
}

fn check_step_inputs(state: &EvolutionState, dt: f64, f: &MultiField, tol: f64) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tol must be positive, got {tol}")));
    }
    state.u.ensure_compatible(f)
}

/// One backward-Euler step of the penalized system.
pub fn step_penalized(
    state: &EvolutionState,
    dt: f64,
    f_fields: &MultiField,
    params: &PenaltyParams,
    pflux: &PFluxParams,
    tol: f64,
) -> Result<EvolutionState> {
    PenalizedStepper::new(*state.u.grid(), *pflux).step(state, dt, f_fields, params, tol)
}

/// Inputs of a penalized evolution run.
#[derive(Debug, Clone)]
pub struct EvolutionSetup {
    pub pflux: PFluxParams,
    pub epsilon: f64,
    pub dt: f64,
    pub t_final: f64,
    pub newton_tol: f64,
}

/// Number of steps needed to reach `t_final`; the last step may be shorter.
pub(crate) fn step_times(dt: f64, t_final: f64) -> Vec<f64> {
    let n = (t_final / dt - 1e-9).ceil().max(1.0) as usize;
    (1..=n).map(|k| (k as f64 * dt).min(t_final)).collect()
}

/// Marches the penalized system from `initial` to `t_final`, recomputing the
/// penalty coefficients from the forcing at each new time level.
pub fn evolve_penalized(
    setup: &EvolutionSetup,
    initial: MultiField,
    forcing: impl Fn(f64) -> MultiField,
) -> Result<Trajectory> {
    if !(setup.t_final > 0.0) {
        return Err(Error::InvalidParameter("t_final must be positive".into()));
    }
    let stepper = PenalizedStepper::new(*initial.grid(), setup.pflux);
    let mut states = vec![EvolutionState {
        t: 0.0,
        u: initial,
        step_index: 0,
        last_report: SolveReport {
            converged: true,
            ..SolveReport::default()
        },
    }];
    for t in step_times(setup.dt, setup.t_final) {
        let current = states.last().unwrap();
        let f = forcing(t);
        let params = PenaltyParams::from_forcing(setup.epsilon, &f)?;
        let next = stepper.step(current, t - current.t, &f, &params, setup.newton_tol)?;
        states.push(EvolutionState { t, ..next });
    }
    Ok(Trajectory { states })
}

/// An obstacle of the double-obstacle problem: either absent (infinite) or
/// a field given at the previous and current time level.
#[derive(Debug, Clone, PartialEq)]
pub enum Obstacle {
    Unbounded,
    Field { previous: ScalarField, current: ScalarField },
}

impl Obstacle {
    pub fn stationary(field: ScalarField) -> Self {
        Obstacle::Field {
            previous: field.clone(),
            current: field,
        }
    }

    pub fn current(&self) -> Option<&ScalarField> {
        match self {
            Obstacle::Unbounded => None,
            Obstacle::Field { current, .. } => Some(current),
        }
    }

    /// Discrete `P psi` of the obstacle over the step.
    pub fn discrete_p(&self, op: &PLaplacian, dt: f64, pflux: &PFluxParams) -> Option<Vec<f64>> {
        match self {
            Obstacle::Unbounded => None,
            Obstacle::Field { previous, current } => Some(discrete_p_values(
                op,
                current.values(),
                previous.values(),
                dt,
                pflux,
            )),
        }
    }
}

/// One implicit step of
/// `Pw + zeta_2 theta(w - psi_2) - zeta_1 theta(psi_1 - w) = phi`
/// with `zeta_2 = (P psi_2 - phi)^+` and `zeta_1 = (P psi_1 - phi)^-`.
#[allow(clippy::too_many_arguments)]
pub fn step_double_obstacle(
    w: &ScalarField,
    upper: &Obstacle,
    lower: &Obstacle,
    phi: &ScalarField,
    dt: f64,
    epsilon: f64,
    pflux: &PFluxParams,
    tol: f64,
) -> Result<(ScalarField, SolveReport)> {
    if !(dt > 0.0 && epsilon > 0.0 && tol > 0.0) {
        return Err(Error::InvalidParameter("dt, epsilon and tol must be positive".into()));
    }
    w.ensure_same_grid(phi)?;
    for o in [upper, lower] {
        if let Some(c) = o.current() {
            w.ensure_same_grid(c)?;
        }
    }
    if let (Some(u), Some(l)) = (upper.current(), lower.current()) {
        if u.values().iter().zip(l.values()).any(|(a, b)| a < b) {
            return Err(Error::InvalidParameter("upper obstacle below lower obstacle".into()));
        }
    }
    let grid = *w.grid();
    let op = PLaplacian::new(grid);
    let len = grid.len();
    let phi_v = phi.values();
    let zeta1: Vec<f64> = upper
        .discrete_p(&op, dt, pflux)
        .map(|p| p.iter().zip(phi_v).map(|(p, f)| (f - p).max(0.0)).collect())
        .unwrap_or_else(|| vec![0.0; len]);
    let zeta2: Vec<f64> = lower
        .discrete_p(&op, dt, pflux)
        .map(|p| p.iter().zip(phi_v).map(|(p, f)| (p - f).max(0.0)).collect())
        .unwrap_or_else(|| vec![0.0; len]);
    let psi1 = upper.current().map(|f| f.values());
    let psi2 = lower.current().map(|f| f.values());
    let old = w.values().to_vec();

    let residual = |x: &[f64]| -> Vec<f64> {
        let mut r = discrete_p_values(&op, x, &old, dt, pflux);
        for k in 0..len {
            r[k] -= phi_v[k];
            if let Some(p2) = psi2 {
                r[k] += zeta2[k] * theta_eps(x[k] - p2[k], epsilon);
            }
            if let Some(p1) = psi1 {
                r[k] -= zeta1[k] * theta_eps(p1[k] - x[k], epsilon);
            }
        }
        r
    };
    let jacobian = |x: &[f64]| -> CsrMatrix {
        let mut t = Vec::new();
        op.jacobian_triplets(x, pflux, 0, &mut t);
        for k in 0..len {
            let mut d = 1.0 / dt;
            if let Some(p2) = psi2 {
                d += zeta2[k] * theta_eps_slope(x[k] - p2[k], epsilon);
            }
            if let Some(p1) = psi1 {
                d += zeta1[k] * theta_eps_slope(p1[k] - x[k], epsilon);
            }
            t.push((k, k, d));
        }
        CsrMatrix::from_triplets(len, t)
    };
    let (x, report) = damped_newton(old.clone(), tol, DEFAULT_MAX_NEWTON_ITERATIONS, residual, jacobian);
    if !report.converged {
        return Err(Error::NewtonFailure { time: dt, report });
    }
    Ok((ScalarField::from_values(grid, x)?, report))
}
