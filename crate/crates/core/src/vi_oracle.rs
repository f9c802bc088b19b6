//! Reference solver for the N-membranes variational inequality by projected
//! nonlinear Gauss-Seidel.
//!
//! The implicit step (and the stationary problem) minimizes a convex energy
//! over the set of pointwise ordered tuples. That set is a product of one
//! chain cone per node, so block coordinate descent node by node converges
//! to the constrained minimizer. The nodal block problem is separable across
//! components with a chain constraint and is solved exactly by
//! pool-adjacent-violators with pooled scalar root solves.

use crate::error::{Error, Result};
use crate::evolution::{step_times, EvolutionState, SolveReport, Trajectory};
use crate::grid::{pool_adjacent_violators, project_ordered, GridSpec, MultiField};
use crate::p_laplacian::{PFluxParams, PLaplacian};

const LOCAL_TOL: f64 = 1e-12;
const SWEEPS_PER_COMPONENT: usize = 10_000;

/// Root of a nondecreasing scalar function by Newton with a bisection guard.
///
/// `g` returns the value and the derivative. `bracket` may be infinite.
fn monotone_root(g: impl Fn(f64) -> (f64, f64), x0: f64, bracket: (f64, f64)) -> f64 {
    let (mut lo, mut hi) = bracket;
    let mut x = x0.clamp(lo, hi);
    for _ in 0..200 {
        let (val, der) = g(x);
        if val == 0.0 {
            return x;
        }
        if val < 0.0 {
            lo = lo.max(x);
        } else {
            hi = hi.min(x);
        }
        let mut next = if der > 0.0 { x - val / der } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = match (lo.is_finite(), hi.is_finite()) {
                (true, true) => 0.5 * (lo + hi),
                (true, false) => lo + 2.0 * (lo - x).abs().max(1.0),
                (false, true) => hi - 2.0 * (hi - x).abs().max(1.0),
                (false, false) => x,
            };
        }
        if (next - x).abs() <= LOCAL_TOL * x.abs().max(1.0) {
            return next;
        }
        if lo.is_finite() && hi.is_finite() && (hi - lo) <= LOCAL_TOL * lo.abs().max(1.0) {
            return 0.5 * (lo + hi);
        }
        x = next;
    }
    x
}

/// The convex problem minimized node by node.
struct NodalProblem<'a> {
    op: &'a PLaplacian,
    pflux: &'a PFluxParams,
    /// `(u_old, 1/dt)` for an implicit step, `None` for the stationary problem.
    mass: Option<(&'a [f64], f64)>,
    f: &'a [f64],
    n: usize,
}

impl NodalProblem<'_> {
    fn len(&self) -> usize {
        self.op.grid().len()
    }

    /// Derivative and curvature of the energy in `u_{i,node}` at value `v`.
    fn derivatives(&self, u: &[f64], i: usize, node: usize, v: f64) -> (f64, f64) {
        let len = self.len();
        let m = self.op.grid().cell_measure();
        let ui = &u[i * len..(i + 1) * len];
        let (mut d1, mut d2) = self.op.nodal_derivatives(ui, self.pflux, node, v);
        d1 -= m * self.f[i * len + node];
        if let Some((old, inv_dt)) = self.mass {
            d1 += m * inv_dt * (v - old[i * len + node]);
            d2 += m * inv_dt;
        }
        (d1, d2)
    }

    fn energy(&self, u: &[f64]) -> f64 {
        let len = self.len();
        let m = self.op.grid().cell_measure();
        let mut e = 0.0;
        for i in 0..self.n {
            let ui = &u[i * len..(i + 1) * len];
            e += self.op.energy(ui, self.pflux);
            for k in 0..len {
                let idx = i * len + k;
                e -= m * self.f[idx] * u[idx];
                if let Some((old, inv_dt)) = self.mass {
                    e += 0.5 * m * inv_dt * (u[idx] - old[idx]).powi(2);
                }
            }
        }
        e
    }

    /// Exact minimizer of the energy over the ordered values at `node`.
    fn solve_node(&self, u: &[f64], node: usize) -> Vec<f64> {
        let len = self.len();
        let current: Vec<f64> = (0..self.n).map(|i| u[i * len + node]).collect();
        let free: Vec<f64> = (0..self.n)
            .map(|i| {
                monotone_root(
                    |v| self.derivatives(u, i, node, v),
                    current[i],
                    (f64::NEG_INFINITY, f64::INFINITY),
                )
            })
            .collect();
        if self.n == 1 {
            return free;
        }
        pool_adjacent_violators(&free, |start, end| {
            let block = &free[start..end];
            let lo = block.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = block.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum = |v: f64| {
                (start..end).fold((0.0, 0.0), |(a, b), i| {
                    let (d1, d2) = self.derivatives(u, i, node, v);
                    (a + d1, b + d2)
                })
            };
            monotone_root(sum, 0.5 * (lo + hi), (lo, hi))
        })
    }
}

#[derive(Debug, Clone)]
pub struct ProjectedSolver {
    op: PLaplacian,
    pflux: PFluxParams,
    pub max_sweeps: Option<usize>,
    /// Over-relaxation factor; 1 is plain projected Gauss-Seidel.
    pub relaxation: f64,
}

/// Outcome of a projected solve.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedSolution {
    pub u: MultiField,
    pub sweeps: usize,
    pub last_update: f64,
}

impl ProjectedSolver {
    pub fn new(grid: GridSpec, pflux: PFluxParams) -> Self {
        ProjectedSolver {
            op: PLaplacian::new(grid),
            pflux,
            max_sweeps: None,
            relaxation: 1.0,
        }
    }

    /// Optimal SOR factor of the p = 2 stiffness matrix on this grid.
    pub fn optimal_relaxation(grid: &GridSpec) -> f64 {
        let pi = std::f64::consts::PI;
        let rho = if grid.dimension() == 1 {
            (pi / (grid.nx() + 1) as f64).cos()
        } else {
            let (wx, wy) = (1.0 / grid.hx().powi(2), 1.0 / grid.hy().powi(2));
            (wx * (pi / (grid.nx() + 1) as f64).cos() + wy * (pi / (grid.ny() + 1) as f64).cos()) / (wx + wy)
        };
        2.0 / (1.0 + (1.0 - rho * rho).sqrt())
    }

    fn sweep(&self, problem: &NodalProblem, u: &mut [f64]) -> f64 {
        let len = problem.len();
        let n = problem.n;
        let omega = self.relaxation;
        let mut max_update: f64 = 0.0;
        for node in 0..len {
            let mut target = problem.solve_node(u, node);
            if omega != 1.0 {
                for (i, t) in target.iter_mut().enumerate() {
                    let old = u[i * len + node];
                    *t = old + omega * (*t - old);
                }
                if n > 1 {
                    target = project_ordered(&target);
                }
            }
            for (i, t) in target.into_iter().enumerate() {
                max_update = max_update.max((t - u[i * len + node]).abs());
                u[i * len + node] = t;
            }
        }
        max_update
    }

    fn run(&self, problem: &NodalProblem, mut u: Vec<f64>, tol: f64) -> Result<(Vec<f64>, usize, f64)> {
        let max_sweeps = self.max_sweeps.unwrap_or(SWEEPS_PER_COMPONENT * problem.n);
        let mut last = f64::INFINITY;
        for sweep in 1..=max_sweeps {
            last = self.sweep(problem, &mut u);
            if !last.is_finite() {
                break;
            }
            if last <= tol {
                return Ok((u, sweep, last));
            }
        }
        Err(Error::ProjectionFailure {
            sweeps: max_sweeps,
            last_update: last,
        })
    }

    /// One backward-Euler step of the variational inequality.
    pub fn step(&self, u_old: &MultiField, dt: f64, f: &MultiField, tol: f64) -> Result<ProjectedSolution> {
        if !(dt > 0.0 && tol > 0.0) {
            return Err(Error::InvalidParameter("dt and tol must be positive".into()));
        }
        u_old.ensure_compatible(f)?;
        if !u_old.is_ordered() {
            return Err(Error::InvalidParameter("the previous state must be ordered".into()));
        }
        let old = u_old.to_flat();
        let forcing = f.to_flat();
        let problem = NodalProblem {
            op: &self.op,
            pflux: &self.pflux,
            mass: Some((&old, 1.0 / dt)),
            f: &forcing,
            n: u_old.n_components(),
        };
        let (u, sweeps, last_update) = self.run(&problem, old.clone(), tol)?;
        Ok(ProjectedSolution {
            u: MultiField::from_flat(*u_old.grid(), u_old.n_components(), &u),
            sweeps,
            last_update,
        })
    }

    /// The stationary problem: minimize `sum_i J(u_i) - (f_i, u_i)` over ordered `u`.
    pub fn stationary(&self, f: &MultiField, tol: f64, initial: Option<&MultiField>) -> Result<ProjectedSolution> {
        if !(tol > 0.0) {
            return Err(Error::InvalidParameter("tol must be positive".into()));
        }
        let forcing = f.to_flat();
        let start = match initial {
            Some(u0) => {
                u0.ensure_compatible(f)?;
                u0.project_ordered().to_flat()
            }
            None => vec![0.0; forcing.len()],
        };
        let problem = NodalProblem {
            op: &self.op,
            pflux: &self.pflux,
            mass: None,
            f: &forcing,
            n: f.n_components(),
        };
        let (u, sweeps, last_update) = self.run(&problem, start, tol)?;
        Ok(ProjectedSolution {
            u: MultiField::from_flat(*f.grid(), f.n_components(), &u),
            sweeps,
            last_update,
        })
    }

    /// Energy of the implicit-step functional; exposed for monotonicity checks.
    pub fn step_energy(&self, u: &MultiField, u_old: &MultiField, dt: f64, f: &MultiField) -> f64 {
        let old = u_old.to_flat();
        let forcing = f.to_flat();
        let problem = NodalProblem {
            op: &self.op,
            pflux: &self.pflux,
            mass: Some((&old, 1.0 / dt)),
            f: &forcing,
            n: u.n_components(),
        };
        problem.energy(&u.to_flat())
    }

    /// Runs a single sweep of the implicit-step iteration in place.
    pub fn step_sweep(&self, u: &mut MultiField, u_old: &MultiField, dt: f64, f: &MultiField) -> f64 {
        let old = u_old.to_flat();
        let forcing = f.to_flat();
        let problem = NodalProblem {
            op: &self.op,
            pflux: &self.pflux,
            mass: Some((&old, 1.0 / dt)),
            f: &forcing,
            n: u.n_components(),
        };
        let mut flat = u.to_flat();
        let upd = self.sweep(&problem, &mut flat);
        *u = MultiField::from_flat(*u.grid(), u.n_components(), &flat);
        upd
    }
}

/// One implicit step of the variational inequality by projected Gauss-Seidel.
pub fn step_projected(
    u_old: &MultiField,
    dt: f64,
    f_fields: &MultiField,
    pflux: &PFluxParams,
    tol: f64,
) -> Result<MultiField> {
    Ok(ProjectedSolver::new(*u_old.grid(), *pflux)
        .step(u_old, dt, f_fields, tol)?
        .u)
}

/// The stationary N-membranes problem. For p = 2 the sweeps are
/// over-relaxed with the optimal SOR factor of the Laplacian.
pub fn solve_stationary(f_inf: &MultiField, pflux: &PFluxParams, tol: f64) -> Result<MultiField> {
    let mut solver = ProjectedSolver::new(*f_inf.grid(), *pflux);
    if pflux.p() == 2.0 {
        solver.relaxation = ProjectedSolver::optimal_relaxation(f_inf.grid());
    }
    Ok(solver.stationary(f_inf, tol, None)?.u)
}

/// Marches the variational inequality from ordered `initial` to `t_final`.
pub fn evolve_projected(
    pflux: &PFluxParams,
    dt: f64,
    t_final: f64,
    tol: f64,
    initial: MultiField,
    forcing: impl Fn(f64) -> MultiField,
) -> Result<Trajectory> {
    let solver = ProjectedSolver::new(*initial.grid(), *pflux);
    let initial = initial.project_ordered();
    let mut states = vec![EvolutionState {
        t: 0.0,
        u: initial,
        step_index: 0,
        last_report: SolveReport {
            converged: true,
            ..SolveReport::default()
        },
    }];
    for t in step_times(dt, t_final) {
        let current = states.last().unwrap();
        let sol = solver.step(&current.u, t - current.t, &forcing(t), tol)?;
        let report = SolveReport {
            newton_iterations: sol.sweeps,
            final_residual_norm: sol.last_update,
            ordering_defect: sol.u.ordering_defect(),
            converged: true,
            retries: 0,
        };
        states.push(EvolutionState {
            t,
            u: sol.u,
            step_index: current.step_index + 1,
            last_report: report,
        });
    }
    Ok(Trajectory { states })
}
