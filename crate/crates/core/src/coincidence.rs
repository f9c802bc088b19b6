//! Coincidence sets, the explicit reaction term of the N-system,
//! Lewy-Stampacchia bounds, nondegeneracy and contact conditions.
//!
//! Component and pair indices in this module are 1-based, matching the
//! usual `u_1 >= ... >= u_N` labelling. Internally fields stay 0-based.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::evolution::{Obstacle, Trajectory};
use crate::grid::{GridSpec, MultiField, ScalarField};
use crate::p_laplacian::{discrete_p_values, PFluxParams, PLaplacian};

/// Characteristic functions of `I_{j,k} = {u_j = ... = u_k}` for all `j < k`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoincidenceMaskSet {
    grid: GridSpec,
    n: usize,
    tol_c: f64,
    masks: BTreeMap<(usize, usize), Vec<bool>>,
}

impl CoincidenceMaskSet {
    /// Builds every mask from the adjacent ones, `chi_{j,k} = chi_{j,j+1} ... chi_{k-1,k}`.
    pub fn from_adjacent(grid: GridSpec, tol_c: f64, adjacent: Vec<Vec<bool>>) -> Result<Self> {
        let n = adjacent.len() + 1;
        if adjacent.iter().any(|m| m.len() != grid.len()) {
            return Err(Error::GridMismatch("mask length differs from the grid".into()));
        }
        let mut masks = BTreeMap::new();
        for j in 1..n {
            let mut acc = adjacent[j - 1].clone();
            masks.insert((j, j + 1), acc.clone());
            for k in j + 2..=n {
                for (a, b) in acc.iter_mut().zip(&adjacent[k - 2]) {
                    *a = *a && *b;
                }
                masks.insert((j, k), acc.clone());
            }
        }
        Ok(CoincidenceMaskSet { grid, n, tol_c, masks })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn n_components(&self) -> usize {
        self.n
    }

    pub fn tol_c(&self) -> f64 {
        self.tol_c
    }

    pub fn mask(&self, j: usize, k: usize) -> Option<&[bool]> {
        self.masks.get(&(j, k)).map(Vec::as_slice)
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.masks.keys().copied()
    }

    /// Measure of `I_{j,k}` by cell counting.
    pub fn area(&self, j: usize, k: usize) -> f64 {
        self.mask(j, k)
            .map_or(0.0, |m| m.iter().filter(|&&b| b).count() as f64 * self.grid.cell_measure())
    }

    /// Whether `node` is coincident for `(j, k)` but some neighbour is not, or vice versa.
    fn is_transition(&self, node: usize) -> bool {
        self.masks
            .values()
            .any(|m| self.grid.neighbours(node).into_iter().any(|nb| m[nb] != m[node]))
    }
}

/// Adjacent masks `|u_m - u_{m+1}| <= tol_c`, non-adjacent ones by conjunction.
pub fn coincidence_masks(u: &MultiField, tol_c: f64) -> Result<CoincidenceMaskSet> {
    if !(tol_c >= 0.0) {
        return Err(Error::InvalidParameter(format!("tol_c must be nonnegative, got {tol_c}")));
    }
    let adjacent = u
        .components()
        .windows(2)
        .map(|pair| {
            pair[0]
                .values()
                .iter()
                .zip(pair[1].values())
                .map(|(a, b)| (a - b).abs() <= tol_c)
                .collect()
        })
        .collect();
    CoincidenceMaskSet::from_adjacent(*u.grid(), tol_c, adjacent)
}

fn check_range(j: usize, k: usize, n: usize) -> Result<()> {
    if j < 1 || j > k || k > n {
        return Err(Error::IndexOutOfRange(format!(
            "need 1 <= j <= k <= N, got j = {j}, k = {k}, N = {n}"
        )));
    }
    Ok(())
}

/// `<f>_{j,k} = (f_j + ... + f_k) / (k - j + 1)`.
pub fn average_f(f: &[f64], j: usize, k: usize) -> Result<f64> {
    check_range(j, k, f.len())?;
    Ok(f[j - 1..k].iter().sum::<f64>() / (k - j + 1) as f64)
}

/// Coefficient of `chi_{j,k}` in the equation for `u_i`.
pub fn b_coefficient(f: &[f64], i: usize, j: usize, k: usize) -> Result<f64> {
    check_range(j, k, f.len())?;
    if j == k || i < j || i > k {
        return Err(Error::IndexOutOfRange(format!(
            "need j <= i <= k and j < k, got i = {i}, j = {j}, k = {k}"
        )));
    }
    let avg = |a, b| average_f(f, a, b);
    if i == j {
        Ok(avg(j, k)? - avg(j, k - 1)?)
    } else if i == k {
        Ok(avg(j, k)? - avg(j + 1, k)?)
    } else {
        let width = (k - j) as f64;
        Ok(2.0 / (width * (width + 1.0)) * (avg(j + 1, k - 1)? - 0.5 * (f[j - 1] + f[k - 1])))
    }
}

/// Pointwise reaction `R_i = sum_{j <= i <= k} b_i^{j,k}[f] chi_{j,k}`.
pub fn reconstruct_reaction(f: &MultiField, masks: &CoincidenceMaskSet) -> Result<MultiField> {
    if f.n_components() != masks.n_components() || f.grid() != masks.grid() {
        return Err(Error::GridMismatch("forcing and masks disagree".into()));
    }
    let n = f.n_components();
    let mut out = MultiField::zeros(*f.grid(), n);
    for node in 0..f.grid().len() {
        let fp = f.at(node);
        let mut r = vec![0.0; n];
        for (j, k) in masks.pairs() {
            if masks.mask(j, k).unwrap()[node] {
                for (i, ri) in r.iter_mut().enumerate().take(k).skip(j - 1) {
                    *ri += b_coefficient(&fp, i + 1, j, k)?;
                }
            }
        }
        out.set_at(node, &r);
    }
    Ok(out)
}

/// `(min_{j <= i} f_j, max_{j >= i} f_j)`.
pub fn ls_bounds(f: &[f64], i: usize) -> Result<(f64, f64)> {
    check_range(i, i, f.len())?;
    let lower = f[..i].iter().copied().fold(f64::INFINITY, f64::min);
    let upper = f[i - 1..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((lower, upper))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsReport {
    /// Largest `max(lower - Pu_i, Pu_i - upper)` seen, before subtracting slack.
    pub max_violation: f64,
    pub slack: f64,
    /// `(time, node, component)` of the worst violation (component 1-based).
    pub worst: Option<(f64, usize, usize)>,
    /// Worst violation per step, aligned with `trajectory.states[1..]`.
    pub per_step: Vec<f64>,
}

impl LsReport {
    pub fn excess(&self) -> f64 {
        self.max_violation - self.slack
    }

    pub fn passed(&self) -> bool {
        self.excess() <= 0.0
    }
}

/// Discrete `P u_i` for every step of a trajectory.
pub(crate) fn discrete_p_series(traj: &Trajectory, pflux: &PFluxParams) -> Vec<MultiField> {
    let grid = *traj.states[0].u.grid();
    let op = PLaplacian::new(grid);
    traj.states
        .windows(2)
        .map(|w| {
            let dt = w[1].t - w[0].t;
            let comps = w[1]
                .u
                .components()
                .iter()
                .zip(w[0].u.components())
                .map(|(new, old)| {
                    ScalarField::from_values(grid, discrete_p_values(&op, new.values(), old.values(), dt, pflux))
                })
                .collect::<Result<Vec<_>>>()
                .expect("grid-sized values");
            MultiField::new(comps).expect("shared grid")
        })
        .collect()
}

/// Checks `min_{j<=i} f_j <= P u_i <= max_{j>=i} f_j` at every step.
pub fn verify_ls(
    traj: &Trajectory,
    forcing: impl Fn(f64) -> MultiField,
    pflux: &PFluxParams,
    slack: f64,
) -> Result<LsReport> {
    if traj.states.len() < 2 {
        return Err(Error::InvalidParameter("need at least two states".into()));
    }
    let ps = discrete_p_series(traj, pflux);
    let mut report = LsReport {
        max_violation: f64::NEG_INFINITY,
        slack,
        worst: None,
        per_step: Vec::with_capacity(ps.len()),
    };
    for (state, p) in traj.states[1..].iter().zip(&ps) {
        let f = forcing(state.t);
        let mut step_worst = f64::NEG_INFINITY;
        for node in 0..f.grid().len() {
            let fp = f.at(node);
            for i in 1..=fp.len() {
                let (lo, hi) = ls_bounds(&fp, i)?;
                let pu = p.component(i - 1).values()[node];
                let v = (lo - pu).max(pu - hi);
                step_worst = step_worst.max(v);
                if v > report.max_violation {
                    report.max_violation = v;
                    report.worst = Some((state.t, node, i));
                }
            }
        }
        report.per_step.push(step_worst);
    }
    Ok(report)
}

/// Per-step L1 norm of `P u - f - R` away from mask transitions.
///
/// A node is skipped at a step when any coincidence mask changes between
/// the node and a spatial neighbour, or between the previous and the
/// current step at that node.
pub fn system_identity_residual(
    traj: &Trajectory,
    forcing: impl Fn(f64) -> MultiField,
    pflux: &PFluxParams,
    tol_c: f64,
) -> Result<Vec<f64>> {
    let ps = discrete_p_series(traj, pflux);
    let grid = *traj.states[0].u.grid();
    let m = grid.cell_measure();
    let mut prev_masks = coincidence_masks(&traj.states[0].u, tol_c)?;
    let mut out = Vec::with_capacity(ps.len());
    for (state, p) in traj.states[1..].iter().zip(&ps) {
        let f = forcing(state.t);
        let masks = coincidence_masks(&state.u, tol_c)?;
        let r = reconstruct_reaction(&f, &masks)?;
        let mut total = 0.0;
        for node in 0..grid.len() {
            let changed = masks
                .masks
                .iter()
                .any(|(key, mask)| prev_masks.masks[key][node] != mask[node]);
            if changed || masks.is_transition(node) {
                continue;
            }
            for i in 0..f.n_components() {
                let res = p.component(i).values()[node] - f.component(i).values()[node] - r.component(i).values()[node];
                total += res.abs() * m;
            }
        }
        out.push(total);
        prev_masks = masks;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NondegeneracyReport {
    /// Measure of `{|<f>_{i,j} - <f>_{j+1,k}| <= gap_tol}` for each triple `i <= j < k`.
    pub triples: Vec<((usize, usize, usize), f64)>,
}

impl NondegeneracyReport {
    pub fn passed(&self) -> bool {
        self.triples.iter().all(|&(_, m)| m == 0.0)
    }

    pub fn violations(&self) -> impl Iterator<Item = &((usize, usize, usize), f64)> {
        self.triples.iter().filter(|(_, m)| *m > 0.0)
    }
}

/// Checks `<f>_{i,j} != <f>_{j+1,k}` for all `i <= j < k`.
pub fn nondegeneracy_check(f: &MultiField, gap_tol: f64) -> Result<NondegeneracyReport> {
    if !(gap_tol >= 0.0) {
        return Err(Error::InvalidParameter(format!("gap_tol must be nonnegative, got {gap_tol}")));
    }
    let n = f.n_components();
    let m = f.grid().cell_measure();
    let mut triples = Vec::new();
    for i in 1..=n {
        for j in i..n {
            for k in j + 1..=n {
                let mut count = 0usize;
                for node in 0..f.grid().len() {
                    let fp = f.at(node);
                    if (average_f(&fp, i, j)? - average_f(&fp, j + 1, k)?).abs() <= gap_tol {
                        count += 1;
                    }
                }
                triples.push(((i, j, k), count as f64 * m));
            }
        }
    }
    Ok(NondegeneracyReport { triples })
}

/// Measure of the symmetric difference of each pair of masks.
pub fn mask_distance(a: &CoincidenceMaskSet, b: &CoincidenceMaskSet) -> Result<BTreeMap<(usize, usize), f64>> {
    if a.grid != b.grid || a.n != b.n {
        return Err(Error::GridMismatch("mask sets live on different grids".into()));
    }
    let m = a.grid.cell_measure();
    Ok(a.masks
        .iter()
        .map(|(key, ma)| {
            let mb = &b.masks[key];
            let diff = ma.iter().zip(mb).filter(|(x, y)| x != y).count();
            (*key, diff as f64 * m)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObstacleSide {
    /// `psi_1` from above: contact requires `P psi_1 <= phi`.
    Upper,
    /// `psi_2` from below: contact requires `P psi_2 >= phi`.
    Lower,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactReport {
    pub contact_measure: f64,
    /// Measure of contact cells where the sign condition fails by more than slack.
    pub violation_measure: f64,
}

/// Necessary contact conditions `{w = psi_1} in {P psi_1 <= phi}` and
/// `{w = psi_2} in {P psi_2 >= phi}`; contact means `|w - psi| <= tol_c`.
#[allow(clippy::too_many_arguments)]
pub fn contact_condition_check(
    w: &ScalarField,
    psi: &Obstacle,
    phi: &ScalarField,
    side: ObstacleSide,
    dt: f64,
    pflux: &PFluxParams,
    slack: f64,
    tol_c: f64,
) -> Result<ContactReport> {
    w.ensure_same_grid(phi)?;
    let Some(current) = psi.current() else {
        return Ok(ContactReport {
            contact_measure: 0.0,
            violation_measure: 0.0,
        });
    };
    w.ensure_same_grid(current)?;
    let grid = *w.grid();
    let op = PLaplacian::new(grid);
    let p_psi = psi.discrete_p(&op, dt, pflux).expect("field obstacle");
    let m = grid.cell_measure();
    let mut report = ContactReport {
        contact_measure: 0.0,
        violation_measure: 0.0,
    };
    for node in 0..grid.len() {
        if (w.values()[node] - current.values()[node]).abs() > tol_c {
            continue;
        }
        report.contact_measure += m;
        let gap = p_psi[node] - phi.values()[node];
        let violated = match side {
            ObstacleSide::Upper => gap > slack,
            ObstacleSide::Lower => gap < -slack,
        };
        if violated {
            report.violation_measure += m;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> GridSpec {
        GridSpec::new_1d(n, 1.0).unwrap()
    }

    #[test]
    fn masks_by_threshold_and_conjunction() {
        let g = grid(3);
        let u = MultiField::new(vec![
            ScalarField::from_values(g, vec![1.0, 2.0, 0.0]).unwrap(),
            ScalarField::from_values(g, vec![1.0, 2.0 - 1e-4, -0.5]).unwrap(),
            ScalarField::from_values(g, vec![0.5, 2.0 - 1e-4, -1.0]).unwrap(),
        ])
        .unwrap();
        let m = coincidence_masks(&u, 1e-3).unwrap();
        assert_eq!(m.mask(1, 2).unwrap(), &[true, true, false]);
        assert_eq!(m.mask(2, 3).unwrap(), &[false, true, false]);
        assert_eq!(m.mask(1, 3).unwrap(), &[false, true, false]);
        let exact = coincidence_masks(&u, 0.0).unwrap();
        assert_eq!(exact.mask(1, 2).unwrap(), &[true, false, false]);
    }

    #[test]
    fn averages_and_coefficients() {
        let f = [2.0, 4.0, 6.0];
        assert_eq!(average_f(&f, 2, 2).unwrap(), 4.0);
        assert_eq!(average_f(&f, 1, 3).unwrap(), 4.0);
        assert_eq!(average_f(&f, 2, 3).unwrap(), 5.0);
        assert!(average_f(&f, 0, 2).is_err());
        assert!(average_f(&f, 2, 4).is_err());
        assert_eq!(b_coefficient(&f, 1, 1, 2).unwrap(), 1.0);
        assert_eq!(b_coefficient(&f, 1, 1, 3).unwrap(), 1.0);
        assert_eq!(b_coefficient(&f, 2, 1, 3).unwrap(), 0.0);
        assert!(b_coefficient(&f, 1, 2, 3).is_err());
        assert!(b_coefficient(&f, 2, 2, 2).is_err());
    }

    #[test]
    fn reaction_on_a_single_coincidence_set() {
        let g = grid(2);
        let f = MultiField::new(vec![
            ScalarField::constant(g, 2.0),
            ScalarField::constant(g, 4.0),
            ScalarField::constant(g, 6.0),
        ])
        .unwrap();
        let masks =
            CoincidenceMaskSet::from_adjacent(g, 0.0, vec![vec![true, false], vec![false, false]]).unwrap();
        let r = reconstruct_reaction(&f, &masks).unwrap();
        assert_eq!(r.at(0), vec![1.0, -1.0, 0.0]);
        assert_eq!(r.at(1), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn lewy_stampacchia_bounds() {
        assert_eq!(ls_bounds(&[3.0], 1).unwrap(), (3.0, 3.0));
        assert_eq!(ls_bounds(&[2.0, 4.0, 6.0], 2).unwrap(), (2.0, 6.0));
        assert_eq!(ls_bounds(&[2.0, 4.0, 6.0], 1).unwrap(), (2.0, 6.0));
        assert_eq!(ls_bounds(&[6.0, 0.0, -6.0], 2).unwrap(), (0.0, 0.0));
        assert!(ls_bounds(&[1.0], 2).is_err());
    }

    #[test]
    fn nondegeneracy_examples() {
        let g = grid(4);
        let make = |v: [f64; 3]| {
            MultiField::new(v.iter().map(|&c| ScalarField::constant(g, c)).collect()).unwrap()
        };
        let ok = nondegeneracy_check(&make([2.0, 4.0, 6.0]), 0.0).unwrap();
        assert!(ok.passed());
        let keys: Vec<_> = ok.triples.iter().map(|t| t.0).collect();
        assert_eq!(keys, vec![(1, 1, 2), (1, 1, 3), (1, 2, 3), (2, 2, 3)]);
        let bad = nondegeneracy_check(&make([1.0, 1.0, 5.0]), 0.0).unwrap();
        assert!(!bad.passed());
        assert_eq!(bad.violations().map(|v| v.0).collect::<Vec<_>>(), vec![(1, 1, 2)]);
        assert!(nondegeneracy_check(&MultiField::zeros(g, 1), 0.0).unwrap().passed());
    }

    #[test]
    fn mask_distances() {
        let g = grid(3);
        let a = CoincidenceMaskSet::from_adjacent(g, 0.0, vec![vec![true, false, true]]).unwrap();
        let b = CoincidenceMaskSet::from_adjacent(g, 0.0, vec![vec![true, true, true]]).unwrap();
        assert_eq!(mask_distance(&a, &a).unwrap()[&(1, 2)], 0.0);
        assert_eq!(mask_distance(&a, &b).unwrap()[&(1, 2)], 0.25);
        let all = CoincidenceMaskSet::from_adjacent(g, 0.0, vec![vec![true; 3]]).unwrap();
        let none = CoincidenceMaskSet::from_adjacent(g, 0.0, vec![vec![false; 3]]).unwrap();
        assert_eq!(mask_distance(&all, &none).unwrap()[&(1, 2)], 0.75);
        let other = CoincidenceMaskSet::from_adjacent(grid(4), 0.0, vec![vec![true; 4]]).unwrap();
        assert!(mask_distance(&a, &other).is_err());
    }

    #[test]
    fn contact_trivial_cases() {
        let g = grid(5);
        let pflux = PFluxParams::new(2.0, 0.0).unwrap();
        let w = ScalarField::constant(g, 1.0);
        let psi = Obstacle::stationary(ScalarField::zeros(g));
        let phi = ScalarField::constant(g, -1.0);
        let none = contact_condition_check(&w, &psi, &phi, ObstacleSide::Lower, 0.1, &pflux, 0.0, 1e-8).unwrap();
        assert_eq!(none.contact_measure, 0.0);
        let w = ScalarField::zeros(g);
        let full = contact_condition_check(&w, &psi, &phi, ObstacleSide::Lower, 0.1, &pflux, 0.0, 1e-8).unwrap();
        assert!((full.contact_measure - 5.0 * g.hx()).abs() < 1e-12);
        assert_eq!(full.violation_measure, 0.0);
        let up = contact_condition_check(&w, &psi, &phi, ObstacleSide::Upper, 0.1, &pflux, 0.0, 1e-8).unwrap();
        assert_eq!(up.violation_measure, full.contact_measure);
    }
}
