//! Bounded penalization of the ordering constraint.
//!
//! Component `i` of the penalty reaction is
//! `xi_i theta_eps(v_i - v_{i+1}) - xi_{i-1} theta_eps(v_{i-1} - v_i)`
//! with `v_0 = +inf` and `v_{N+1} = -inf`, so both end terms vanish.

use crate::error::{Error, Result};
use crate::grid::{MultiField, ScalarField};

/// The bounded penalty: -1 below `-epsilon`, linear on `(-epsilon, 0)`, 0 above.
pub fn theta_eps(s: f64, epsilon: f64) -> f64 {
    if s >= 0.0 {
        0.0
    } else if s <= -epsilon {
        -1.0
    } else {
        s / epsilon
    }
}

/// Almost-everywhere derivative of [`theta_eps`]; 0 at the kinks.
pub fn theta_eps_slope(s: f64, epsilon: f64) -> f64 {
    if s < 0.0 && s > -epsilon {
        1.0 / epsilon
    } else {
        0.0
    }
}

/// `(xi_0, xi_1, ..., xi_N)` for the forcing values at one point.
///
/// `xi_0` is the largest prefix mean of `f`; `xi_i = i xi_0 - (f_1 + ... + f_i)`.
pub fn xi_coefficients(f: &[f64]) -> Vec<f64> {
    let mut prefix = 0.0;
    let mut sums = Vec::with_capacity(f.len());
    let mut xi0 = f64::NEG_INFINITY;
    for (k, &fk) in f.iter().enumerate() {
        prefix += fk;
        sums.push(prefix);
        xi0 = xi0.max(prefix / (k + 1) as f64);
    }
    let mut out = Vec::with_capacity(f.len() + 1);
    out.push(xi0);
    for (k, s) in sums.into_iter().enumerate() {
        // rounding can leave -1e-16 where the prefix mean is the maximum
        out.push(((k + 1) as f64 * xi0 - s).max(0.0));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyParams {
    epsilon: f64,
    /// `xi_0, ..., xi_N` as fields.
    xi: Vec<ScalarField>,
}

impl PenaltyParams {
    pub fn new(epsilon: f64, xi: Vec<ScalarField>) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
        }
        if xi.len() < 2 {
            return Err(Error::InvalidParameter("need xi_0, ..., xi_N with N >= 1".into()));
        }
        for (i, x) in xi.iter().enumerate() {
            x.ensure_same_grid(&xi[0])?;
            if i > 0 && x.values().iter().any(|&v| v < 0.0) {
                return Err(Error::InvalidParameter(format!("xi_{i} has negative entries")));
            }
        }
        Ok(PenaltyParams { epsilon, xi })
    }

    /// Coefficients computed node by node from the forcing.
    pub fn from_forcing(epsilon: f64, f: &MultiField) -> Result<Self> {
        let n = f.n_components();
        let grid = *f.grid();
        let mut xi = vec![vec![0.0; grid.len()]; n + 1];
        for node in 0..grid.len() {
            for (i, v) in xi_coefficients(&f.at(node)).into_iter().enumerate() {
                xi[i][node] = v;
            }
        }
        let xi = xi
            .into_iter()
            .map(|v| ScalarField::from_values(grid, v))
            .collect::<Result<Vec<_>>>()?;
        Self::new(epsilon, xi)
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn xi(&self) -> &[ScalarField] {
        &self.xi
    }

    /// Number of membranes N.
    pub fn n_components(&self) -> usize {
        self.xi.len() - 1
    }

    pub(crate) fn xi_at(&self, i: usize, node: usize) -> f64 {
        self.xi[i].values()[node]
    }
}

/// Pointwise penalty reaction `B v`.
pub fn apply_b(v: &MultiField, params: &PenaltyParams) -> Result<MultiField> {
    let n = v.n_components();
    if n != params.n_components() {
        return Err(Error::GridMismatch(format!(
            "{n} components against penalty coefficients for {}",
            params.n_components()
        )));
    }
    v.component(0).ensure_same_grid(&params.xi[0])?;
    let len = v.grid().len();
    let eps = params.epsilon;
    let mut out = MultiField::zeros(*v.grid(), n);
    for i in 0..n.saturating_sub(1) {
        // interface between components i and i+1 (0-based) carries xi_{i+1}
        for node in 0..len {
            let s = v.component(i).values()[node] - v.component(i + 1).values()[node];
            let r = params.xi_at(i + 1, node) * theta_eps(s, eps);
            if r != 0.0 {
                out.components_mut()[i].values_mut()[node] += r;
                out.components_mut()[i + 1].values_mut()[node] -= r;
            }
        }
    }
    Ok(out)
}

/// Discrete `<Bv - Bw, (v - w)^+>`.
pub fn t_monotone_pairing(v: &MultiField, w: &MultiField, params: &PenaltyParams) -> Result<f64> {
    v.ensure_compatible(w)?;
    let bv = apply_b(v, params)?;
    let bw = apply_b(w, params)?;
    let m = v.grid().cell_measure();
    let mut total = 0.0;
    for i in 0..v.n_components() {
        let (vi, wi) = (v.component(i).values(), w.component(i).values());
        let (bvi, bwi) = (bv.component(i).values(), bw.component(i).values());
        for node in 0..vi.len() {
            total += (bvi[node] - bwi[node]) * (vi[node] - wi[node]).max(0.0) * m;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    #[test]
    fn theta_branches() {
        assert_eq!(theta_eps(0.2, 0.7), 0.0);
        assert_eq!(theta_eps(0.0, 0.7), 0.0);
        assert_eq!(theta_eps(-2.0, 0.5), -1.0);
        assert_eq!(theta_eps(-0.25, 0.5), -0.5);
        assert_eq!(theta_eps(f64::INFINITY, 0.5), 0.0);
        assert_eq!(theta_eps(f64::NEG_INFINITY, 0.5), -1.0);
    }

    #[test]
    fn xi_examples() {
        assert_eq!(xi_coefficients(&[0.0, 0.0, 0.0]), vec![0.0; 4]);
        assert_eq!(xi_coefficients(&[2.0, 4.0, 6.0]), vec![4.0, 2.0, 2.0, 0.0]);
        assert_eq!(xi_coefficients(&[3.0, 1.0]), vec![3.0, 0.0, 2.0]);
    }

    #[test]
    fn b_on_two_components_in_the_linear_band() {
        let g = GridSpec::new_1d(2, 1.0).unwrap();
        let eps = 0.1;
        let v = MultiField::new(vec![
            ScalarField::from_values(g, vec![0.0, 1.0]).unwrap(),
            ScalarField::from_values(g, vec![0.05, 0.0]).unwrap(),
        ])
        .unwrap();
        let xi = vec![
            ScalarField::constant(g, 1.0),
            ScalarField::constant(g, 3.0),
            ScalarField::zeros(g),
        ];
        let params = PenaltyParams::new(eps, xi).unwrap();
        let b = apply_b(&v, &params).unwrap();
        assert!((b.component(0).values()[0] - 3.0 * -0.5).abs() < 1e-15);
        assert!((b.component(1).values()[0] + 3.0 * -0.5).abs() < 1e-15);
        assert_eq!(b.at(1), vec![0.0, 0.0]);
    }

    #[test]
    fn b_vanishes_for_one_membrane() {
        let g = GridSpec::new_1d(3, 1.0).unwrap();
        let f = MultiField::new(vec![ScalarField::constant(g, 2.0)]).unwrap();
        let params = PenaltyParams::from_forcing(0.1, &f).unwrap();
        let v = MultiField::new(vec![ScalarField::from_values(g, vec![1.0, -3.0, 2.0]).unwrap()]).unwrap();
        assert_eq!(apply_b(&v, &params).unwrap(), MultiField::zeros(g, 1));
    }

    #[test]
    fn negative_epsilon_rejected() {
        let g = GridSpec::new_1d(3, 1.0).unwrap();
        assert!(PenaltyParams::new(0.0, vec![ScalarField::zeros(g); 3]).is_err());
    }
}
