//! The discrete p-Laplacian `-div(|grad u|^{p-2} grad u)`, its Jacobian and
//! the backward-Euler parabolic residual.
//!
//! The operator is the gradient of the convex energy
//! `J(u) = sum_T |T| (|g_T|^2 + delta^2)^{p/2} / p` over piecewise-linear
//! elements, divided by the nodal cell measure. That makes it monotone and
//! its Jacobian symmetric.

use crate::error::{Error, Result};
use crate::grid::{Element, GridSpec, ScalarField};
use crate::linalg::CsrMatrix;

pub const DEFAULT_DELTA_REG: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PFluxParams {
    p: f64,
    delta_reg: f64,
}

impl PFluxParams {
    pub fn new(p: f64, delta_reg: f64) -> Result<Self> {
        if !(p.is_finite() && p > 1.0) {
            return Err(Error::InvalidParameter(format!("p must satisfy 1 < p < inf, got {p}")));
        }
        if !(delta_reg.is_finite() && delta_reg >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "delta_reg must be nonnegative, got {delta_reg}"
            )));
        }
        Ok(PFluxParams { p, delta_reg })
    }

    pub fn with_default_regularization(p: f64) -> Result<Self> {
        Self::new(p, if p == 2.0 { 0.0 } else { DEFAULT_DELTA_REG })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn delta_reg(&self) -> f64 {
        self.delta_reg
    }

    /// Diffusivity `(s + delta^2)^{(p-2)/2}` at squared gradient `s`.
    pub fn diffusivity(&self, s: f64) -> f64 {
        if self.p == 2.0 {
            return 1.0;
        }
        let base = s + self.delta_reg * self.delta_reg;
        if base == 0.0 {
            // only reachable unregularized, where the flux vanishes with g
            return 0.0;
        }
        base.powf(0.5 * (self.p - 2.0))
    }

    /// Derivative of the diffusivity with respect to `s`.
    pub fn diffusivity_slope(&self, s: f64) -> f64 {
        if self.p == 2.0 {
            return 0.0;
        }
        let base = s + self.delta_reg * self.delta_reg;
        if base == 0.0 {
            return 0.0;
        }
        0.5 * (self.p - 2.0) * base.powf(0.5 * (self.p - 4.0))
    }

    fn energy_density(&self, s: f64) -> f64 {
        (s + self.delta_reg * self.delta_reg).powf(0.5 * self.p) / self.p
    }
}

/// Element structure of a grid, cached for repeated operator evaluations.
#[derive(Debug, Clone)]
pub struct PLaplacian {
    grid: GridSpec,
    elements: Vec<Element>,
    node_elements: Vec<Vec<usize>>,
}

impl PLaplacian {
    pub fn new(grid: GridSpec) -> Self {
        let elements = grid.elements();
        let mut node_elements = vec![Vec::new(); grid.len()];
        for (k, e) in elements.iter().enumerate() {
            for n in e.nodes() {
                node_elements[n].push(k);
            }
        }
        PLaplacian {
            grid,
            elements,
            node_elements,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Nodal values of `-Delta_p u`.
    pub fn apply(&self, u: &[f64], params: &PFluxParams) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.len()];
        self.apply_into(u, params, &mut out);
        out
    }

    pub fn apply_into(&self, u: &[f64], params: &PFluxParams, out: &mut [f64]) {
        out.fill(0.0);
        for e in &self.elements {
            let g = e.gradient_at(u);
            let a = params.diffusivity(g[0] * g[0] + g[1] * g[1]);
            let w = e.measure * a;
            for (k, terms) in e.gradient.iter().enumerate() {
                for &(node, c) in terms {
                    if let Some(n) = node {
                        out[n] += w * g[k] * c;
                    }
                }
            }
        }
        let inv_m = 1.0 / self.grid.cell_measure();
        out.iter_mut().for_each(|v| *v *= inv_m);
    }

    /// Triplets of the Jacobian of [`PLaplacian::apply`], offset by `shift`
    /// in both indices so block systems can be assembled directly.
    pub fn jacobian_triplets(
        &self,
        u: &[f64],
        params: &PFluxParams,
        shift: usize,
        out: &mut Vec<(usize, usize, f64)>,
    ) {
        let inv_m = 1.0 / self.grid.cell_measure();
        for e in &self.elements {
            let g = e.gradient_at(u);
            let s = g[0] * g[0] + g[1] * g[1];
            let a = params.diffusivity(s) * e.measure * inv_m;
            let a2 = 2.0 * params.diffusivity_slope(s) * e.measure * inv_m;
            let nodes: Vec<(usize, [f64; 2])> = e.nodes().map(|n| (n, e.coefficient(n))).collect();
            for &(r, cr) in &nodes {
                let gr = g[0] * cr[0] + g[1] * cr[1];
                for &(c, cc) in &nodes {
                    let gc = g[0] * cc[0] + g[1] * cc[1];
                    let v = a * (cr[0] * cc[0] + cr[1] * cc[1]) + a2 * gr * gc;
                    out.push((r + shift, c + shift, v));
                }
            }
        }
    }

    pub fn jacobian(&self, u: &[f64], params: &PFluxParams) -> Result<CsrMatrix> {
        if params.p() != 2.0 && params.delta_reg() == 0.0 {
            return Err(Error::InvalidParameter(
                "the Jacobian of the p-Laplacian needs delta_reg > 0 when p != 2".into(),
            ));
        }
        let mut t = Vec::new();
        self.jacobian_triplets(u, params, 0, &mut t);
        Ok(CsrMatrix::from_triplets(self.grid.len(), t))
    }

    /// `dJ/du_n` and `d^2J/du_n^2` with the value at `node` replaced by `v`.
    ///
    /// These are not divided by the cell measure.
    pub fn nodal_derivatives(&self, u: &[f64], params: &PFluxParams, node: usize, v: f64) -> (f64, f64) {
        let mut d1 = 0.0;
        let mut d2 = 0.0;
        let old = u[node];
        for &k in &self.node_elements[node] {
            let e = &self.elements[k];
            let c = e.coefficient(node);
            let mut g = e.gradient_at(u);
            g[0] += c[0] * (v - old);
            g[1] += c[1] * (v - old);
            let s = g[0] * g[0] + g[1] * g[1];
            let a = params.diffusivity(s);
            let gc = g[0] * c[0] + g[1] * c[1];
            d1 += e.measure * a * gc;
            d2 += e.measure * (a * (c[0] * c[0] + c[1] * c[1]) + 2.0 * params.diffusivity_slope(s) * gc * gc);
        }
        (d1, d2)
    }

    /// The convex energy whose gradient is the (unscaled) operator.
    pub fn energy(&self, u: &[f64], params: &PFluxParams) -> f64 {
        self.elements
            .iter()
            .map(|e| {
                let g = e.gradient_at(u);
                e.measure * params.energy_density(g[0] * g[0] + g[1] * g[1])
            })
            .sum()
    }
}

/// Discrete `-Delta_p u` as a field.
pub fn apply_p_laplacian(u: &ScalarField, params: &PFluxParams) -> ScalarField {
    let op = PLaplacian::new(*u.grid());
    ScalarField::from_values(*u.grid(), op.apply(u.values(), params))
        .expect("operator output has the grid's length")
}

/// Exact Jacobian of [`apply_p_laplacian`].
pub fn linearize_p_laplacian(u: &ScalarField, params: &PFluxParams) -> Result<CsrMatrix> {
    PLaplacian::new(*u.grid()).jacobian(u.values(), params)
}

/// Backward-Euler residual `(u_new - u_old)/dt - Delta_p u_new`.
pub fn discrete_p(
    u_new: &ScalarField,
    u_old: &ScalarField,
    dt: f64,
    params: &PFluxParams,
) -> Result<ScalarField> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    u_new.ensure_same_grid(u_old)?;
    let lap = apply_p_laplacian(u_new, params);
    let values = u_new
        .values()
        .iter()
        .zip(u_old.values())
        .zip(lap.values())
        .map(|((n, o), l)| (n - o) / dt + l)
        .collect();
    ScalarField::from_values(*u_new.grid(), values)
}

/// Same as [`discrete_p`] with a cached operator, on raw slices.
pub(crate) fn discrete_p_values(
    op: &PLaplacian,
    u_new: &[f64],
    u_old: &[f64],
    dt: f64,
    params: &PFluxParams,
) -> Vec<f64> {
    let mut out = op.apply(u_new, params);
    for ((o, n), old) in out.iter_mut().zip(u_new).zip(u_old) {
        *o += (n - old) / dt;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid1(n: usize, l: f64) -> GridSpec {
        GridSpec::new_1d(n, l).unwrap()
    }

    #[test]
    fn three_point_stencil_at_p2() {
        // interior (1, 2, 1) with zero boundary and h = 1
        let g = grid1(3, 4.0);
        let u = ScalarField::from_values(g, vec![1.0, 2.0, 1.0]).unwrap();
        let lap = apply_p_laplacian(&u, &PFluxParams::new(2.0, 0.0).unwrap());
        assert!((lap.values()[1] - 2.0).abs() < 1e-15);
        assert!((lap.values()[0] - 0.0).abs() < 1e-15);
    }

    #[test]
    fn zero_field_maps_to_zero() {
        for p in [1.5, 2.0, 3.0, 4.0] {
            let g = GridSpec::new_2d(4, 3, 1.0, 1.0).unwrap();
            let lap = apply_p_laplacian(&ScalarField::zeros(g), &PFluxParams::new(p, 1e-6).unwrap());
            assert!(lap.values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn equal_fluxes_cancel_unregularized() {
        // u = (1, 2, 3, 2, 1): node 1 sees gradient 1 on both sides
        let g = grid1(5, 6.0);
        let u = ScalarField::from_values(g, vec![1.0, 2.0, 3.0, 2.0, 1.0]).unwrap();
        let lap = apply_p_laplacian(&u, &PFluxParams::new(4.0, 0.0).unwrap());
        assert_eq!(lap.values()[1], 0.0);
    }

    #[test]
    fn jacobian_at_p2_is_the_laplacian() {
        let g = grid1(5, 1.0);
        let h2 = g.hx() * g.hx();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let j = PLaplacian::new(g).jacobian(&u, &PFluxParams::new(2.0, 0.0).unwrap()).unwrap();
        for r in 0..5 {
            assert!((j.get(r, r) - 2.0 / h2).abs() < 1e-9);
            if r > 0 {
                assert!((j.get(r, r - 1) + 1.0 / h2).abs() < 1e-9);
            }
        }
        assert!(j.get(0, 2).abs() == 0.0);
    }

    #[test]
    fn five_point_stencil_in_2d() {
        let g = GridSpec::new_2d(4, 5, 1.0, 2.0).unwrap();
        let (hx, hy) = (g.hx(), g.hy());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lap = PLaplacian::new(g).apply(&u, &PFluxParams::new(2.0, 0.0).unwrap());
        let at = |i: isize, j: isize| -> f64 {
            if i < 0 || j < 0 || i >= 4 || j >= 5 {
                0.0
            } else {
                u[g.index(i as usize, j as usize)]
            }
        };
        for j in 0..5isize {
            for i in 0..4isize {
                let c = at(i, j);
                let expected = (2.0 * c - at(i - 1, j) - at(i + 1, j)) / (hx * hx)
                    + (2.0 * c - at(i, j - 1) - at(i, j + 1)) / (hy * hy);
                let got = lap[g.index(i as usize, j as usize)];
                assert!((got - expected).abs() < 1e-9 * expected.abs().max(1.0));
            }
        }
    }

    #[test]
    fn jacobian_at_zero_gradient_is_scaled_laplacian() {
        let g = grid1(6, 1.0);
        let delta: f64 = 1e-2;
        let p3 = PFluxParams::new(3.0, delta).unwrap();
        let p2 = PFluxParams::new(2.0, 0.0).unwrap();
        let op = PLaplacian::new(g);
        let zero = vec![0.0; 6];
        let j3 = op.jacobian(&zero, &p3).unwrap();
        let j2 = op.jacobian(&zero, &p2).unwrap();
        for r in 0..6 {
            for c in 0..6 {
                assert!((j3.get(r, c) - delta.powf(1.0) * j2.get(r, c)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn jacobian_requires_regularization_away_from_p2() {
        let g = grid1(4, 1.0);
        let u = ScalarField::zeros(g);
        assert!(linearize_p_laplacian(&u, &PFluxParams::new(3.0, 0.0).unwrap()).is_err());
        assert!(linearize_p_laplacian(&u, &PFluxParams::new(2.0, 0.0).unwrap()).is_ok());
    }

    #[test]
    fn nodal_derivatives_match_operator_and_jacobian() {
        let g = GridSpec::new_2d(4, 4, 1.0, 1.0).unwrap();
        let params = PFluxParams::new(3.0, 1e-3).unwrap();
        let op = PLaplacian::new(g);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lap = op.apply(&u, &params);
        let jac = op.jacobian(&u, &params).unwrap();
        let m = g.cell_measure();
        for n in 0..g.len() {
            let (d1, d2) = op.nodal_derivatives(&u, &params, n, u[n]);
            assert!((d1 / m - lap[n]).abs() < 1e-10 * lap[n].abs().max(1.0));
            assert!((d2 / m - jac.get(n, n)).abs() < 1e-10 * jac.get(n, n).abs());
        }
    }

    #[test]
    fn discrete_p_of_steady_field_is_zero() {
        let g = grid1(4, 1.0);
        let u = ScalarField::zeros(g);
        let params = PFluxParams::new(2.0, 0.0).unwrap();
        let r = discrete_p(&u, &u, 0.1, &params).unwrap();
        assert!(r.values().iter().all(|&v| v == 0.0));
        assert!(discrete_p(&u, &u, 0.0, &params).is_err());
        let other = ScalarField::zeros(grid1(5, 1.0));
        assert!(discrete_p(&u, &other, 0.1, &params).is_err());
    }

    #[test]
    fn implicit_heat_step_matches_analytic_decay() {
        // u = exp(-pi^2 t) sin(pi x): P u = 0 up to O(dt + h^2)
        let pi = std::f64::consts::PI;
        let params = PFluxParams::new(2.0, 0.0).unwrap();
        let mut errs = Vec::new();
        for (n, dt) in [(31usize, 1e-3), (63, 5e-4)] {
            let g = grid1(n, 1.0);
            let t = 0.05;
            let old = ScalarField::from_fn(g, |x, _| (-pi * pi * t).exp() * (pi * x).sin());
            let new = ScalarField::from_fn(g, |x, _| (-pi * pi * (t + dt)).exp() * (pi * x).sin());
            let r = discrete_p(&new, &old, dt, &params).unwrap();
            errs.push(r.max_abs());
        }
        assert!(errs[0] < 0.05, "{errs:?}");
        assert!(errs[1] < 0.6 * errs[0], "{errs:?}");
    }
}
