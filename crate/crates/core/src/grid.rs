//! Uniform rectangular grids, nodal fields and the ordered-cone projection.
//!
//! Only interior nodes carry unknowns. Boundary nodes hold the homogeneous
//! Dirichlet value 0 and appear in stencils as `None`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    dimension: usize,
    nx: usize,
    ny: usize,
    length_x: f64,
    length_y: f64,
    hx: f64,
    hy: f64,
}

impl GridSpec {
    pub fn new_1d(nx: usize, length_x: f64) -> Result<Self> {
        Self::new(1, nx, None, length_x, None)
    }

    pub fn new_2d(nx: usize, ny: usize, length_x: f64, length_y: f64) -> Result<Self> {
        Self::new(2, nx, Some(ny), length_x, Some(length_y))
    }

    /// Validates the raw description and derives the spacings.
    pub fn new(
        dimension: usize,
        nx: usize,
        ny: Option<usize>,
        length_x: f64,
        length_y: Option<f64>,
    ) -> Result<Self> {
        let check_extent = |name: &str, l: f64| {
            if l.is_finite() && l > 0.0 {
                Ok(l)
            } else {
                Err(Error::InvalidGrid(format!("{name} must be positive, got {l}")))
            }
        };
        if nx < 2 {
            return Err(Error::InvalidGrid(format!("n_x must be at least 2, got {nx}")));
        }
        let length_x = check_extent("length_x", length_x)?;
        match dimension {
            1 => Ok(GridSpec {
                dimension,
                nx,
                ny: 1,
                length_x,
                length_y: 1.0,
                hx: length_x / (nx + 1) as f64,
                hy: 1.0,
            }),
            2 => {
                let ny = ny.ok_or_else(|| Error::InvalidGrid("n_y is required in 2D".into()))?;
                if ny < 2 {
                    return Err(Error::InvalidGrid(format!("n_y must be at least 2, got {ny}")));
                }
                let length_y = check_extent(
                    "length_y",
                    length_y.ok_or_else(|| Error::InvalidGrid("length_y is required in 2D".into()))?,
                )?;
                Ok(GridSpec {
                    dimension,
                    nx,
                    ny,
                    length_x,
                    length_y,
                    hx: length_x / (nx + 1) as f64,
                    hy: length_y / (ny + 1) as f64,
                })
            }
            d => Err(Error::InvalidGrid(format!("dimension must be 1 or 2, got {d}"))),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    /// Interior node count along y; 1 for one-dimensional grids.
    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn length_x(&self) -> f64 {
        self.length_x
    }

    pub fn length_y(&self) -> f64 {
        self.length_y
    }

    pub fn hx(&self) -> f64 {
        self.hx
    }

    pub fn hy(&self) -> f64 {
        self.hy
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Measure of the cell owned by each interior node.
    pub fn cell_measure(&self) -> f64 {
        if self.dimension == 1 {
            self.hx
        } else {
            self.hx * self.hy
        }
    }

    /// Measure of the whole domain.
    pub fn domain_measure(&self) -> f64 {
        if self.dimension == 1 {
            self.length_x
        } else {
            self.length_x * self.length_y
        }
    }

    /// Largest spacing, used wherever a single mesh size is needed.
    pub fn h(&self) -> f64 {
        if self.dimension == 1 {
            self.hx
        } else {
            self.hx.max(self.hy)
        }
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    /// Axis indices `(i, j)` of a node; `j = 0` in 1D.
    pub fn axis_indices(&self, node: usize) -> (usize, usize) {
        (node % self.nx, node / self.nx)
    }

    /// Physical coordinates of an interior node; `y = 0` in 1D.
    pub fn coords(&self, node: usize) -> (f64, f64) {
        let (i, j) = self.axis_indices(node);
        let x = (i + 1) as f64 * self.hx;
        let y = if self.dimension == 1 {
            0.0
        } else {
            (j + 1) as f64 * self.hy
        };
        (x, y)
    }

    /// Spatial neighbours of a node (interior only), used for mask transitions.
    pub fn neighbours(&self, node: usize) -> Vec<usize> {
        let (i, j) = self.axis_indices(node);
        let mut out = Vec::with_capacity(4);
        if i > 0 {
            out.push(self.index(i - 1, j));
        }
        if i + 1 < self.nx {
            out.push(self.index(i + 1, j));
        }
        if self.dimension == 2 {
            if j > 0 {
                out.push(self.index(i, j - 1));
            }
            if j + 1 < self.ny {
                out.push(self.index(i, j + 1));
            }
        }
        out
    }

    fn node_or_boundary(&self, i: isize, j: isize) -> Option<usize> {
        let in_x = i >= 0 && (i as usize) < self.nx;
        let in_y = if self.dimension == 1 {
            j == 0
        } else {
            j >= 0 && (j as usize) < self.ny
        };
        (in_x && in_y).then(|| self.index(i as usize, j as usize))
    }

    /// Piecewise-linear elements covering the domain, boundary edges included.
    ///
    /// In 1D every edge between consecutive nodes is an element. In 2D each
    /// cell is cut along its south-west/north-east diagonal into two right
    /// triangles, which makes the p = 2 operator the 5-point Laplacian.
    pub fn elements(&self) -> Vec<Element> {
        let mut out = Vec::new();
        if self.dimension == 1 {
            for e in 0..=self.nx as isize {
                let left = self.node_or_boundary(e - 1, 0);
                let right = self.node_or_boundary(e, 0);
                let ih = 1.0 / self.hx;
                out.push(Element {
                    measure: self.hx,
                    gradient: vec![[(right, ih), (left, -ih)]],
                });
            }
            return out;
        }
        let (ihx, ihy) = (1.0 / self.hx, 1.0 / self.hy);
        let area = 0.5 * self.hx * self.hy;
        for j in 0..=self.ny as isize {
            for i in 0..=self.nx as isize {
                let sw = self.node_or_boundary(i - 1, j - 1);
                let se = self.node_or_boundary(i, j - 1);
                let nw = self.node_or_boundary(i - 1, j);
                let ne = self.node_or_boundary(i, j);
                // lower-right triangle (sw, se, ne)
                out.push(Element {
                    measure: area,
                    gradient: vec![[(se, ihx), (sw, -ihx)], [(ne, ihy), (se, -ihy)]],
                });
                // upper-left triangle (sw, nw, ne)
                out.push(Element {
                    measure: area,
                    gradient: vec![[(ne, ihx), (nw, -ihx)], [(nw, ihy), (sw, -ihy)]],
                });
            }
        }
        out
    }
}

/// A piecewise-linear element with constant gradient.
///
/// Each gradient component is `c_a * u_a + c_b * u_b`; `None` marks a
/// boundary node whose value is 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub measure: f64,
    pub gradient: Vec<[(Option<usize>, f64); 2]>,
}

impl Element {
    pub fn gradient_at(&self, values: &[f64]) -> [f64; 2] {
        let mut g = [0.0; 2];
        for (k, terms) in self.gradient.iter().enumerate() {
            g[k] = terms
                .iter()
                .map(|&(node, c)| node.map_or(0.0, |n| c * values[n]))
                .sum();
        }
        g
    }

    /// Coefficient of `node` in each gradient component.
    pub fn coefficient(&self, node: usize) -> [f64; 2] {
        let mut c = [0.0; 2];
        for (k, terms) in self.gradient.iter().enumerate() {
            for &(n, coef) in terms {
                if n == Some(node) {
                    c[k] += coef;
                }
            }
        }
        c
    }

    pub fn nodes(&self) -> impl Iterator<Item = usize> + '_ {
        let mut seen: Vec<usize> = Vec::with_capacity(3);
        for terms in &self.gradient {
            for &(n, _) in terms {
                if let Some(n) = n {
                    if !seen.contains(&n) {
                        seen.push(n);
                    }
                }
            }
        }
        seen.into_iter()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: GridSpec) -> Self {
        ScalarField {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: GridSpec, c: f64) -> Self {
        ScalarField {
            grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn from_values(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "expected {} nodal values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite nodal value {v}")));
        }
        Ok(ScalarField { grid, values })
    }

    /// Samples `f(x, y)` at every interior node.
    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|n| {
                let (x, y) = grid.coords(n);
                f(x, y)
            })
            .collect();
        ScalarField { grid, values }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ensure_same_grid(&self, other: &ScalarField) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(format!("{:?} vs {:?}", self.grid, other.grid)));
        }
        Ok(())
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<ScalarField> {
        self.ensure_same_grid(other)?;
        Ok(ScalarField {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: self.values.iter().map(|&a| f(a)).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiField {
    components: Vec<ScalarField>,
}

impl MultiField {
    pub fn new(components: Vec<ScalarField>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidParameter("a MultiField needs at least one component".into()))?;
        for c in &components[1..] {
            first.ensure_same_grid(c)?;
        }
        Ok(MultiField { components })
    }

    pub fn zeros(grid: GridSpec, n: usize) -> Self {
        assert!(n >= 1, "a MultiField needs at least one component");
        MultiField {
            components: vec![ScalarField::zeros(grid); n],
        }
    }

    pub fn grid(&self) -> &GridSpec {
        self.components[0].grid()
    }

    /// Number of membranes N.
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[ScalarField] {
        &self.components
    }

    pub fn components_mut(&mut self) -> &mut [ScalarField] {
        &mut self.components
    }

    pub fn component(&self, i: usize) -> &ScalarField {
        &self.components[i]
    }

    pub fn ensure_compatible(&self, other: &MultiField) -> Result<()> {
        if self.n_components() != other.n_components() {
            return Err(Error::GridMismatch(format!(
                "{} components vs {}",
                self.n_components(),
                other.n_components()
            )));
        }
        self.components[0].ensure_same_grid(&other.components[0])
    }

    /// The N values at one node, in component order.
    pub fn at(&self, node: usize) -> Vec<f64> {
        self.components.iter().map(|c| c.values()[node]).collect()
    }

    pub fn set_at(&mut self, node: usize, values: &[f64]) {
        for (c, &v) in self.components.iter_mut().zip(values) {
            c.values_mut()[node] = v;
        }
    }

    /// Component-major flattening `[u_1 | u_2 | ... | u_N]`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.components
            .iter()
            .flat_map(|c| c.values().iter().copied())
            .collect()
    }

    pub fn from_flat(grid: GridSpec, n: usize, flat: &[f64]) -> Self {
        let len = grid.len();
        assert_eq!(flat.len(), n * len);
        MultiField {
            components: flat
                .chunks(len)
                .map(|chunk| ScalarField {
                    grid,
                    values: chunk.to_vec(),
                })
                .collect(),
        }
    }

    /// Maximum of `(u_{i+1} - u_i)^+` over nodes and adjacent pairs.
    pub fn ordering_defect(&self) -> f64 {
        let mut defect: f64 = 0.0;
        for pair in self.components.windows(2) {
            for (&upper, &lower) in pair[0].values().iter().zip(pair[1].values()) {
                defect = defect.max(lower - upper);
            }
        }
        defect
    }

    /// Whether `u_i >= u_{i+1}` holds exactly at every node.
    pub fn is_ordered(&self) -> bool {
        self.components.windows(2).all(|pair| {
            pair[0]
                .values()
                .iter()
                .zip(pair[1].values())
                .all(|(a, b)| a >= b)
        })
    }

    /// Replaces every nodal tuple by its projection onto the ordered cone.
    pub fn project_ordered(&self) -> MultiField {
        let mut out = self.clone();
        for node in 0..self.grid().len() {
            let projected = project_ordered(&self.at(node));
            out.set_at(node, &projected);
        }
        out
    }

    pub fn max_abs_diff(&self, other: &MultiField) -> Result<f64> {
        self.ensure_compatible(other)?;
        Ok(self
            .components
            .iter()
            .zip(&other.components)
            .flat_map(|(a, b)| a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max))
    }
}

/// Pool-adjacent-violators for a nonincreasing fit.
///
/// `initial[i]` is the unconstrained optimum of entry `i`; `pooled(start, end)`
/// returns the common optimum of the block `start..end`. Blocks are merged
/// while a later block sits strictly above its predecessor.
pub fn pool_adjacent_violators(
    initial: &[f64],
    mut pooled: impl FnMut(usize, usize) -> f64,
) -> Vec<f64> {
    // (start, end, value)
    let mut blocks: Vec<(usize, usize, f64)> = Vec::with_capacity(initial.len());
    for (i, &v) in initial.iter().enumerate() {
        blocks.push((i, i + 1, v));
        while blocks.len() >= 2 {
            let last = blocks[blocks.len() - 1];
            let prev = blocks[blocks.len() - 2];
            if prev.2 >= last.2 {
                break;
            }
            blocks.truncate(blocks.len() - 2);
            blocks.push((prev.0, last.1, pooled(prev.0, last.1)));
        }
    }
    let mut out = vec![0.0; initial.len()];
    for (start, end, v) in blocks {
        out[start..end].fill(v);
    }
    out
}

/// Euclidean projection of an N-tuple onto `{v_1 >= v_2 >= ... >= v_N}`.
pub fn project_ordered(values: &[f64]) -> Vec<f64> {
    pool_adjacent_violators(values, |start, end| {
        let sum: f64 = values[start..end].iter().sum();
        sum / (end - start) as f64
    })
}

/// Discrete L2(Omega) norm with nodal cell quadrature.
pub fn l2_norm(f: &ScalarField) -> f64 {
    let m = f.grid().cell_measure();
    f.values().iter().map(|v| v * v * m).sum::<f64>().sqrt()
}

/// `(integral of |grad f|^p)^{1/p}` over the piecewise-linear elements.
pub fn lp_grad_norm(f: &ScalarField, p: f64) -> f64 {
    grad_p_integral(f, p).powf(1.0 / p)
}

/// `integral of |grad f|^p`, the quantity tracked in the energy estimates.
pub fn grad_p_integral(f: &ScalarField, p: f64) -> f64 {
    f.grid()
        .elements()
        .iter()
        .map(|e| {
            let g = e.gradient_at(f.values());
            e.measure * (g[0] * g[0] + g[1] * g[1]).sqrt().powf(p)
        })
        .sum()
}
