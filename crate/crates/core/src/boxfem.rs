//! Q1 finite elements on an axis-aligned box with a uniform grid and
//! homogeneous or prescribed Dirichlet data on the whole boundary.
//!
//! Nodal vectors store component `c` at `c * nodes + node`; node and element
//! indices are row-major with the last axis fastest, matching [`Q1`] corners.

use serde::{Deserialize, Serialize};

use crate::dst::DirichletPreconditioner;
use crate::error::{Error, Result};
use crate::fem::Q1;
use crate::pcg::{pcg, SolveReport, SolverSettings};

/// Uniform grid of `cells` elements per axis on `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxGrid {
    pub dim: usize,
    pub cells: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxGrid {
    pub fn new(dim: usize, cells: usize, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if !(2..=3).contains(&dim) {
            return Err(Error::InvalidGrid(format!("box dimension {dim} not in {{2, 3}}")));
        }
        if cells < 2 {
            return Err(Error::InvalidGrid(format!("{cells} cells per axis, at least 2 needed")));
        }
        if lower.len() != dim || upper.len() != dim || lower.iter().zip(&upper).any(|(l, u)| !(u > l)) {
            return Err(Error::InvalidGrid("box corners must satisfy lower < upper on every axis".into()));
        }
        Ok(Self {
            dim,
            cells,
            lower,
            upper,
        })
    }

    /// The unit box [0, 1]^dim.
    pub fn unit(dim: usize, cells: usize) -> Result<Self> {
        Self::new(dim, cells, vec![0.0; dim], vec![1.0; dim])
    }

    #[inline]
    pub fn spacing(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / self.cells as f64
    }

    pub fn element_volume(&self) -> f64 {
        (0..self.dim).map(|a| self.spacing(a)).product()
    }

    pub fn node_count(&self) -> usize {
        (self.cells + 1).pow(self.dim as u32)
    }

    pub fn element_count(&self) -> usize {
        self.cells.pow(self.dim as u32)
    }

    /// Multi-index of a node (entries in `0..=cells`).
    #[inline]
    pub fn node_index(&self, mut idx: usize, out: &mut [usize]) {
        let n = self.cells + 1;
        for a in (0..self.dim).rev() {
            out[a] = idx % n;
            idx /= n;
        }
    }

    /// Multi-index of an element (entries in `0..cells`).
    #[inline]
    pub fn element_index(&self, mut idx: usize, out: &mut [usize]) {
        for a in (0..self.dim).rev() {
            out[a] = idx % self.cells;
            idx /= self.cells;
        }
    }

    pub fn node_position(&self, idx: usize, out: &mut [f64]) {
        let mut mi = [0usize; 3];
        self.node_index(idx, &mut mi[..self.dim]);
        for a in 0..self.dim {
            out[a] = self.lower[a] + mi[a] as f64 * self.spacing(a);
        }
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        let mut mi = [0usize; 3];
        self.node_index(idx, &mut mi[..self.dim]);
        mi[..self.dim].iter().any(|&i| i == 0 || i == self.cells)
    }

    /// Position of Gauss point `g` of element `e`.
    pub fn gauss_position(&self, q1: &Q1, e: usize, g: usize, out: &mut [f64]) {
        let mut mi = [0usize; 3];
        self.element_index(e, &mut mi[..self.dim]);
        for a in 0..self.dim {
            out[a] = self.lower[a] + (mi[a] as f64 + q1.gauss[g][a]) * self.spacing(a);
        }
    }

    /// Node values of a function.
    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        (0..self.node_count())
            .map(|i| {
                self.node_position(i, &mut x);
                f(&x)
            })
            .collect()
    }
}

/// Values at the Gauss points of every element: `layers[g][c * elements + e]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussField {
    pub components: usize,
    pub elements: usize,
    pub layers: Vec<Vec<f64>>,
}

impl GaussField {
    pub fn zeros(components: usize, elements: usize, layers: usize) -> Self {
        Self {
            components,
            elements,
            layers: vec![vec![0.0; components * elements]; layers],
        }
    }

    #[inline]
    pub fn get(&self, g: usize, c: usize, e: usize) -> f64 {
        self.layers[g][c * self.elements + e]
    }

    #[inline]
    pub fn set(&mut self, g: usize, c: usize, e: usize, v: f64) {
        self.layers[g][c * self.elements + e] = v;
    }

    pub fn gather(&self, g: usize, e: usize, out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate().take(self.components) {
            *o = self.layers[g][c * self.elements + e];
        }
    }

    /// Samples `f` at every Gauss point.
    pub fn from_fn(grid: &BoxGrid, components: usize, f: impl Fn(&[f64], &mut [f64])) -> Self {
        let q1 = Q1::new(grid.dim);
        let ne = grid.element_count();
        let mut out = Self::zeros(components, ne, q1.corner_count());
        let mut x = vec![0.0; grid.dim];
        let mut v = vec![0.0; components];
        for g in 0..q1.corner_count() {
            for e in 0..ne {
                grid.gauss_position(&q1, e, g, &mut x);
                f(&x, &mut v);
                for (c, val) in v.iter().enumerate() {
                    out.layers[g][c * ne + e] = *val;
                }
            }
        }
        out
    }

    pub fn difference(&self, other: &GaussField) -> GaussField {
        let mut out = self.clone();
        for (a, b) in out.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.iter_mut().zip(b) {
                *x -= y;
            }
        }
        out
    }

    /// L^q norm over the box (pointwise Euclidean norm over components),
    /// restricted to elements where `mask` holds.
    pub fn lq_norm(&self, grid: &BoxGrid, q: f64, mask: Option<&dyn Fn(usize) -> bool>) -> f64 {
        let w = grid.element_volume() / self.layers.len() as f64;
        let mut total = 0.0;
        for layer in &self.layers {
            for e in 0..self.elements {
                if let Some(m) = mask {
                    if !m(e) {
                        continue;
                    }
                }
                let s: f64 = (0..self.components).map(|c| layer[c * self.elements + e].powi(2)).sum();
                total += w * s.sqrt().powf(q);
            }
        }
        total.powf(1.0 / q)
    }
}

/// Matrix-free Q1 stiffness operator with element-wise piecewise-constant
/// coefficients for `components` unknowns per node.
///
/// The coefficient of label `k` is a row-major square matrix of size
/// `components * dim` acting on gradient vectors ordered `c * dim + a`
/// (component c differentiated along axis a).
pub struct BoxOperator {
    pub grid: BoxGrid,
    pub components: usize,
    pub element: Q1,
    labels: Vec<u8>,
    coefficients: Vec<Vec<f64>>,
    matrices: Vec<Vec<f64>>,
    offsets: Vec<usize>,
    strides: Vec<usize>,
}

impl BoxOperator {
    pub fn new(grid: BoxGrid, components: usize, labels: Vec<u8>, coefficients: Vec<Vec<f64>>) -> Result<Self> {
        let dim = grid.dim;
        let size = components * dim;
        if labels.len() != grid.element_count() {
            return Err(Error::Shape(format!(
                "{} element labels for {} elements",
                labels.len(),
                grid.element_count()
            )));
        }
        if coefficients.iter().any(|c| c.len() != size * size)
            || labels.iter().any(|&l| l as usize >= coefficients.len())
        {
            return Err(Error::Shape("element coefficient table does not match the labels".into()));
        }
        let element = Q1::new(dim);
        let nc = element.corner_count();
        let blocks = element.stiffness_blocks();
        let vol = grid.element_volume();
        let h: Vec<f64> = (0..dim).map(|a| grid.spacing(a)).collect();
        let local = nc * components;
        let matrices = coefficients
            .iter()
            .map(|coef| {
                let mut m = vec![0.0; local * local];
                for c in 0..components {
                    for d in 0..components {
                        for a in 0..dim {
                            for b in 0..dim {
                                let k = coef[(c * dim + a) * size + d * dim + b];
                                if k == 0.0 {
                                    continue;
                                }
                                let s = k * vol / (h[a] * h[b]);
                                for p in 0..nc {
                                    for q in 0..nc {
                                        m[(c * nc + p) * local + d * nc + q] += s * blocks[a][b][p * nc + q];
                                    }
                                }
                            }
                        }
                    }
                }
                m
            })
            .collect();
        let n1 = grid.cells + 1;
        let strides: Vec<usize> = (0..dim).map(|a| n1.pow((dim - 1 - a) as u32)).collect();
        let offsets = element
            .corners
            .iter()
            .map(|corner| corner.iter().zip(&strides).map(|(b, s)| b * s).sum())
            .collect();
        Ok(Self {
            grid,
            components,
            element,
            labels,
            coefficients,
            matrices,
            offsets,
            strides,
        })
    }

    /// Operator with one constant coefficient.
    pub fn uniform(grid: BoxGrid, components: usize, coefficient: Vec<f64>) -> Result<Self> {
        let labels = vec![0; grid.element_count()];
        Self::new(grid, components, labels, vec![coefficient])
    }

    #[inline]
    pub fn label(&self, e: usize) -> u8 {
        self.labels[e]
    }

    pub fn coefficient(&self, label: u8) -> &[f64] {
        &self.coefficients[label as usize]
    }

    #[inline]
    fn base_node(&self, e: usize) -> usize {
        let dim = self.grid.dim;
        let mut rest = e;
        let mut base = 0;
        for a in (0..dim).rev() {
            base += (rest % self.grid.cells) * self.strides[a];
            rest /= self.grid.cells;
        }
        base
    }

    /// Nodes of the corners of element `e`.
    pub fn element_nodes(&self, e: usize, out: &mut [usize]) {
        let base = self.base_node(e);
        for (o, off) in out.iter_mut().zip(&self.offsets) {
            *o = base + off;
        }
    }

    /// y = K x over all nodes (no boundary treatment).
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let nn = self.grid.node_count();
        let nc = self.element.corner_count();
        let local = nc * self.components;
        let mut xl = vec![0.0; local];
        let mut nodes = vec![0usize; nc];
        y.iter_mut().for_each(|v| *v = 0.0);
        for e in 0..self.grid.element_count() {
            self.element_nodes(e, &mut nodes);
            for c in 0..self.components {
                for (k, &n) in nodes.iter().enumerate() {
                    xl[c * nc + k] = x[c * nn + n];
                }
            }
            let m = &self.matrices[self.labels[e] as usize];
            for r in 0..local {
                let row = &m[r * local..(r + 1) * local];
                let s: f64 = row.iter().zip(&xl).map(|(a, b)| a * b).sum();
                y[(r / nc) * nn + nodes[r % nc]] += s;
            }
        }
    }

    /// Gradient of a nodal field at every Gauss point, components `c * dim + a`.
    pub fn gradient(&self, u: &[f64]) -> GaussField {
        let dim = self.grid.dim;
        let nn = self.grid.node_count();
        let ne = self.grid.element_count();
        let nc = self.element.corner_count();
        let h: Vec<f64> = (0..dim).map(|a| self.grid.spacing(a)).collect();
        let mut out = GaussField::zeros(self.components * dim, ne, nc);
        let mut nodes = vec![0usize; nc];
        for e in 0..ne {
            self.element_nodes(e, &mut nodes);
            for (g, grads) in self.element.gradients.iter().enumerate() {
                for c in 0..self.components {
                    for a in 0..dim {
                        let s: f64 = nodes.iter().enumerate().map(|(k, &n)| u[c * nn + n] * grads[k][a]).sum();
                        out.layers[g][(c * dim + a) * ne + e] = s / h[a];
                    }
                }
            }
        }
        out
    }

    /// Values of a nodal field at every Gauss point.
    pub fn interpolate(&self, u: &[f64]) -> GaussField {
        let nn = self.grid.node_count();
        let ne = self.grid.element_count();
        let nc = self.element.corner_count();
        let comps = u.len() / nn;
        let mut out = GaussField::zeros(comps, ne, nc);
        let mut nodes = vec![0usize; nc];
        for e in 0..ne {
            self.element_nodes(e, &mut nodes);
            for (g, vals) in self.element.values.iter().enumerate() {
                for c in 0..comps {
                    out.layers[g][c * ne + e] = nodes.iter().enumerate().map(|(k, &n)| u[c * nn + n] * vals[k]).sum();
                }
            }
        }
        out
    }

    /// Weak flux load ⟨b, v⟩ = ∫ q · ∇v for a gradient-type Gauss field.
    pub fn flux_load(&self, q: &GaussField) -> Vec<f64> {
        let dim = self.grid.dim;
        let nn = self.grid.node_count();
        let ne = self.grid.element_count();
        let nc = self.element.corner_count();
        let comps = q.components / dim;
        let w = self.grid.element_volume() / nc as f64;
        let h: Vec<f64> = (0..dim).map(|a| self.grid.spacing(a)).collect();
        let mut out = vec![0.0; comps * nn];
        let mut nodes = vec![0usize; nc];
        for e in 0..ne {
            self.element_nodes(e, &mut nodes);
            for (g, grads) in self.element.gradients.iter().enumerate() {
                for c in 0..comps {
                    for (k, &n) in nodes.iter().enumerate() {
                        let s: f64 = (0..dim).map(|a| q.layers[g][(c * dim + a) * ne + e] * grads[k][a] / h[a]).sum();
                        out[c * nn + n] += w * s;
                    }
                }
            }
        }
        out
    }

    /// Volume load ⟨b, v⟩ = ∫ s v for a Gauss field with one value per component.
    pub fn volume_load(&self, s: &GaussField) -> Vec<f64> {
        let nn = self.grid.node_count();
        let ne = self.grid.element_count();
        let nc = self.element.corner_count();
        let w = self.grid.element_volume() / nc as f64;
        let mut out = vec![0.0; s.components * nn];
        let mut nodes = vec![0usize; nc];
        for e in 0..ne {
            self.element_nodes(e, &mut nodes);
            for (g, vals) in self.element.values.iter().enumerate() {
                for c in 0..s.components {
                    let v = s.layers[g][c * ne + e] * w;
                    for (k, &n) in nodes.iter().enumerate() {
                        out[c * nn + n] += v * vals[k];
                    }
                }
            }
        }
        out
    }

    /// Applies the element coefficients to a gradient-type Gauss field.
    pub fn flux(&self, grad: &GaussField) -> GaussField {
        let size = self.components * self.grid.dim;
        let ne = self.grid.element_count();
        let mut out = grad.clone();
        let mut inp = vec![0.0; size];
        for (g, layer) in grad.layers.iter().enumerate() {
            for e in 0..ne {
                for (c, v) in inp.iter_mut().enumerate() {
                    *v = layer[c * ne + e];
                }
                let m = &self.coefficients[self.labels[e] as usize];
                for r in 0..size {
                    out.layers[g][r * ne + e] = m[r * size..(r + 1) * size].iter().zip(&inp).map(|(a, b)| a * b).sum();
                }
            }
        }
        out
    }

    /// Arithmetic mean of the coefficient matrices in use.
    pub fn reference_coefficient(&self) -> Vec<f64> {
        let mut used = vec![false; self.coefficients.len()];
        for &l in &self.labels {
            used[l as usize] = true;
        }
        let count = used.iter().filter(|u| **u).count() as f64;
        let size = self.coefficients[0].len();
        let mut out = vec![0.0; size];
        for (c, u) in self.coefficients.iter().zip(used) {
            if u {
                for (o, v) in out.iter_mut().zip(c) {
                    *o += v / count;
                }
            }
        }
        out
    }

    pub fn boundary_mask(&self) -> Vec<bool> {
        (0..self.grid.node_count()).map(|i| self.grid.is_boundary(i)).collect()
    }

    /// Solves K u = load on interior nodes with u = `boundary` on the
    /// boundary. `boundary` holds all components at every node (interior
    /// entries are ignored).
    pub fn solve_dirichlet(
        &self,
        label: &str,
        boundary: &[f64],
        load: &[f64],
        settings: &SolverSettings,
    ) -> Result<(Vec<f64>, SolveReport)> {
        let nn = self.grid.node_count();
        let total = nn * self.components;
        if boundary.len() != total || load.len() != total {
            return Err(Error::Shape(format!("Dirichlet solve expects vectors of length {total}")));
        }
        let mask = self.boundary_mask();
        let on_boundary = |i: usize| mask[i % nn];
        let mut lifted = vec![0.0; total];
        for i in 0..total {
            if on_boundary(i) {
                lifted[i] = boundary[i];
            }
        }
        let mut k_lift = vec![0.0; total];
        self.apply(&lifted, &mut k_lift);
        let mut b = vec![0.0; total];
        for i in 0..total {
            if !on_boundary(i) {
                b[i] = load[i] - k_lift[i];
            }
        }
        let pre = DirichletPreconditioner::new(&self.grid, self.components, &self.reference_coefficient());
        let mut w = vec![0.0; total];
        let mut tmp = vec![0.0; total];
        let report = pcg(
            label,
            |x, y| {
                tmp.copy_from_slice(x);
                for i in 0..total {
                    if on_boundary(i) {
                        tmp[i] = 0.0;
                    }
                }
                self.apply(&tmp, y);
                for i in 0..total {
                    if on_boundary(i) {
                        y[i] = 0.0;
                    }
                }
            },
            |r, z| pre.apply(r, z),
            &b,
            &mut w,
            settings,
        )?;
        for i in 0..total {
            if on_boundary(i) {
                w[i] = lifted[i];
            }
        }
        Ok((w, report))
    }

    /// Discrete residual load − K u on interior nodes (zero on the boundary).
    pub fn residual(&self, u: &[f64], load: &[f64]) -> Vec<f64> {
        let nn = self.grid.node_count();
        let mut ku = vec![0.0; u.len()];
        self.apply(u, &mut ku);
        let mask = self.boundary_mask();
        ku.iter()
            .zip(load)
            .enumerate()
            .map(|(i, (k, l))| if mask[i % nn] { 0.0 } else { l - k })
            .collect()
    }

    /// L² error of a nodal field against a function, by Gauss quadrature.
    pub fn l2_error(&self, u: &[f64], exact: impl Fn(&[f64], &mut [f64])) -> f64 {
        let values = self.interpolate(u);
        let reference = GaussField::from_fn(&self.grid, values.components, exact);
        values.difference(&reference).lq_norm(&self.grid, 2.0, None)
    }
}

/// Nodal finite-difference gradient: centered in the interior, one-sided
/// second order on the boundary. Output component `c * dim + a`.
pub fn nodal_gradient(grid: &BoxGrid, u: &[f64]) -> Vec<f64> {
    let dim = grid.dim;
    let nn = grid.node_count();
    let comps = u.len() / nn;
    let n1 = grid.cells + 1;
    let strides: Vec<usize> = (0..dim).map(|a| n1.pow((dim - 1 - a) as u32)).collect();
    let mut out = vec![0.0; comps * dim * nn];
    let mut mi = vec![0usize; dim];
    for c in 0..comps {
        let uc = &u[c * nn..(c + 1) * nn];
        for i in 0..nn {
            grid.node_index(i, &mut mi);
            for a in 0..dim {
                let h = grid.spacing(a);
                let s = strides[a];
                let d = if mi[a] == 0 {
                    (-3.0 * uc[i] + 4.0 * uc[i + s] - uc[i + 2 * s]) / (2.0 * h)
                } else if mi[a] == grid.cells {
                    (3.0 * uc[i] - 4.0 * uc[i - s] + uc[i - 2 * s]) / (2.0 * h)
                } else {
                    (uc[i + s] - uc[i - s]) / (2.0 * h)
                };
                out[(c * dim + a) * nn + i] = d;
            }
        }
    }
    out
}
