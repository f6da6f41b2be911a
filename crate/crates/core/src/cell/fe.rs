//! Periodic Q1 finite elements on the voxel grid: nodes at voxel corners,
//! one element per voxel, 2-point Gauss rule per axis.

use crate::fem::Q1;
use crate::torus::TorusGrid;

pub(crate) struct PeriodicQ1 {
    pub(crate) grid: TorusGrid,
    pub(crate) element: Q1,
    /// `nodes[e * nc + k]` = node at corner k of element e.
    nodes: Vec<u32>,
}

impl PeriodicQ1 {
    pub(crate) fn new(grid: TorusGrid) -> Self {
        let element = Q1::new(grid.dim);
        let nc = element.corner_count();
        let mut nodes = Vec::with_capacity(grid.len() * nc);
        let mut mi = vec![0usize; grid.dim];
        let mut shifted = vec![0usize; grid.dim];
        for e in 0..grid.len() {
            grid.multi_index(e, &mut mi);
            for corner in &element.corners {
                for a in 0..grid.dim {
                    shifted[a] = (mi[a] + corner[a]) % grid.n;
                }
                nodes.push(grid.flat_index(&shifted) as u32);
            }
        }
        Self { grid, element, nodes }
    }

    pub(crate) fn layers(&self) -> usize {
        self.element.corner_count()
    }

    #[inline]
    fn corners(&self, e: usize) -> &[u32] {
        let nc = self.element.corner_count();
        &self.nodes[e * nc..(e + 1) * nc]
    }

    /// Gradient at Gauss point `g` of every element, components `c*dim + a`.
    pub(crate) fn gradient(&self, u: &[f64], c: usize, g: usize) -> Vec<f64> {
        let npts = self.grid.len();
        let dim = self.grid.dim;
        let scale = self.grid.n as f64;
        let grads = &self.element.gradients[g];
        let mut out = vec![0.0; c * dim * npts];
        for comp in 0..c {
            let uc = &u[comp * npts..(comp + 1) * npts];
            for e in 0..npts {
                let corners = self.corners(e);
                for a in 0..dim {
                    let mut s = 0.0;
                    for (k, &node) in corners.iter().enumerate() {
                        s += uc[node as usize] * grads[k][a];
                    }
                    out[(comp * dim + a) * npts + e] = s * scale;
                }
            }
        }
        out
    }

    /// Adds the weighted adjoint of the Gauss-point-`g` gradient applied to `q`.
    pub(crate) fn add_gradient_adjoint(&self, q: &[f64], c: usize, g: usize, weight: f64, out: &mut [f64]) {
        let npts = self.grid.len();
        let dim = self.grid.dim;
        let scale = self.grid.n as f64 * weight;
        let grads = &self.element.gradients[g];
        for comp in 0..c {
            for e in 0..npts {
                let corners = self.corners(e);
                for (k, &node) in corners.iter().enumerate() {
                    let mut s = 0.0;
                    for a in 0..dim {
                        s += q[(comp * dim + a) * npts + e] * grads[k][a];
                    }
                    out[comp * npts + node as usize] += s * scale;
                }
            }
        }
    }

    /// Load vector of an element-wise constant density: ⟨load, v⟩ = ⨍ g v.
    pub(crate) fn load(&self, g: &[f64]) -> Vec<f64> {
        let nc = self.element.corner_count() as f64;
        let mut out = vec![0.0; g.len()];
        for (e, ge) in g.iter().enumerate() {
            for &node in self.corners(e) {
                out[node as usize] += ge / nc;
            }
        }
        out
    }

    /// Element averages of a nodal field.
    pub(crate) fn element_average(&self, u: &[f64]) -> Vec<f64> {
        let nc = self.element.corner_count() as f64;
        (0..u.len())
            .map(|e| self.corners(e).iter().map(|&n| u[n as usize]).sum::<f64>() / nc)
            .collect()
    }
}
