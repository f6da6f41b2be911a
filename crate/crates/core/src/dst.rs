//! Fast inverse of the constant-coefficient Q1 Dirichlet operator on a box,
//! diagonalized by the type-I discrete sine transform along each axis.

use std::sync::Arc;

use rustdct::{DctPlanner, Dst1};

use crate::boxfem::BoxGrid;

/// Block-diagonal (per component) preconditioner built from the diagonal
/// entries of a reference coefficient; exact for diagonal scalar
/// coefficients.
pub struct DirichletPreconditioner {
    dim: usize,
    cells: usize,
    components: usize,
    interior: usize,
    plan: Arc<dyn Dst1<f64>>,
    /// Inverse eigenvalue per component and interior mode.
    inverse: Vec<Vec<f64>>,
}

impl DirichletPreconditioner {
    pub fn new(grid: &BoxGrid, components: usize, reference: &[f64]) -> Self {
        let dim = grid.dim;
        let m = grid.cells;
        let len = m - 1;
        let interior = len.pow(dim as u32);
        let size = components * dim;
        let plan = DctPlanner::new().plan_dst1(len);
        let stiff: Vec<Vec<f64>> = (0..dim)
            .map(|a| {
                let h = grid.spacing(a);
                (1..m).map(|k| 2.0 / h * (1.0 - (std::f64::consts::PI * k as f64 / m as f64).cos())).collect()
            })
            .collect();
        let mass: Vec<Vec<f64>> = (0..dim)
            .map(|a| {
                let h = grid.spacing(a);
                (1..m).map(|k| h / 3.0 * (2.0 + (std::f64::consts::PI * k as f64 / m as f64).cos())).collect()
            })
            .collect();
        let mut mi = vec![0usize; dim];
        let inverse = (0..components)
            .map(|c| {
                let diag: Vec<f64> = (0..dim).map(|a| reference[(c * dim + a) * size + c * dim + a]).collect();
                (0..interior)
                    .map(|idx| {
                        let mut rest = idx;
                        for a in (0..dim).rev() {
                            mi[a] = rest % len;
                            rest /= len;
                        }
                        let mut s = 0.0;
                        for a in 0..dim {
                            let mut t = diag[a] * stiff[a][mi[a]];
                            for b in 0..dim {
                                if b != a {
                                    t *= mass[b][mi[b]];
                                }
                            }
                            s += t;
                        }
                        if s > 0.0 {
                            1.0 / s
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        Self {
            dim,
            cells: m,
            components,
            interior,
            plan,
            inverse,
        }
    }

    fn transform(&self, data: &mut [f64]) {
        let len = self.cells - 1;
        let mut line = vec![0.0; len];
        let mut scratch = vec![0.0; self.plan.get_scratch_len()];
        for axis in 0..self.dim {
            let stride = len.pow((self.dim - 1 - axis) as u32);
            let outer = self.interior / (len * stride);
            for o in 0..outer {
                for s in 0..stride {
                    let base = o * len * stride + s;
                    for (j, v) in line.iter_mut().enumerate() {
                        *v = data[base + j * stride];
                    }
                    self.plan.process_dst1_with_scratch(&mut line, &mut scratch);
                    for (j, v) in line.iter().enumerate() {
                        data[base + j * stride] = *v;
                    }
                }
            }
        }
    }

    /// z = P⁻¹ r on interior nodes of every component; boundary entries of
    /// z are zero.
    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        let n1 = self.cells + 1;
        let nn = n1.pow(self.dim as u32);
        let len = self.cells - 1;
        let norm = (2.0 / self.cells as f64).powi(self.dim as i32);
        z.iter_mut().for_each(|v| *v = 0.0);
        let mut buf = vec![0.0; self.interior];
        let mut mi = vec![0usize; self.dim];
        let node_of = |idx: usize, mi: &mut [usize]| {
            let mut rest = idx;
            for a in (0..self.dim).rev() {
                mi[a] = rest % len;
                rest /= len;
            }
            mi.iter().fold(0, |acc, &i| acc * n1 + i + 1)
        };
        for c in 0..self.components {
            for (idx, v) in buf.iter_mut().enumerate() {
                *v = r[c * nn + node_of(idx, &mut mi)];
            }
            self.transform(&mut buf);
            for (v, inv) in buf.iter_mut().zip(&self.inverse[c]) {
                *v *= inv * norm;
            }
            self.transform(&mut buf);
            for (idx, v) in buf.iter().enumerate() {
                z[c * nn + node_of(idx, &mut mi)] = *v;
            }
        }
    }
}
