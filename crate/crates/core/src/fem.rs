//! Reference data for multilinear (Q1) elements on the unit cube: corner
//! offsets, 2-point Gauss rule per axis, shape values and gradients.

/// Q1 reference element in `dim` dimensions.
#[derive(Debug, Clone)]
pub struct Q1 {
    pub dim: usize,
    /// Corner offsets in {0,1}^dim, corner k has bit a of k along axis a
    /// counted from the last axis.
    pub corners: Vec<Vec<usize>>,
    /// Gauss points in [0,1]^dim, ordered like the corners.
    pub gauss: Vec<Vec<f64>>,
    /// `values[g][k]` = N_k(ξ_g).
    pub values: Vec<Vec<f64>>,
    /// `gradients[g][k][a]` = ∂_a N_k(ξ_g) on the unit cube.
    pub gradients: Vec<Vec<Vec<f64>>>,
}

impl Q1 {
    pub fn new(dim: usize) -> Self {
        let nc = 1 << dim;
        let corners: Vec<Vec<usize>> = (0..nc)
            .map(|k| (0..dim).map(|a| (k >> (dim - 1 - a)) & 1).collect())
            .collect();
        let lo = 0.5 - 0.5 / 3f64.sqrt();
        let hi = 0.5 + 0.5 / 3f64.sqrt();
        let gauss: Vec<Vec<f64>> = corners
            .iter()
            .map(|c| c.iter().map(|&b| if b == 1 { hi } else { lo }).collect())
            .collect();
        let factor = |b: usize, x: f64| if b == 1 { x } else { 1.0 - x };
        let dfactor = |b: usize| if b == 1 { 1.0 } else { -1.0 };
        let values = gauss
            .iter()
            .map(|xi| {
                corners
                    .iter()
                    .map(|c| (0..dim).map(|a| factor(c[a], xi[a])).product())
                    .collect()
            })
            .collect();
        let gradients = gauss
            .iter()
            .map(|xi| {
                corners
                    .iter()
                    .map(|c| {
                        (0..dim)
                            .map(|a| {
                                (0..dim)
                                    .map(|b| if b == a { dfactor(c[b]) } else { factor(c[b], xi[b]) })
                                    .product()
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self {
            dim,
            corners,
            gauss,
            values,
            gradients,
        }
    }

    #[inline]
    pub fn corner_count(&self) -> usize {
        self.corners.len()
    }

    /// Gauss weight on the unit cube.
    #[inline]
    pub fn weight(&self) -> f64 {
        1.0 / self.corners.len() as f64
    }

    /// `S_ab[k][l] = ∫ ∂_a N_k ∂_b N_l` over the unit cube, indexed `[a][b][k*nc + l]`.
    pub fn stiffness_blocks(&self) -> Vec<Vec<Vec<f64>>> {
        let nc = self.corner_count();
        let w = self.weight();
        (0..self.dim)
            .map(|a| {
                (0..self.dim)
                    .map(|b| {
                        let mut s = vec![0.0; nc * nc];
                        for g in &self.gradients {
                            for k in 0..nc {
                                for l in 0..nc {
                                    s[k * nc + l] += w * g[k][a] * g[l][b];
                                }
                            }
                        }
                        s
                    })
                    .collect()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_of_unity() {
        for dim in [2, 3] {
            let q = Q1::new(dim);
            for g in 0..q.gauss.len() {
                let s: f64 = q.values[g].iter().sum();
                assert!((s - 1.0).abs() < 1e-15);
                for a in 0..dim {
                    let d: f64 = q.gradients[g].iter().map(|gr| gr[a]).sum();
                    assert!(d.abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn gradient_of_linear_function_is_exact() {
        let q = Q1::new(3);
        // u = 2x0 - x1 + 3x2 sampled at the corners.
        let u: Vec<f64> = q
            .corners
            .iter()
            .map(|c| 2.0 * c[0] as f64 - c[1] as f64 + 3.0 * c[2] as f64)
            .collect();
        for g in &q.gradients {
            let grad: Vec<f64> = (0..3).map(|a| (0..8).map(|k| u[k] * g[k][a]).sum()).collect();
            assert!((grad[0] - 2.0).abs() < 1e-14);
            assert!((grad[1] + 1.0).abs() < 1e-14);
            assert!((grad[2] - 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn stiffness_of_2d_laplacian() {
        let q = Q1::new(2);
        let s = q.stiffness_blocks();
        // Classical Q1 Laplacian element matrix: diagonal 2/3.
        let diag = s[0][0][0] + s[1][1][0];
        assert!((diag - 2.0 / 3.0).abs() < 1e-14);
        let opposite = s[0][0][3] + s[1][1][3];
        assert!((opposite + 1.0 / 3.0).abs() < 1e-14);
    }
}
