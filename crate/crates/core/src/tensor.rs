//! Small dense tensors: N×N matrices (nalgebra), rank-3 and rank-4 arrays with
//! the symmetry and definiteness checks used for material and effective tensors.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

pub type Matrix = DMatrix<f64>;

/// Index pairs (i, j) with i <= j, in the order used for elastic correctors.
pub fn sym_pairs(dim: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(dim * (dim + 1) / 2);
    for i in 0..dim {
        for j in i..dim {
            pairs.push((i, j));
        }
    }
    pairs
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn sym_eigenvalues(m: &Matrix) -> Vec<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// ‖m − mᵀ‖ / ‖m‖ (0 for the zero matrix).
pub fn asymmetry(m: &Matrix) -> f64 {
    let norm = m.norm();
    if norm == 0.0 {
        0.0
    } else {
        (m - m.transpose()).norm() / norm
    }
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Matrix {
    let n = rows.len();
    Matrix::from_fn(n, n, |i, j| rows[i][j])
}

pub fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Rank-3 array `t[i][j][k]`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim * dim],
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dim + j) * self.dim + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.idx(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let id = self.idx(i, j, k);
        self.data[id] = v;
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// Relative residual of t_ijk = t_jik.
    pub fn first_pair_asymmetry(&self) -> f64 {
        let d = self.dim;
        let mut diff = 0.0;
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    diff += (self.get(i, j, k) - self.get(j, i, k)).powi(2);
                }
            }
        }
        relative(diff.sqrt(), self.norm())
    }

    /// Contraction with a vector on the last index: (t v)_ij = Σ_k t_ijk v_k.
    pub fn contract_last(&self, v: &[f64]) -> Matrix {
        let d = self.dim;
        Matrix::from_fn(d, d, |i, j| (0..d).map(|k| self.get(i, j, k) * v[k]).sum())
    }
}

/// Rank-4 array `t[i][j][k][h]` acting on N×N matrices by
/// (T e)_ij = Σ_kh t_ijkh e_kh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor4 {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim.pow(4)],
        }
    }

    /// λ δ_ij δ_kh + μ (δ_ik δ_jh + δ_ih δ_jk).
    pub fn isotropic(dim: usize, lambda: f64, mu: f64) -> Self {
        let mut t = Self::zeros(dim);
        let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        for i in 0..dim {
            for j in 0..dim {
                for k in 0..dim {
                    for h in 0..dim {
                        let v = lambda * d(i, j) * d(k, h) + mu * (d(i, k) * d(j, h) + d(i, h) * d(j, k));
                        t.set(i, j, k, h, v);
                    }
                }
            }
        }
        t
    }

    /// Isotropic tensor from Young's modulus and Poisson ratio (plane strain in 2D).
    pub fn isotropic_young(dim: usize, young: f64, poisson: f64) -> Self {
        let lambda = young * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson));
        let mu = young / (2.0 * (1.0 + poisson));
        Self::isotropic(dim, lambda, mu)
    }

    #[inline]
    fn idx(&self, i: usize, j: usize, k: usize, h: usize) -> usize {
        ((i * self.dim + j) * self.dim + k) * self.dim + h
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize, h: usize) -> f64 {
        self.data[self.idx(i, j, k, h)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, h: usize, v: f64) {
        let id = self.idx(i, j, k, h);
        self.data[id] = v;
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    /// Applies the tensor to a row-major N×N array, writing into `out`.
    #[inline]
    pub fn apply_into(&self, e: &[f64], out: &mut [f64]) {
        let d2 = self.dim * self.dim;
        for (ij, o) in out.iter_mut().enumerate().take(d2) {
            let row = &self.data[ij * d2..(ij + 1) * d2];
            *o = row.iter().zip(e).map(|(a, b)| a * b).sum();
        }
    }

    pub fn apply(&self, e: &Matrix) -> Matrix {
        let d = self.dim;
        Matrix::from_fn(d, d, |i, j| {
            let mut s = 0.0;
            for k in 0..d {
                for h in 0..d {
                    s += self.get(i, j, k, h) * e[(k, h)];
                }
            }
            s
        })
    }

    /// Relative residuals of (t_ijkh − t_jikh, t_ijkh − t_ijhk, t_ijkh − t_khij).
    pub fn symmetry_residuals(&self) -> [f64; 3] {
        let d = self.dim;
        let mut res = [0.0f64; 3];
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    for h in 0..d {
                        let v = self.get(i, j, k, h);
                        res[0] += (v - self.get(j, i, k, h)).powi(2);
                        res[1] += (v - self.get(i, j, h, k)).powi(2);
                        res[2] += (v - self.get(k, h, i, j)).powi(2);
                    }
                }
            }
        }
        let n = self.norm();
        res.map(|r| relative(r.sqrt(), n))
    }

    /// Matrix of the quadratic form e ↦ T e · e on symmetric matrices, written in
    /// an orthonormal (Mandel) basis of the symmetric matrices.
    pub fn mandel(&self) -> Matrix {
        let d = self.dim;
        let basis: Vec<Matrix> = sym_pairs(d)
            .into_iter()
            .map(|(i, j)| {
                let mut b = Matrix::zeros(d, d);
                if i == j {
                    b[(i, i)] = 1.0;
                } else {
                    let s = std::f64::consts::FRAC_1_SQRT_2;
                    b[(i, j)] = s;
                    b[(j, i)] = s;
                }
                b
            })
            .collect();
        let m = basis.len();
        Matrix::from_fn(m, m, |a, b| self.apply(&basis[b]).dot(&basis[a]))
    }

    /// Eigenvalues (ascending) of the tensor restricted to symmetric matrices.
    pub fn sym_eigenvalues(&self) -> Vec<f64> {
        sym_eigenvalues(&self.mandel())
    }
}

/// Symmetrizes a row-major N×N array in place.
#[inline]
pub fn symmetrize_in_place(a: &mut [f64], dim: usize) {
    for i in 0..dim {
        for j in (i + 1)..dim {
            let s = 0.5 * (a[i * dim + j] + a[j * dim + i]);
            a[i * dim + j] = s;
            a[j * dim + i] = s;
        }
    }
}

#[inline]
pub(crate) fn relative(diff: f64, scale: f64) -> f64 {
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn isotropic_tensor_has_all_symmetries() {
        let l = Tensor4::isotropic(3, 1.3, 0.7);
        for r in l.symmetry_residuals() {
            assert!(r < 1e-15);
        }
    }

    #[test]
    fn isotropic_eigenvalues_are_bulk_and_shear() {
        // 2D: eigenvalues 2μ (deviatoric, twice) and 2λ + 2μ (trace mode).
        let ev = Tensor4::isotropic(2, 1.0, 0.5).sym_eigenvalues();
        assert!((ev[0] - 1.0).abs() < 1e-12);
        assert!((ev[1] - 1.0).abs() < 1e-12);
        assert!((ev[2] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn mandel_matches_quadratic_form() {
        let l = Tensor4::isotropic(3, 0.4, 1.1);
        let mut e = Matrix::zeros(3, 3);
        e[(0, 1)] = 0.3;
        e[(1, 0)] = 0.3;
        e[(2, 2)] = -0.2;
        let direct = l.apply(&e).dot(&e);
        let v = nalgebra::DVector::from_vec(vec![
            0.0,
            0.3 * std::f64::consts::SQRT_2,
            0.0,
            0.0,
            0.0,
            -0.2,
        ]);
        let via = (l.mandel() * &v).dot(&v);
        assert!((direct - via).abs() < 1e-14);
    }

    #[test]
    fn asymmetry_of_symmetric_matrix_is_zero() {
        let m = matrix_from_rows(&[vec![1.0, 2.0], vec![2.0, 5.0]]);
        assert_eq!(asymmetry(&m), 0.0);
        assert_eq!(sym_eigenvalues(&Matrix::identity(2, 2)), vec![1.0, 1.0]);
    }
}
