//! Periodic cell problems: Poisson potential ψ, dielectric correctors χ_j,
//! charge correctors θ and elastic correctors X_ij.
//!
//! Every problem has the flux form Dᵀ K D u = b where D is the discrete
//! gradient (sampled at one or more quadrature layers), K a pointwise
//! coefficient and Dᵀ the adjoint of D for the mean inner product. Two
//! discretizations are available: Fourier-Galerkin on the midpoint grid and
//! periodic Q1 elements with nodes at the voxel corners. Both are solved by
//! conjugate gradients preconditioned with the exact inverse of the
//! reference-medium operator, diagonalized by FFT.

mod fe;
mod spectral;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::microstructure::{build_charge_family, ChargeSpec, Coefficients, PhaseGeometry, PiecewiseField, MAX_CONTRAST};
use crate::pcg::{dot, pcg, SolveReport, SolverSettings};
use crate::tensor::{sym_pairs, Matrix, Tensor4};
use crate::torus::{mean, Field, Rank, Spectral, TorusGrid};

use fe::PeriodicQ1;

/// Largest |mean(g)| accepted for a charge density.
pub const NEUTRALITY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Discretization {
    #[default]
    Spectral,
    Q1,
}

/// Samples of a gradient-type quantity at the quadrature points of the cell.
///
/// Layer `l` holds one value per voxel (the quadrature point of rule `l`
/// inside that voxel); all layers carry the same weight. The spectral scheme
/// has a single layer of weight 1, Q1 has `2^dim` layers of weight `2^-dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureField {
    pub grid: TorusGrid,
    pub components: usize,
    pub weight: f64,
    pub layers: Vec<Vec<f64>>,
}

impl QuadratureField {
    pub fn zeros_like(&self) -> Self {
        Self {
            grid: self.grid,
            components: self.components,
            weight: self.weight,
            layers: vec![vec![0.0; self.layers[0].len()]; self.layers.len()],
        }
    }

    #[inline]
    pub fn npts(&self) -> usize {
        self.grid.len()
    }

    /// Component `c` of layer `l`.
    #[inline]
    pub fn component(&self, l: usize, c: usize) -> &[f64] {
        let n = self.npts();
        &self.layers[l][c * n..(c + 1) * n]
    }

    /// Copies the components at point `idx` of layer `l` into `out`.
    #[inline]
    pub fn gather(&self, l: usize, idx: usize, out: &mut [f64]) {
        let n = self.npts();
        for (c, o) in out.iter_mut().enumerate().take(self.components) {
            *o = self.layers[l][c * n + idx];
        }
    }

    /// Quadrature mean of every component.
    pub fn mean(&self) -> Vec<f64> {
        let n = self.npts();
        (0..self.components)
            .map(|c| {
                self.layers
                    .iter()
                    .map(|layer| layer[c * n..(c + 1) * n].iter().sum::<f64>())
                    .sum::<f64>()
                    * self.weight
                    / n as f64
            })
            .collect()
    }

    /// Quadrature mean of Σ_c a_c b_c.
    pub fn mean_dot(&self, other: &QuadratureField) -> f64 {
        let n = self.npts() as f64;
        self.layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| dot(a, b))
            .sum::<f64>()
            * self.weight
            / n
    }

    /// Adds a constant to every sample of every component.
    pub fn shifted(mut self, constant: &[f64]) -> Self {
        let n = self.npts();
        for layer in &mut self.layers {
            for (c, k) in constant.iter().enumerate() {
                for v in &mut layer[c * n..(c + 1) * n] {
                    *v += k;
                }
            }
        }
        self
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        for layer in &mut out.layers {
            for v in layer {
                *v *= s;
            }
        }
        out
    }

    /// Quadrature mean of the pointwise product `K(label) a · b`.
    pub fn energy(&self, coef: &CoefTable, other: &QuadratureField) -> f64 {
        let applied = coef.apply(self);
        applied.mean_dot(other)
    }

    /// Pointwise `K a` as a new quadrature field.
    pub fn apply(&self, coef: &CoefTable) -> QuadratureField {
        coef.apply(self)
    }

    /// The first layer as a torus field (exact for the spectral scheme).
    pub fn first_layer_field(&self, rank: Rank) -> Result<Field> {
        Field::from_data(self.grid, rank, self.layers[0].clone())
    }
}

/// Per-phase dense coefficient matrices acting on gradient samples, looked
/// up through the voxel phase labels.
#[derive(Debug, Clone)]
pub struct CoefTable {
    pub labels: Vec<u8>,
    /// Row-major `size × size` matrix per phase.
    pub values: Vec<Vec<f64>>,
    pub size: usize,
}

impl CoefTable {
    pub fn from_matrices(field: &PiecewiseField<Matrix>) -> Self {
        let size = field.grid.dim;
        Self {
            labels: field.labels.clone(),
            values: field
                .values
                .iter()
                .map(|m| (0..size * size).map(|k| m[(k / size, k % size)]).collect())
                .collect(),
            size,
        }
    }

    pub fn from_tensors(field: &PiecewiseField<Tensor4>) -> Self {
        Self {
            labels: field.labels.clone(),
            values: field.values.iter().map(|t| t.data.clone()).collect(),
            size: field.grid.dim * field.grid.dim,
        }
    }

    /// Constant coefficient on a grid.
    pub fn uniform(npts: usize, value: Vec<f64>, size: usize) -> Self {
        Self {
            labels: vec![0; npts],
            values: vec![value],
            size,
        }
    }

    /// Arithmetic mean of the phase matrices present on the grid.
    pub fn reference(&self) -> Vec<f64> {
        let mut used = vec![false; self.values.len()];
        for &l in &self.labels {
            used[l as usize] = true;
        }
        let count = used.iter().filter(|u| **u).count() as f64;
        let mut out = vec![0.0; self.size * self.size];
        for (v, u) in self.values.iter().zip(used) {
            if u {
                for (o, x) in out.iter_mut().zip(v) {
                    *o += x / count;
                }
            }
        }
        out
    }

    #[inline]
    pub fn matrix(&self, idx: usize) -> &[f64] {
        &self.values[self.labels[idx] as usize]
    }

    /// Pointwise product with a gradient-type quadrature field.
    pub fn apply(&self, q: &QuadratureField) -> QuadratureField {
        let mut out = q.zeros_like();
        let npts = q.npts();
        let s = self.size;
        let mut inp = vec![0.0; s];
        for (l, layer) in q.layers.iter().enumerate() {
            let dst = &mut out.layers[l];
            for idx in 0..npts {
                for (c, v) in inp.iter_mut().enumerate() {
                    *v = layer[c * npts + idx];
                }
                let m = self.matrix(idx);
                for r in 0..s {
                    let row = &m[r * s..(r + 1) * s];
                    dst[r * npts + idx] = row.iter().zip(&inp).map(|(a, b)| a * b).sum();
                }
            }
        }
        out
    }
}

enum Scheme {
    Spectral,
    Q1(PeriodicQ1),
}

/// Cell-problem solver for one grid and discretization. Holds the FFT plans
/// and, for Q1, the element connectivity.
pub struct CellSolver {
    grid: TorusGrid,
    discretization: Discretization,
    settings: SolverSettings,
    spectral: Spectral,
    scheme: Scheme,
}

/// Reference-medium inverse, one `c × c` block per Fourier mode (zero on the
/// operator's null modes).
struct Preconditioner {
    c: usize,
    blocks: Vec<f64>,
}

/// One solved cell field with its gradient samples and certificate.
#[derive(Debug, Clone)]
pub struct CellField {
    /// Scalar or vector field (nodal values at voxel corners for Q1).
    pub field: Field,
    /// Gradient samples; for correctors the macroscopic part is included
    /// (∇w_j = e_j + ∇χ_j, ∇W_ij = e_i ⊗ e_j + ∇X_ij).
    pub gradient: QuadratureField,
    pub report: SolveReport,
    /// Fraction (in norm) of the right-hand side on the operator's null
    /// modes, which no discrete solution can match.
    pub null_fraction: f64,
}

impl CellSolver {
    pub fn new(grid: TorusGrid, discretization: Discretization, settings: SolverSettings) -> Self {
        let scheme = match discretization {
            Discretization::Spectral => Scheme::Spectral,
            Discretization::Q1 => Scheme::Q1(PeriodicQ1::new(grid)),
        };
        Self {
            grid,
            discretization,
            settings,
            spectral: Spectral::new(grid),
            scheme,
        }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn discretization(&self) -> Discretization {
        self.discretization
    }

    pub fn settings(&self) -> &SolverSettings {
        &self.settings
    }

    pub fn layers(&self) -> usize {
        match &self.scheme {
            Scheme::Spectral => 1,
            Scheme::Q1(q) => q.layers(),
        }
    }

    fn weight(&self) -> f64 {
        1.0 / self.layers() as f64
    }

    /// Discrete gradient of a `c`-component field.
    pub fn gradient(&self, u: &[f64], c: usize) -> QuadratureField {
        let layers = match &self.scheme {
            Scheme::Spectral => vec![spectral::gradient(&self.spectral, u, c)],
            Scheme::Q1(q) => (0..q.layers()).map(|g| q.gradient(u, c, g)).collect(),
        };
        QuadratureField {
            grid: self.grid,
            components: c * self.grid.dim,
            weight: self.weight(),
            layers,
        }
    }

    /// Adjoint of [`Self::gradient`] for the mean inner product.
    pub fn gradient_adjoint(&self, q: &QuadratureField, c: usize) -> Vec<f64> {
        match &self.scheme {
            Scheme::Spectral => spectral::gradient_adjoint(&self.spectral, &q.layers[0], c),
            Scheme::Q1(fe) => {
                let mut out = vec![0.0; c * self.grid.len()];
                for (g, layer) in q.layers.iter().enumerate() {
                    fe.add_gradient_adjoint(layer, c, g, q.weight, &mut out);
                }
                out
            }
        }
    }

    /// Load vector of a voxel density: ⟨load(g), v⟩ = ⨍ g v.
    pub fn load(&self, g: &[f64]) -> Vec<f64> {
        match &self.scheme {
            Scheme::Spectral => g.to_vec(),
            Scheme::Q1(fe) => fe.load(g),
        }
    }

    /// ⨍ g v for a voxel density `g` and a solved scalar field `v`.
    pub fn integrate(&self, g: &Field, v: &Field) -> f64 {
        dot(&self.load(g.data()), v.data()) / self.grid.len() as f64
    }

    /// Voxel samples of a solved scalar field (element averages for Q1).
    pub fn voxel_values(&self, v: &Field) -> Field {
        match &self.scheme {
            Scheme::Spectral => v.clone(),
            Scheme::Q1(fe) => Field::from_data(self.grid, Rank::Scalar, fe.element_average(v.data()))
                .expect("voxel shape"),
        }
    }

    fn operator(&self, coef: &CoefTable, c: usize, u: &[f64], out: &mut [f64]) {
        let grad = self.gradient(u, c);
        let flux = coef.apply(&grad);
        out.copy_from_slice(&self.gradient_adjoint(&flux, c));
    }

    fn spectra(&self, u: &[f64], c: usize) -> Vec<Vec<Complex64>> {
        let npts = self.grid.len();
        (0..c)
            .map(|k| self.spectral.forward_real(&u[k * npts..(k + 1) * npts]))
            .collect()
    }

    fn preconditioner(&self, reference: Vec<f64>, c: usize) -> Preconditioner {
        let npts = self.grid.len();
        let coef = CoefTable::uniform(npts, reference, c * self.grid.dim);
        let mut symbol = vec![vec![0.0; c * c]; npts];
        let mut response = vec![0.0; c * npts];
        for col in 0..c {
            let mut delta = vec![0.0; c * npts];
            delta[col * npts] = 1.0;
            self.operator(&coef, c, &delta, &mut response);
            for (row, hat) in self.spectra(&response, c).into_iter().enumerate() {
                for (k, h) in hat.iter().enumerate() {
                    symbol[k][row * c + col] = h.re;
                }
            }
        }
        let scale = symbol
            .iter()
            .map(|s| (0..c).map(|d| s[d * c + d].abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        let mut blocks = vec![0.0; npts * c * c];
        for (k, s) in symbol.iter().enumerate() {
            let m = Matrix::from_row_slice(c, c, s);
            let diag = (0..c).map(|d| m[(d, d)]).fold(0.0, f64::max);
            if diag <= 1e-10 * scale {
                continue;
            }
            if let Some(inv) = m.try_inverse() {
                for r in 0..c {
                    for q in 0..c {
                        blocks[k * c * c + r * c + q] = inv[(r, q)];
                    }
                }
            }
        }
        Preconditioner { c, blocks }
    }

    fn precondition(&self, p: &Preconditioner, r: &[f64], out: &mut [f64]) {
        let npts = self.grid.len();
        let c = p.c;
        let hats = self.spectra(r, c);
        let mut res = vec![vec![Complex64::default(); npts]; c];
        for k in 0..npts {
            let block = &p.blocks[k * c * c..(k + 1) * c * c];
            for row in 0..c {
                let mut s = Complex64::default();
                for col in 0..c {
                    s += hats[col][k] * block[row * c + col];
                }
                res[row][k] = s;
            }
        }
        for (row, hat) in res.into_iter().enumerate() {
            out[row * npts..(row + 1) * npts].copy_from_slice(&self.spectral.inverse_real(hat));
        }
    }

    /// Removes the components of `b` on the preconditioner's null modes and
    /// returns the removed fraction.
    fn project_range(&self, p: &Preconditioner, b: &mut [f64]) -> f64 {
        let npts = self.grid.len();
        let c = p.c;
        let before = dot(b, b).sqrt();
        if before == 0.0 {
            return 0.0;
        }
        for row in 0..c {
            let mut hat = self.spectral.forward_real(&b[row * npts..(row + 1) * npts]);
            for (k, h) in hat.iter_mut().enumerate() {
                let block = &p.blocks[k * c * c..(k + 1) * c * c];
                if block.iter().all(|v| *v == 0.0) {
                    *h = Complex64::default();
                }
            }
            b[row * npts..(row + 1) * npts].copy_from_slice(&self.spectral.inverse_real(hat));
        }
        let after = dot(b, b).sqrt();
        ((before * before - after * after).max(0.0)).sqrt() / before
    }

    fn solve_flux(&self, label: &str, coef: &CoefTable, c: usize, mut b: Vec<f64>) -> Result<(Vec<f64>, SolveReport, f64)> {
        let p = self.preconditioner(coef.reference(), c);
        let null_fraction = self.project_range(&p, &mut b);
        let mut x = vec![0.0; b.len()];
        let report = pcg(
            label,
            |u, out| self.operator(coef, c, u, out),
            |r, out| self.precondition(&p, r, out),
            &b,
            &mut x,
            &self.settings,
        )?;
        let npts = self.grid.len();
        for comp in 0..c {
            let s = &mut x[comp * npts..(comp + 1) * npts];
            let m = s.iter().sum::<f64>() / npts as f64;
            s.iter_mut().for_each(|v| *v -= m);
        }
        Ok((x, report, null_fraction))
    }

    fn check_charge(&self, g: &Field) -> Result<()> {
        if g.grid() != &self.grid || g.rank() != Rank::Scalar {
            return Err(Error::Shape("charge density must be a scalar field on the cell grid".into()));
        }
        let m = mean(g)[0];
        if m.abs() > NEUTRALITY_TOLERANCE {
            return Err(Error::NonNeutralCharge { mean: m });
        }
        Ok(())
    }

    fn scalar_result(&self, x: Vec<f64>, gradient: QuadratureField, report: SolveReport, null_fraction: f64) -> CellField {
        CellField {
            field: Field::from_data(self.grid, Rank::Scalar, x).expect("solution shape"),
            gradient,
            report,
            null_fraction,
        }
    }

    /// ψ with Δψ = g, ⨍ψ = 0; the returned gradient is τ = ∇ψ.
    pub fn poisson(&self, g: &Field) -> Result<CellField> {
        self.check_charge(g)?;
        let npts = self.grid.len();
        let dim = self.grid.dim;
        let id: Vec<f64> = (0..dim * dim).map(|k| if k / dim == k % dim { 1.0 } else { 0.0 }).collect();
        let coef = CoefTable::uniform(npts, id, dim);
        let b: Vec<f64> = self.load(g.data()).iter().map(|v| -v).collect();
        let (x, report, nf) = self.solve_flux("poisson", &coef, 1, b)?;
        let grad = self.gradient(&x, 1);
        Ok(self.scalar_result(x, grad, report, nf))
    }

    fn check_contrast(&self, eps: &PiecewiseField<Matrix>) -> Result<()> {
        if eps.grid != self.grid {
            return Err(Error::Shape("coefficient grid differs from solver grid".into()));
        }
        let (lo, hi) = eps.ellipticity();
        if lo <= 0.0 {
            return Err(Error::Ellipticity {
                what: "permittivity field".into(),
                min_eigenvalue: lo,
            });
        }
        if hi / lo > MAX_CONTRAST {
            return Err(Error::Contrast {
                contrast: hi / lo,
                limit: MAX_CONTRAST,
            });
        }
        Ok(())
    }

    /// χ_j and ∇w_j = e_j + ∇χ_j.
    pub fn dielectric_corrector(&self, eps: &PiecewiseField<Matrix>, j: usize) -> Result<CellField> {
        self.check_contrast(eps)?;
        let dim = self.grid.dim;
        if j >= dim {
            return Err(Error::Shape(format!("direction {j} out of range")));
        }
        let coef = CoefTable::from_matrices(eps);
        let mut e = vec![0.0; dim];
        e[j] = 1.0;
        let macro_grad = self.constant_gradient(&e);
        let flux = coef.apply(&macro_grad);
        let b: Vec<f64> = self.gradient_adjoint(&flux, 1).iter().map(|v| -v).collect();
        let (x, report, nf) = self.solve_flux(&format!("dielectric corrector {j}"), &coef, 1, b)?;
        let grad = self.gradient(&x, 1).shifted(&e);
        Ok(self.scalar_result(x, grad, report, nf))
    }

    /// θ with div ε∇θ = g, ⨍θ = 0; the returned gradient is ∇θ.
    pub fn charge_corrector(&self, eps: &PiecewiseField<Matrix>, g: &Field) -> Result<CellField> {
        self.check_contrast(eps)?;
        self.check_charge(g)?;
        let coef = CoefTable::from_matrices(eps);
        let b: Vec<f64> = self.load(g.data()).iter().map(|v| -v).collect();
        let (x, report, nf) = self.solve_flux("charge corrector", &coef, 1, b)?;
        let grad = self.gradient(&x, 1);
        Ok(self.scalar_result(x, grad, report, nf))
    }

    /// X_ij and ∇W_ij = e_i ⊗ e_j + ∇X_ij (components `c*dim + a` = ∂_a W_c).
    pub fn elastic_corrector(&self, stiffness: &PiecewiseField<Tensor4>, pair: (usize, usize)) -> Result<CellField> {
        let dim = self.grid.dim;
        let (i, j) = pair;
        if i >= dim || j >= dim {
            return Err(Error::Shape(format!("pair ({i},{j}) out of range")));
        }
        let (lo, hi) = stiffness
            .present()
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), t| {
                let ev = t.sym_eigenvalues();
                (lo.min(ev[0]), hi.max(*ev.last().unwrap()))
            });
        if lo <= 0.0 {
            return Err(Error::Ellipticity {
                what: "elasticity field".into(),
                min_eigenvalue: lo,
            });
        }
        if hi / lo > MAX_CONTRAST {
            return Err(Error::Contrast {
                contrast: hi / lo,
                limit: MAX_CONTRAST,
            });
        }
        let coef = CoefTable::from_tensors(stiffness);
        let mut e = vec![0.0; dim * dim];
        e[i * dim + j] = 1.0;
        let macro_grad = self.constant_gradient(&e);
        let flux = coef.apply(&macro_grad);
        let b: Vec<f64> = self.gradient_adjoint(&flux, dim).iter().map(|v| -v).collect();
        let (x, report, nf) = self.solve_flux(&format!("elastic corrector ({i},{j})"), &coef, dim, b)?;
        let grad = self.gradient(&x, dim).shifted(&e);
        Ok(CellField {
            field: Field::from_data(self.grid, Rank::Vector, x)?,
            gradient: grad,
            report,
            null_fraction: nf,
        })
    }

    fn constant_gradient(&self, e: &[f64]) -> QuadratureField {
        let npts = self.grid.len();
        let layer: Vec<f64> = e.iter().flat_map(|v| std::iter::repeat(*v).take(npts)).collect();
        QuadratureField {
            grid: self.grid,
            components: e.len(),
            weight: self.weight(),
            layers: vec![layer; self.layers()],
        }
    }

    /// Charge densities of every family, solving the dielectric correctors
    /// first when a corrector-weighted family needs them.
    pub fn charge_densities(
        &self,
        specs: &[ChargeSpec],
        geometry: &PhaseGeometry,
        coefficients: &Coefficients,
    ) -> Result<Vec<Field>> {
        let weighted = specs.iter().any(|s| matches!(s, ChargeSpec::CorrectorWeighted { .. }));
        let correctors = if weighted {
            Some(
                (0..self.grid.dim)
                    .map(|j| Ok(self.dielectric_corrector(&coefficients.permittivity, j)?.field))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        specs
            .iter()
            .map(|s| Ok(build_charge_family(s, geometry, self.grid, correctors.as_deref())?.density))
            .collect()
    }

    /// Solves every cell problem: ψ_p and θ_p per charge family, χ_j per
    /// direction and, if requested, X_ij per symmetric pair.
    pub fn solve_all(&self, coefficients: &Coefficients, charges: &[Field], elastic: bool) -> Result<CellSolution> {
        let dim = self.grid.dim;
        let chi = (0..dim)
            .map(|j| self.dielectric_corrector(&coefficients.permittivity, j))
            .collect::<Result<Vec<_>>>()?;
        let psi = charges.iter().map(|g| self.poisson(g)).collect::<Result<Vec<_>>>()?;
        let theta = charges
            .iter()
            .map(|g| self.charge_corrector(&coefficients.permittivity, g))
            .collect::<Result<Vec<_>>>()?;
        let displacement = if elastic {
            sym_pairs(dim)
                .into_iter()
                .map(|p| self.elastic_corrector(&coefficients.elasticity, p))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        Ok(CellSolution {
            grid: self.grid,
            discretization: self.discretization,
            charges: charges.to_vec(),
            psi,
            chi,
            theta,
            elastic: displacement,
        })
    }
}

/// All cell fields of one microstructure.
#[derive(Debug, Clone)]
pub struct CellSolution {
    pub grid: TorusGrid,
    pub discretization: Discretization,
    pub charges: Vec<Field>,
    pub psi: Vec<CellField>,
    pub chi: Vec<CellField>,
    pub theta: Vec<CellField>,
    /// Indexed like [`sym_pairs`].
    pub elastic: Vec<CellField>,
}

impl CellSolution {
    /// ∇W for an arbitrary ordered pair (X_ij = X_ji).
    pub fn elastic_gradient(&self, i: usize, j: usize) -> &QuadratureField {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        let idx = sym_pairs(self.grid.dim).iter().position(|p| *p == (a, b)).expect("pair");
        &self.elastic[idx].gradient
    }

    /// Largest relative residual over every solve.
    pub fn max_residual(&self) -> f64 {
        self.all_fields().map(|f| f.report.plain_residual).fold(0.0, f64::max)
    }

    /// Largest |mean| of any stored field component.
    pub fn max_mean(&self) -> f64 {
        self.all_fields()
            .flat_map(|f| mean(&f.field))
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn all_fields(&self) -> impl Iterator<Item = &CellField> {
        self.psi.iter().chain(&self.chi).chain(&self.theta).chain(&self.elastic)
    }
}

/// σ := ε∇θ − τ.
pub fn charge_flux(eps: &PiecewiseField<Matrix>, grad_theta: &QuadratureField, tau: &QuadratureField) -> QuadratureField {
    let flux = CoefTable::from_matrices(eps).apply(grad_theta);
    let mut out = flux;
    for (o, t) in out.layers.iter_mut().zip(&tau.layers) {
        for (a, b) in o.iter_mut().zip(t) {
            *a -= b;
        }
    }
    out
}
