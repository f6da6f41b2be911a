//! Dilute single-inclusion asymptotics: the whole-space corrector of a ball,
//! the closed-form limit ā of the rescaled charge coupling, and the sweeps
//! comparing them with periodic cell solves as the cell grows.
//!
//! A cell of side ℓ holding a unit ball is represented by the unit torus
//! holding a ball of radius 1/ℓ; results are converted back to the side-ℓ
//! convention before reporting.

use std::f64::consts::PI;

use serde::Serialize;

use crate::cell::{CellSolution, CellSolver, Discretization};
use crate::effective::{charge_coupling, effective_permittivity, electro_coupling};
use crate::error::{Error, Result};
use crate::microstructure::{
    assemble_coefficients, build_charge_family, build_phase_map, ChargeSpec, Coefficients, Inclusion, Materials,
    PhaseGeometry,
};
use crate::pcg::SolverSettings;
use crate::tensor::{matrix_to_rows, Matrix};
use crate::torus::{Field, TorusGrid};

/// Smallest accepted number of voxels per inclusion radius.
pub const MIN_VOXELS_PER_RADIUS: usize = 16;

#[inline]
fn eshelby_factor(contrast: f64, dim: usize) -> f64 {
    (1.0 - contrast) / (contrast + dim as f64 - 1.0)
}

/// Whole-space corrector of a unit ball of permittivity `contrast` in a unit
/// background, direction `p`, at `x`. Inside the ball the field is uniform.
pub fn eshelby_corrector(contrast: f64, x: &[f64], p: usize) -> f64 {
    let dim = x.len();
    let k = eshelby_factor(contrast, dim);
    let r2: f64 = x.iter().map(|v| v * v).sum();
    if r2 <= 1.0 {
        k * x[p]
    } else {
        k * x[p] / r2.sqrt().powi(dim as i32)
    }
}

/// Gradient of [`eshelby_corrector`] at `x` (off the unit sphere).
pub fn eshelby_gradient(contrast: f64, x: &[f64], p: usize, out: &mut [f64]) {
    let dim = x.len();
    let k = eshelby_factor(contrast, dim);
    let r2: f64 = x.iter().map(|v| v * v).sum();
    if r2 <= 1.0 {
        for (a, o) in out.iter_mut().enumerate() {
            *o = if a == p { k } else { 0.0 };
        }
    } else {
        let rn = r2.sqrt().powi(dim as i32);
        for (a, o) in out.iter_mut().enumerate() {
            let delta = if a == p { 1.0 } else { 0.0 };
            *o = k * (delta / rn - dim as f64 * x[p] * x[a] / (rn * r2));
        }
    }
}

/// Area of the unit sphere in ℝ^dim.
fn sphere_area(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => 2.0 * PI,
        _ => 4.0 * PI,
    }
}

/// Closed-form limit ā of −ℓ^dim a_ℓ: a multiple of the identity.
pub fn abar(contrast: f64, eta: f64, dim: usize) -> Matrix {
    let c = eshelby_factor(contrast, dim).powi(2);
    let geometric = match dim {
        1 => eta,
        2 => PI * (1.0 + eta).ln(),
        _ => sphere_area(dim) / dim as f64 * (1.0 - (1.0 + eta).powi(2 - dim as i32)),
    };
    Matrix::identity(dim, dim) * (c * geometric)
}

/// Inputs of a dilute study.
#[derive(Debug, Clone)]
pub struct DiluteStudy {
    pub dim: usize,
    /// Cell sides ℓ (the inclusion has unit radius).
    pub ells: Vec<usize>,
    /// Inclusion permittivity; the background has permittivity 1.
    pub contrast: f64,
    /// Coating thickness relative to the radius.
    pub eta: f64,
    pub amplitudes: Vec<f64>,
    /// Voxels per unit length in the side-ℓ cell (grid n = m ℓ).
    pub voxels_per_radius: usize,
    /// Elastic and electrostrictive phase data; permittivities are replaced
    /// by the background and inclusion values above.
    pub materials: Materials,
    pub settings: SolverSettings,
    pub discretization: Discretization,
}

impl DiluteStudy {
    fn validate(&self) -> Result<()> {
        if self.voxels_per_radius < MIN_VOXELS_PER_RADIUS {
            return Err(Error::Resolution(format!(
                "{} voxels per inclusion radius, at least {MIN_VOXELS_PER_RADIUS} needed",
                self.voxels_per_radius
            )));
        }
        if !(self.contrast > 0.0) || !(self.eta > 0.0) {
            return Err(Error::Shape("contrast and coating thickness must be positive".into()));
        }
        for &ell in &self.ells {
            if (1.0 + self.eta) >= ell as f64 / 2.0 {
                return Err(Error::Support(format!("coating 1 + {} does not fit in a cell of side {ell}", self.eta)));
            }
        }
        Ok(())
    }

    fn materials(&self) -> Materials {
        let mut m = self.materials.clone();
        m.phases[0].permittivity = Matrix::identity(self.dim, self.dim);
        m.phases[1].permittivity = Matrix::identity(self.dim, self.dim) * self.contrast;
        m
    }

    fn geometry(&self, ell: usize) -> PhaseGeometry {
        PhaseGeometry::Inclusions {
            inclusions: vec![Inclusion::ball(vec![0.5; self.dim], 1.0 / ell as f64).with_coating(self.eta)],
        }
    }

    fn grid(&self, ell: usize) -> Result<TorusGrid> {
        TorusGrid::with_scale(self.dim, self.voxels_per_radius * ell, ell as f64)
    }
}

/// One periodic cell of the sweep: the solver, coefficients, unit-amplitude
/// coating charges and the solved fields.
struct DiluteCell {
    ell: usize,
    solver: CellSolver,
    coefficients: Coefficients,
    geometry: PhaseGeometry,
    solution: CellSolution,
}

fn solve_cell(study: &DiluteStudy, ell: usize, elastic: bool) -> Result<DiluteCell> {
    let grid = study.grid(ell)?;
    let geometry = study.geometry(ell);
    let coefficients = assemble_coefficients(&study.materials(), &build_phase_map(&geometry, grid)?)?;
    let charges = (0..study.dim)
        .map(|p| {
            let spec = ChargeSpec::Coating {
                direction: p,
                contrast: study.contrast,
                amplitude: 1.0,
            };
            Ok(build_charge_family(&spec, &geometry, grid, None)?.density)
        })
        .collect::<Result<Vec<Field>>>()?;
    let solver = CellSolver::new(grid, study.discretization, study.settings);
    let solution = solver.solve_all(&coefficients, &charges, elastic)?;
    Ok(DiluteCell {
        ell,
        solver,
        coefficients,
        geometry,
        solution,
    })
}

/// Per-ℓ record of the sweep (side-ℓ units).
#[derive(Debug, Clone, Serialize)]
pub struct DiluteRecord {
    pub ell: usize,
    pub resolution: usize,
    /// a_ℓ for the unit-amplitude coating charges.
    pub coupling: Vec<Vec<f64>>,
    pub permittivity: Vec<Vec<f64>>,
    /// ‖ℓ^N a_ℓ + ā‖ / ‖ā‖ (0 when ā vanishes and a_ℓ does too).
    pub mismatch: f64,
    /// ‖∇(χ_∞p − χ_ℓp)‖_{L²(B_{1+η})}, root-sum-square over p.
    pub corrector_distance: f64,
    /// ‖ε̃_ℓ(λ) − ε^h_ℓ − λā‖ / λ for the charges multiplied by ℓ^N λ.
    pub enhancement_remainder: f64,
    pub formula_discrepancy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiluteSweep {
    pub abar: Vec<Vec<f64>>,
    pub records: Vec<DiluteRecord>,
}

impl DiluteSweep {
    pub fn mismatches(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.mismatch).collect()
    }

    pub fn corrector_distances(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.corrector_distance).collect()
    }
}

/// Solves the cell for every ℓ and compares with the closed forms.
pub fn dilute_sweep(study: &DiluteStudy) -> Result<DiluteSweep> {
    study.validate()?;
    let ab = abar(study.contrast, study.eta, study.dim);
    let mut records = Vec::new();
    for &ell in &study.ells {
        let cell = solve_cell(study, ell, false)?;
        records.push(sweep_record(study, &cell, &ab)?);
    }
    Ok(DiluteSweep {
        abar: matrix_to_rows(&ab),
        records,
    })
}

fn sweep_record(study: &DiluteStudy, cell: &DiluteCell, ab: &Matrix) -> Result<DiluteRecord> {
    let ell = cell.ell as f64;
    let dim = study.dim;
    let (a_unit, _, discrepancy, _) = charge_coupling(&cell.solver, &cell.coefficients.permittivity, &cell.solution)?;
    let (eps_h, _, _) = effective_permittivity(&cell.coefficients.permittivity, &cell.solution)?;
    let a_ell = &a_unit * ell;
    let scaled = &a_ell * ell.powi(dim as i32);
    let residual = (&scaled + ab).norm();
    let mismatch = if ab.norm() > 0.0 { residual / ab.norm() } else { residual };
    Ok(DiluteRecord {
        ell: cell.ell,
        resolution: cell.solution.grid.n,
        coupling: matrix_to_rows(&a_ell),
        permittivity: matrix_to_rows(&eps_h),
        mismatch,
        corrector_distance: corrector_distance(study, cell),
        enhancement_remainder: residual,
        formula_discrepancy: discrepancy,
    })
}

/// L²(B_{1+η}) distance between the periodic and whole-space corrector
/// gradients, in side-ℓ units.
fn corrector_distance(study: &DiluteStudy, cell: &DiluteCell) -> f64 {
    let grid = cell.solution.grid;
    let dim = grid.dim;
    let ell = cell.ell as f64;
    let npts = grid.len();
    let outer = 1.0 + study.eta;
    let gradients: Vec<_> = cell.solution.chi.iter().map(|c| cell.solver.gradient(c.field.data(), 1)).collect();
    let layers = gradients[0].layers.len();
    let weight = gradients[0].weight;
    let q1 = crate::fem::Q1::new(dim);
    let h = grid.spacing();
    let mut y = vec![0.0; dim];
    let mut x = vec![0.0; dim];
    let mut exact = vec![0.0; dim];
    let mut total = 0.0;
    // Physical volume of one voxel in the side-ℓ cell.
    let dv = (ell * h).powi(dim as i32);
    for (p, grad) in gradients.iter().enumerate() {
        for l in 0..layers {
            for idx in 0..npts {
                grid.point(idx, &mut y);
                for a in 0..dim {
                    // Quadrature point: voxel midpoint (spectral) or Gauss point (Q1).
                    let offset = if layers == 1 { 0.0 } else { (q1.gauss[l][a] - 0.5) * h };
                    x[a] = (y[a] + offset - 0.5) * ell;
                }
                let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                if r >= outer {
                    continue;
                }
                eshelby_gradient(study.contrast, &x, p, &mut exact);
                for a in 0..dim {
                    let d = grad.component(l, a)[idx] - exact[a];
                    total += weight * d * d * dv;
                }
            }
        }
    }
    total.sqrt()
}

/// Least-squares line through (x, y).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub points: usize,
}

/// Fits log y = slope · log x + intercept, skipping non-positive values.
pub fn log_log_fit(x: &[f64], y: &[f64]) -> Result<LineFit> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0 && a.is_finite() && b.is_finite())
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::Fit { points: pts.len() });
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit { points: 1 });
    }
    let slope = sxy / sxx;
    Ok(LineFit {
        slope,
        intercept: my - slope * mx,
        points: pts.len(),
    })
}

/// One (λ, ℓ) point of the scaling study.
#[derive(Debug, Clone, Serialize)]
pub struct ScalingRecord {
    pub amplitude: f64,
    pub ell: usize,
    /// ‖N^{hp}_{λℓ}‖ over all families.
    pub n_norm: f64,
    /// ‖P^{hp}_{λℓ}‖ over all families.
    pub p_norm: f64,
    /// P^{hp}_{λℓ} / (λ² ℓ^N), one matrix per family.
    pub p_normalized: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingStudy {
    pub records: Vec<ScalingRecord>,
    /// Slope of log‖P‖ against log λ at the largest ℓ.
    pub p_amplitude_exponent: LineFit,
    /// Slope of log‖P‖ against log ℓ^N at the smallest λ.
    pub p_volume_exponent: LineFit,
    /// Slope of log‖N‖ against log λ at the largest ℓ.
    pub n_amplitude_exponent: LineFit,
    /// max/min of ‖N‖/λ over the amplitudes, per ℓ.
    pub n_ratio: Vec<f64>,
    /// ‖P̄_{ℓ_{k+1}} − P̄_{ℓ_k}‖ for the normalized sequence at the smallest λ.
    pub cauchy_differences: Vec<f64>,
    /// Richardson extrapolation of the normalized P (order N/2), per family.
    pub p_limit: Vec<Vec<Vec<f64>>>,
}

/// Runs the coupled cell problems over the (λ, ℓ) grid and fits the
/// amplitude and volume exponents of the electrostrictive couplings.
pub fn scaling_study(study: &DiluteStudy) -> Result<ScalingStudy> {
    study.validate()?;
    if study.ells.len() < 3 || study.amplitudes.len() < 3 {
        return Err(Error::Fit {
            points: study.ells.len().min(study.amplitudes.len()),
        });
    }
    let dim = study.dim;
    let mut records = Vec::new();
    for &ell in &study.ells {
        let base = solve_cell(study, ell, true)?;
        let ellf = ell as f64;
        let volume = ellf.powi(dim as i32);
        for &lambda in &study.amplitudes {
            // θ solved for the charges multiplied by ℓ^N λ; N and P then carry
            // one and two factors ℓ from the change of variables.
            let factor = lambda * volume;
            let charges: Vec<Field> = base.solution.charges.iter().map(|g| g.scaled(factor)).collect();
            let theta = charges
                .iter()
                .map(|g| base.solver.charge_corrector(&base.coefficients.permittivity, g))
                .collect::<Result<Vec<_>>>()?;
            let mut solution = base.solution.clone();
            solution.charges = charges;
            solution.theta = theta;
            let (_, n_unit, p_unit) = electro_coupling(&base.coefficients.electrostriction, &solution);
            let n_norm = n_unit.iter().map(|t| (t.norm() * ellf).powi(2)).sum::<f64>().sqrt();
            let p_norm = p_unit.iter().map(|m| (m.norm() * ellf * ellf).powi(2)).sum::<f64>().sqrt();
            let norm = lambda * lambda * volume;
            let p_normalized = p_unit.iter().map(|m| matrix_to_rows(&(m * (ellf * ellf / norm)))).collect();
            records.push(ScalingRecord {
                amplitude: lambda,
                ell,
                n_norm,
                p_norm,
                p_normalized,
            });
        }
        let _ = &base.geometry;
    }
    let pick = |pred: &dyn Fn(&ScalingRecord) -> bool| -> Vec<&ScalingRecord> { records.iter().filter(|r| pred(r)).collect() };
    let ell_max = *study.ells.iter().max().unwrap();
    let lambda_min = study.amplitudes.iter().cloned().fold(f64::INFINITY, f64::min);
    let at_ell = pick(&|r| r.ell == ell_max);
    let p_amplitude_exponent = log_log_fit(
        &at_ell.iter().map(|r| r.amplitude).collect::<Vec<_>>(),
        &at_ell.iter().map(|r| r.p_norm).collect::<Vec<_>>(),
    )?;
    let n_amplitude_exponent = log_log_fit(
        &at_ell.iter().map(|r| r.amplitude).collect::<Vec<_>>(),
        &at_ell.iter().map(|r| r.n_norm).collect::<Vec<_>>(),
    )
    .unwrap_or(LineFit {
        slope: f64::NAN,
        intercept: f64::NAN,
        points: 0,
    });
    let at_lambda = pick(&|r| r.amplitude == lambda_min);
    let p_volume_exponent = log_log_fit(
        &at_lambda.iter().map(|r| (r.ell as f64).powi(dim as i32)).collect::<Vec<_>>(),
        &at_lambda.iter().map(|r| r.p_norm).collect::<Vec<_>>(),
    )?;
    let n_ratio = study
        .ells
        .iter()
        .map(|&ell| {
            let v: Vec<f64> = records.iter().filter(|r| r.ell == ell).map(|r| r.n_norm / r.amplitude).collect();
            let max = v.iter().cloned().fold(0.0, f64::max);
            let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
            if max == 0.0 {
                1.0
            } else {
                max / min
            }
        })
        .collect();
    let sequence: Vec<Vec<Matrix>> = at_lambda
        .iter()
        .map(|r| {
            r.p_normalized
                .iter()
                .map(|rows| Matrix::from_fn(dim, dim, |i, j| rows[i][j]))
                .collect()
        })
        .collect();
    let distance = |a: &[Matrix], b: &[Matrix]| a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum::<f64>().sqrt();
    let cauchy_differences = sequence.windows(2).map(|w| distance(&w[1], &w[0])).collect();
    let k = sequence.len();
    let ratio = at_lambda[k - 1].ell as f64 / at_lambda[k - 2].ell as f64;
    let gain = ratio.powf(dim as f64 / 2.0);
    let p_limit = sequence[k - 1]
        .iter()
        .zip(&sequence[k - 2])
        .map(|(fine, coarse)| matrix_to_rows(&((fine * gain - coarse) / (gain - 1.0))))
        .collect();
    Ok(ScalingStudy {
        records,
        p_amplitude_exponent,
        p_volume_exponent,
        n_amplitude_exponent,
        n_ratio,
        cauchy_differences,
        p_limit,
    })
}
