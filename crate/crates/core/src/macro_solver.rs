//! Homogenized boundary-value problems on a box: the scalar dielectric
//! equation (passive or active charges), the consistency check of the
//! active-charge reduction, the electrostrictive forcing Z and the
//! homogenized elasticity system. All solves use Q1 elements with Dirichlet
//! data on the whole boundary.

use serde::{Deserialize, Serialize};

use crate::boxfem::{nodal_gradient, BoxGrid, BoxOperator, GaussField};
use crate::dst::DirichletPreconditioner;
use crate::effective::EffectiveTensors;
use crate::error::{Error, Result};
use crate::pcg::{SolveReport, SolverSettings};
use crate::tensor::{sym_eigenvalues, Matrix, Tensor3, Tensor4};

/// Default settings of the macroscopic linear solves.
pub const MACRO_SETTINGS: SolverSettings = SolverSettings {
    tolerance: 1e-12,
    max_iterations: 20_000,
};

/// Closed-form scalar functions for boundary data, modulations and sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScalarFunction {
    Constant {
        value: f64,
    },
    /// offset + slope · x
    Linear {
        #[serde(default)]
        offset: f64,
        slope: Vec<f64>,
    },
    /// amplitude · Π_a sin(π k_a x_a)
    SineProduct {
        amplitude: f64,
        frequencies: Vec<f64>,
    },
    /// amplitude · exp(−|x − center|² / width²)
    Gaussian {
        amplitude: f64,
        center: Vec<f64>,
        width: f64,
    },
}

impl ScalarFunction {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Self::Constant { value } => *value,
            Self::Linear { offset, slope } => offset + slope.iter().zip(x).map(|(s, v)| s * v).sum::<f64>(),
            Self::SineProduct { amplitude, frequencies } => {
                amplitude
                    * frequencies
                        .iter()
                        .zip(x)
                        .map(|(k, v)| (std::f64::consts::PI * k * v).sin())
                        .product::<f64>()
            }
            Self::Gaussian {
                amplitude,
                center,
                width,
            } => {
                let r2: f64 = x.iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum();
                amplitude * (-r2 / (width * width)).exp()
            }
        }
    }

    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Self::Constant { .. } => out.iter_mut().for_each(|v| *v = 0.0),
            Self::Linear { slope, .. } => {
                for (o, s) in out.iter_mut().zip(slope) {
                    *o = *s;
                }
            }
            Self::SineProduct { amplitude, frequencies } => {
                let pi = std::f64::consts::PI;
                for (a, o) in out.iter_mut().enumerate() {
                    let mut p = *amplitude;
                    for (b, (k, v)) in frequencies.iter().zip(x).enumerate() {
                        p *= if a == b { pi * k * (pi * k * v).cos() } else { (pi * k * v).sin() };
                    }
                    *o = p;
                }
            }
            Self::Gaussian {
                center, width, ..
            } => {
                let v = self.value(x);
                for (a, o) in out.iter_mut().enumerate() {
                    *o = -2.0 * (x[a] - center[a]) / (width * width) * v;
                }
            }
        }
    }

    pub fn dimension_ok(&self, dim: usize) -> bool {
        match self {
            Self::Constant { .. } => true,
            Self::Linear { slope, .. } => slope.len() == dim,
            Self::SineProduct { frequencies, .. } => frequencies.len() == dim,
            Self::Gaussian { center, .. } => center.len() == dim,
        }
    }
}

/// Homogenized tensors consumed by the macroscopic solves.
#[derive(Debug, Clone)]
pub struct MacroTensors {
    pub permittivity: Matrix,
    /// Column p is the coupling vector of charge family p.
    pub coupling: Matrix,
    pub elasticity: Option<Tensor4>,
    pub electrostriction: Option<Tensor4>,
    pub coupling_n: Vec<Tensor3>,
    pub coupling_p: Vec<Matrix>,
}

impl From<&EffectiveTensors> for MacroTensors {
    fn from(t: &EffectiveTensors) -> Self {
        Self {
            permittivity: t.permittivity.clone(),
            coupling: t.charge_coupling.clone(),
            elasticity: t.elasticity.clone(),
            electrostriction: t.electrostriction.clone(),
            coupling_n: t.coupling_n.clone(),
            coupling_p: t.coupling_p.clone(),
        }
    }
}

/// How the charge families are modulated on the macroscopic scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Modulation {
    /// Prescribed f_p, one function per family.
    Passive { functions: Vec<ScalarFunction> },
    /// f_p = ∂φ/∂x_p.
    Active,
}

/// Additional source mean(h) · v on the right-hand side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtraSource {
    pub mean: f64,
    pub profile: ScalarFunction,
}

#[derive(Debug, Clone)]
pub struct MacroProblem {
    pub grid: BoxGrid,
    pub tensors: MacroTensors,
    pub boundary: ScalarFunction,
    pub modulation: Modulation,
    pub extra_source: Option<ExtraSource>,
    pub settings: SolverSettings,
}

/// Nodal solution of a scalar problem.
#[derive(Debug, Clone)]
pub struct ScalarSolution {
    pub grid: BoxGrid,
    /// Symmetric part of the tensor actually solved with.
    pub tensor: Matrix,
    pub phi: Vec<f64>,
    pub report: SolveReport,
    /// ‖load − Kφ‖ / ‖load − K(lift)‖ over interior nodes.
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct ElasticSolution {
    pub grid: BoxGrid,
    /// Component c of node i at `c * nodes + i`.
    pub u: Vec<f64>,
    pub report: SolveReport,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct MacroSolution {
    pub scalar: ScalarSolution,
    pub z: GaussField,
    pub elastic: Option<ElasticSolution>,
}

fn check_elliptic(what: &str, m: &Matrix) -> Result<Matrix> {
    let sym = (m + m.transpose()) * 0.5;
    let min = sym_eigenvalues(&sym).into_iter().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(Error::Ellipticity {
            what: what.to_string(),
            min_eigenvalue: min,
        });
    }
    Ok(sym)
}

fn check_elastic(l: &Tensor4) -> Result<()> {
    let min = l.sym_eigenvalues().into_iter().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(Error::Ellipticity {
            what: "homogenized elasticity".into(),
            min_eigenvalue: min,
        });
    }
    Ok(())
}

fn matrix_coefficient(m: &Matrix) -> Vec<f64> {
    let d = m.nrows();
    (0..d * d).map(|k| m[(k / d, k % d)]).collect()
}

fn interior_norm(grid: &BoxGrid, v: &[f64]) -> f64 {
    let nn = grid.node_count();
    v.iter()
        .enumerate()
        .filter(|(i, _)| !grid.is_boundary(i % nn))
        .map(|(_, x)| x * x)
        .sum::<f64>()
        .sqrt()
}

/// Solves div(tensor ∇φ) = source in the box with φ = boundary on ∂Ω.
/// Only the symmetric part of the tensor enters the operator.
pub fn solve_scalar(
    grid: &BoxGrid,
    tensor: &Matrix,
    boundary: &dyn Fn(&[f64]) -> f64,
    source: Option<&dyn Fn(&[f64]) -> f64>,
    settings: &SolverSettings,
) -> Result<ScalarSolution> {
    let sym = check_elliptic("macroscopic permittivity", tensor)?;
    let op = BoxOperator::uniform(grid.clone(), 1, matrix_coefficient(&sym))?;
    let data = grid.sample(boundary);
    let load = match source {
        Some(s) => {
            let values = GaussField::from_fn(grid, 1, |x, out| out[0] = -s(x));
            op.volume_load(&values)
        }
        None => vec![0.0; data.len()],
    };
    let (phi, report) = op.solve_dirichlet("macro scalar", &data, &load, settings)?;
    let residual = relative_residual(&op, &phi, &data, &load);
    Ok(ScalarSolution {
        grid: grid.clone(),
        tensor: sym,
        phi,
        report,
        residual,
    })
}

fn relative_residual(op: &BoxOperator, u: &[f64], boundary: &[f64], load: &[f64]) -> f64 {
    let nn = op.grid.node_count();
    let lift: Vec<f64> = boundary
        .iter()
        .enumerate()
        .map(|(i, v)| if op.grid.is_boundary(i % nn) { *v } else { 0.0 })
        .collect();
    let scale = interior_norm(&op.grid, &op.residual(&lift, load));
    let r = interior_norm(&op.grid, &op.residual(u, load));
    if scale > 0.0 {
        r / scale
    } else {
        r
    }
}

fn validate(problem: &MacroProblem) -> Result<()> {
    let dim = problem.grid.dim;
    let t = &problem.tensors;
    if t.permittivity.nrows() != dim || t.coupling.nrows() != dim {
        return Err(Error::Shape("macroscopic tensors do not match the box dimension".into()));
    }
    if !problem.boundary.dimension_ok(dim) {
        return Err(Error::Shape("boundary data has the wrong dimension".into()));
    }
    match &problem.modulation {
        Modulation::Passive { functions } => {
            if functions.len() != t.coupling.ncols() {
                return Err(Error::Shape(format!(
                    "{} modulation functions for {} charge families",
                    functions.len(),
                    t.coupling.ncols()
                )));
            }
            if functions.iter().any(|f| !f.dimension_ok(dim)) {
                return Err(Error::Shape("modulation function has the wrong dimension".into()));
            }
        }
        Modulation::Active => {
            if t.coupling.ncols() != dim {
                return Err(Error::Shape("active charges need one family per direction".into()));
            }
        }
    }
    Ok(())
}

/// The macroscopic dielectric problem: div ε^h∇φ = Σ_p a_p·∇f_p (+ extra
/// source) for passive charges, div (ε^h − a)∇φ = 0 (+ extra source) for
/// active ones.
pub fn solve_scalar_bvp(problem: &MacroProblem) -> Result<ScalarSolution> {
    validate(problem)?;
    let t = &problem.tensors;
    let dim = problem.grid.dim;
    let extra = problem.extra_source.clone();
    let extra_value = move |x: &[f64]| extra.as_ref().map_or(0.0, |e| e.mean * e.profile.value(x));
    let boundary = |x: &[f64]| problem.boundary.value(x);
    match &problem.modulation {
        Modulation::Passive { functions } => {
            let a = t.coupling.clone();
            let source = move |x: &[f64]| {
                let mut g = vec![0.0; dim];
                let mut s = extra_value(x);
                for (p, f) in functions.iter().enumerate() {
                    f.gradient(x, &mut g);
                    s += (0..dim).map(|j| a[(j, p)] * g[j]).sum::<f64>();
                }
                s
            };
            solve_scalar(&problem.grid, &t.permittivity, &boundary, Some(&source), &problem.settings)
        }
        Modulation::Active => {
            let enhanced = &t.permittivity - &t.coupling;
            let source = extra_value;
            solve_scalar(&problem.grid, &enhanced, &boundary, Some(&source), &problem.settings)
        }
    }
}

/// Residual of the passive equation evaluated with f_p := ∂φ/∂x_p
/// (finite differences) on a solution of the active one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConsistencyResidual {
    /// Dual norm sqrt(Rᵀ K_Δ⁻¹ R) against the discrete Dirichlet Laplacian.
    pub dual: f64,
    /// Discrete L² norm of R_i / h^N over interior nodes.
    pub nodal: f64,
}

/// Evaluates R = K_ε φ − B(a, Dφ) on interior nodes, where B is the weak
/// form of div(Σ_p a_p f_p) and Dφ the nodal finite-difference gradient.
pub fn active_charge_consistency(
    grid: &BoxGrid,
    permittivity: &Matrix,
    coupling: &Matrix,
    phi: &[f64],
) -> Result<ConsistencyResidual> {
    let dim = grid.dim;
    if coupling.ncols() != dim {
        return Err(Error::Shape("active charges need one family per direction".into()));
    }
    let op = BoxOperator::uniform(grid.clone(), 1, matrix_coefficient(permittivity))?;
    let mut residual = vec![0.0; phi.len()];
    op.apply(phi, &mut residual);
    let f = nodal_gradient(grid, phi);
    let f_gauss = op.interpolate(&f);
    let ne = grid.element_count();
    let mut q = GaussField::zeros(dim, ne, f_gauss.layers.len());
    for (g, layer) in f_gauss.layers.iter().enumerate() {
        for e in 0..ne {
            for j in 0..dim {
                q.layers[g][j * ne + e] = (0..dim).map(|p| coupling[(j, p)] * layer[p * ne + e]).sum();
            }
        }
    }
    let b = op.flux_load(&q);
    for (i, (r, bi)) in residual.iter_mut().zip(&b).enumerate() {
        *r = if grid.is_boundary(i) { 0.0 } else { *r - bi };
    }
    let cell = grid.element_volume();
    let nodal = residual.iter().map(|r| (r / cell).powi(2) * cell).sum::<f64>().sqrt();
    let laplace = matrix_coefficient(&Matrix::identity(dim, dim));
    let mut w = vec![0.0; residual.len()];
    DirichletPreconditioner::new(grid, 1, &laplace).apply(&residual, &mut w);
    let dual = residual.iter().zip(&w).map(|(r, v)| r * v).sum::<f64>().max(0.0).sqrt();
    Ok(ConsistencyResidual { dual, nodal })
}

/// Z = M^h(∇φ⊗∇φ) + Σ_p (2 f_p N^h_p ∇φ + P^h_p f_p²) at the Gauss points.
/// `grad_phi` has `dim` components and `f` one component per family.
pub fn assemble_z(
    striction: &Tensor4,
    coupling_n: &[Tensor3],
    coupling_p: &[Matrix],
    grad_phi: &GaussField,
    f: &GaussField,
) -> Result<GaussField> {
    let dim = striction.dim;
    let d2 = dim * dim;
    if grad_phi.components != dim || f.components != coupling_p.len() || coupling_n.len() != coupling_p.len() {
        return Err(Error::Shape("forcing inputs do not match the number of charge families".into()));
    }
    let ne = grad_phi.elements;
    let mut z = GaussField::zeros(d2, ne, grad_phi.layers.len());
    let mut g = vec![0.0; dim];
    let mut outer = vec![0.0; d2];
    let mut stress = vec![0.0; d2];
    for (l, layer) in grad_phi.layers.iter().enumerate() {
        for e in 0..ne {
            for (a, v) in g.iter_mut().enumerate() {
                *v = layer[a * ne + e];
            }
            for i in 0..dim {
                for j in 0..dim {
                    outer[i * dim + j] = g[i] * g[j];
                }
            }
            striction.apply_into(&outer, &mut stress);
            for p in 0..coupling_p.len() {
                let fp = f.layers[l][p * ne + e];
                if fp == 0.0 {
                    continue;
                }
                let n = &coupling_n[p];
                for i in 0..dim {
                    for j in 0..dim {
                        let ng: f64 = (0..dim).map(|k| n.get(i, j, k) * g[k]).sum();
                        stress[i * dim + j] += 2.0 * fp * ng + coupling_p[p][(i, j)] * fp * fp;
                    }
                }
            }
            for (c, s) in stress.iter().enumerate() {
                z.layers[l][c * ne + e] = *s;
            }
        }
    }
    Ok(z)
}

/// Modulation values f_p at the Gauss points for a solved potential.
pub fn modulation_values(problem: &MacroProblem, scalar: &ScalarSolution) -> Result<GaussField> {
    let grid = &problem.grid;
    match &problem.modulation {
        Modulation::Passive { functions } => Ok(GaussField::from_fn(grid, functions.len(), |x, out| {
            for (o, f) in out.iter_mut().zip(functions) {
                *o = f.value(x);
            }
        })),
        Modulation::Active => {
            let op = BoxOperator::uniform(grid.clone(), 1, matrix_coefficient(&scalar.tensor))?;
            Ok(op.gradient(&scalar.phi))
        }
    }
}

fn elastic_operator(grid: &BoxGrid, stiffness: &Tensor4) -> Result<BoxOperator> {
    check_elastic(stiffness)?;
    BoxOperator::uniform(grid.clone(), grid.dim, stiffness.data.clone())
}

/// Solves div(L∇u + Z) = 0 with u = 0 on ∂Ω; Z is given at the Gauss points
/// with components `i * dim + j`.
pub fn solve_elastic(grid: &BoxGrid, stiffness: &Tensor4, z: &GaussField, settings: &SolverSettings) -> Result<ElasticSolution> {
    let op = elastic_operator(grid, stiffness)?;
    let mut load = op.flux_load(z);
    load.iter_mut().for_each(|v| *v = -*v);
    let zero = vec![0.0; load.len()];
    let (u, report) = op.solve_dirichlet("macro elastic", &zero, &load, settings)?;
    let residual = relative_residual(&op, &u, &zero, &load);
    Ok(ElasticSolution {
        grid: grid.clone(),
        u,
        report,
        residual,
    })
}

/// Full macroscopic pipeline: φ, then Z, then u when elastic tensors exist.
pub fn solve_macro(problem: &MacroProblem) -> Result<MacroSolution> {
    let scalar = solve_scalar_bvp(problem)?;
    let t = &problem.tensors;
    let op = BoxOperator::uniform(problem.grid.clone(), 1, matrix_coefficient(&scalar.tensor))?;
    let grad = op.gradient(&scalar.phi);
    let f = modulation_values(problem, &scalar)?;
    let (z, elastic) = match (&t.electrostriction, &t.elasticity) {
        (Some(m), Some(l)) => {
            let z = assemble_z(m, &t.coupling_n, &t.coupling_p, &grad, &f)?;
            let u = solve_elastic(&problem.grid, l, &z, &problem.settings)?;
            (z, Some(u))
        }
        _ => (GaussField::zeros(0, problem.grid.element_count(), grad.layers.len()), None),
    };
    Ok(MacroSolution { scalar, z, elastic })
}

/// Leading-order elastic response of dilute active inclusions.
#[derive(Debug, Clone)]
pub struct DiluteElastic {
    /// Solution of div(L∇ũ) = −div Σ_p P̄_p f_p².
    pub normalized: ElasticSolution,
    /// λ² ℓ^N, the enhancement factor.
    pub factor: f64,
    /// λ² ℓ^N ũ.
    pub leading: Vec<f64>,
}

/// Solves the dilute leading-order elastic problem with the normalized
/// couplings P̄_p = (λ² ℓ^N)⁻¹ P^{hp}_{λℓ}.
pub fn solve_elastic_dilute(
    grid: &BoxGrid,
    stiffness: &Tensor4,
    normalized_p: &[Matrix],
    f: &GaussField,
    amplitude: f64,
    ell: f64,
    settings: &SolverSettings,
) -> Result<DiluteElastic> {
    let dim = grid.dim;
    let zero_m = Tensor4::zeros(dim);
    let zero_n = vec![Tensor3::zeros(dim); normalized_p.len()];
    let zero_grad = GaussField::zeros(dim, f.elements, f.layers.len());
    let z = assemble_z(&zero_m, &zero_n, normalized_p, &zero_grad, f)?;
    let normalized = solve_elastic(grid, stiffness, &z, settings)?;
    let factor = amplitude * amplitude * ell.powi(dim as i32);
    let leading = normalized.u.iter().map(|v| v * factor).collect();
    Ok(DiluteElastic {
        normalized,
        factor,
        leading,
    })
}

/// L² error of a nodal field against a vector function (one component per
/// output slot) over the box.
pub fn l2_error(grid: &BoxGrid, u: &[f64], exact: impl Fn(&[f64], &mut [f64])) -> Result<f64> {
    let comps = u.len() / grid.node_count();
    let coef = vec![0.0; (comps * grid.dim).pow(2)];
    let op = BoxOperator::uniform(grid.clone(), comps, coef)?;
    Ok(op.l2_error(u, exact))
}
