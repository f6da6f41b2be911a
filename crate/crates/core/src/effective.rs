//! Effective tensors assembled from cell solutions, with the redundant
//! formulas evaluated side by side as certificates.

use serde::Serialize;

use crate::cell::{CellSolution, CellSolver, CoefTable, QuadratureField};
use crate::error::{Error, Result};
use crate::microstructure::{Coefficients, PiecewiseField};
use crate::tensor::{asymmetry, relative, sym_eigenvalues, sym_pairs, Matrix, Tensor3, Tensor4};

/// Relative discrepancy above which two formulas for the same quantity are
/// reported as a failure.
pub const FORMULA_TOLERANCE: f64 = 1e-4;
/// Relative slack allowed in the Voigt-Reuss bracket.
pub const BRACKET_TOLERANCE: f64 = 1e-8;
/// Fraction of the Cauchy-Schwarz bound ‖τ‖‖∇w‖ below which a coupling
/// entry counts as zero when comparing formulas.
pub const COUPLING_FLOOR: f64 = 1e-8;

/// Every effective quantity of one cell solution.
#[derive(Debug, Clone)]
pub struct EffectiveTensors {
    pub dim: usize,
    pub permittivity: Matrix,
    /// `a[(j, p)]` = (a_p)_j, one column per charge family.
    pub charge_coupling: Matrix,
    /// ⨍ ε∇θ_p as columns; equals −a.
    pub flux_mean: Matrix,
    /// κ_pq = ⨍ τ_p·∇θ_q (the diagonal is the single-family κ).
    pub kappa: Matrix,
    pub elasticity: Option<Tensor4>,
    pub electrostriction: Option<Tensor4>,
    pub coupling_n: Vec<Tensor3>,
    pub coupling_p: Vec<Matrix>,
    pub certificates: Certificates,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Certificates {
    pub permittivity_asymmetry: f64,
    pub permittivity_eigenvalues: Vec<f64>,
    /// Smallest eigenvalue of ε^h − ⟨ε⁻¹⟩⁻¹ and of ⟨ε⟩ − ε^h, relative to ‖ε^h‖.
    pub permittivity_bracket: [f64; 2],
    /// Largest pairwise relative discrepancy among the three formulas for a.
    pub coupling_discrepancy: f64,
    /// max|b + a| / max|a|.
    pub flux_discrepancy: f64,
    /// Largest relative gap between the defining and energy forms of κ_pp.
    pub kappa_discrepancy: f64,
    pub elasticity_symmetry: Option<[f64; 3]>,
    pub elasticity_eigenvalues: Option<Vec<f64>>,
    pub elasticity_bracket: Option<[f64; 2]>,
    pub electrostriction_symmetry: Option<[f64; 2]>,
    pub coupling_n_symmetry: Vec<f64>,
    pub coupling_p_symmetry: Vec<f64>,
    pub max_cell_residual: f64,
    pub max_field_mean: f64,
    /// Largest fraction of any right-hand side lying on discretely
    /// unresolvable modes.
    pub max_null_fraction: f64,
}

/// ε^h e_j = ⨍ ε ∇w_j together with its symmetry and bracket certificates.
pub fn effective_permittivity(eps: &PiecewiseField<Matrix>, solution: &CellSolution) -> Result<(Matrix, f64, [f64; 2])> {
    let dim = solution.grid.dim;
    let coef = CoefTable::from_matrices(eps);
    let mut h = Matrix::zeros(dim, dim);
    for (j, chi) in solution.chi.iter().enumerate() {
        let flux = coef.apply(&chi.gradient).mean();
        for i in 0..dim {
            h[(i, j)] = flux[i];
        }
    }
    let asym = asymmetry(&h);
    let (arith, harm) = eps.voigt_reuss();
    let bracket = bracket_margins(&h, &arith, &harm);
    if bracket[0] < -BRACKET_TOLERANCE || bracket[1] < -BRACKET_TOLERANCE {
        return Err(Error::BoundViolation {
            tensor: "effective permittivity".into(),
            violation: -bracket[0].min(bracket[1]),
        });
    }
    Ok((h, asym, bracket))
}

fn bracket_margins(h: &Matrix, upper: &Matrix, lower: &Matrix) -> [f64; 2] {
    let scale = h.norm().max(f64::MIN_POSITIVE);
    [
        sym_eigenvalues(&(h - lower))[0] / scale,
        sym_eigenvalues(&(upper - h))[0] / scale,
    ]
}

/// Charge coupling by the three equivalent formulas plus the flux mean b.
/// Returns (a, b, largest discrepancy among the a formulas, max|b + a| / max|a|).
pub fn charge_coupling(
    solver: &CellSolver,
    eps: &PiecewiseField<Matrix>,
    solution: &CellSolution,
) -> Result<(Matrix, Matrix, f64, f64)> {
    let dim = solution.grid.dim;
    let families = solution.charges.len();
    let coef = CoefTable::from_matrices(eps);
    let mut a = Matrix::zeros(dim, families);
    let mut b = Matrix::zeros(dim, families);
    let mut spread = Matrix::zeros(dim, families);
    let mut bound = 0.0f64;
    let chi_grads: Vec<QuadratureField> = solution
        .chi
        .iter()
        .map(|c| solver.gradient(c.field.data(), 1))
        .collect();
    for p in 0..families {
        let tau = &solution.psi[p].gradient;
        let tau_mean = tau.mean();
        let tau_norm = tau.mean_dot(tau).sqrt();
        let flux = coef.apply(&solution.theta[p].gradient).mean();
        for j in 0..dim {
            let grad_w = &solution.chi[j].gradient;
            let f1 = tau.mean_dot(grad_w);
            let f2 = tau_mean[j] + tau.mean_dot(&chi_grads[j]);
            let f3 = -solver.integrate(&solution.charges[p], &solution.chi[j].field);
            spread[(j, p)] = (f1 - f2).abs().max((f1 - f3).abs()).max((f2 - f3).abs());
            bound = bound.max(tau_norm * grad_w.mean_dot(grad_w).sqrt());
            a[(j, p)] = f1;
            b[(j, p)] = flux[j];
        }
    }
    // Entries vanishing by symmetry are compared on the scale of the whole
    // matrix, floored by a small multiple of the Cauchy-Schwarz bound.
    let scale = a.amax().max(COUPLING_FLOOR * bound);
    let discrepancy = relative(spread.amax(), scale);
    if discrepancy > FORMULA_TOLERANCE {
        return Err(Error::FormulaMismatch {
            quantity: "charge coupling a".into(),
            discrepancy,
            tolerance: FORMULA_TOLERANCE,
        });
    }
    let flux_discrepancy = relative((&b + &a).amax(), scale);
    if flux_discrepancy > FORMULA_TOLERANCE {
        return Err(Error::FormulaMismatch {
            quantity: "flux mean b = -a".into(),
            discrepancy: flux_discrepancy,
            tolerance: FORMULA_TOLERANCE,
        });
    }
    Ok((a, b, discrepancy, flux_discrepancy))
}

/// κ_pq by the defining formula; the diagonal is cross-checked against the
/// energy form ⨍ ε∇θ·∇θ. Returns (κ, largest diagonal discrepancy).
pub fn kappa(eps: &PiecewiseField<Matrix>, solution: &CellSolution) -> Result<(Matrix, f64)> {
    let families = solution.charges.len();
    let coef = CoefTable::from_matrices(eps);
    let mut k = Matrix::zeros(families, families);
    let mut discrepancy = 0.0f64;
    for p in 0..families {
        for q in 0..families {
            k[(p, q)] = solution.psi[p].gradient.mean_dot(&solution.theta[q].gradient);
        }
        let grad = &solution.theta[p].gradient;
        let energy = grad.energy(&coef, grad);
        discrepancy = discrepancy.max(relative((energy - k[(p, p)]).abs(), energy.abs()));
        let charged = solution.charges[p].max_abs() > 0.0;
        if charged && !(k[(p, p)] > 0.0) {
            return Err(Error::NegativeKappa {
                family: p,
                value: k[(p, p)],
            });
        }
    }
    if discrepancy > FORMULA_TOLERANCE {
        return Err(Error::FormulaMismatch {
            quantity: "kappa".into(),
            discrepancy,
            tolerance: FORMULA_TOLERANCE,
        });
    }
    Ok((k, discrepancy))
}

/// L^h_ijkh = ⨍ L∇W_ij·∇W_kh with symmetry residuals and bracket margins.
pub fn effective_elasticity(stiffness: &PiecewiseField<Tensor4>, solution: &CellSolution) -> Result<(Tensor4, [f64; 3], [f64; 2])> {
    let dim = solution.grid.dim;
    let coef = CoefTable::from_tensors(stiffness);
    let mut lh = Tensor4::zeros(dim);
    let stresses: Vec<QuadratureField> = solution.elastic.iter().map(|w| coef.apply(&w.gradient)).collect();
    let pairs = sym_pairs(dim);
    let index = |i: usize, j: usize| {
        let key = if i <= j { (i, j) } else { (j, i) };
        pairs.iter().position(|p| *p == key).expect("pair")
    };
    for i in 0..dim {
        for j in 0..dim {
            for k in 0..dim {
                for h in 0..dim {
                    // Loadings e_i⊗e_j and e_j⊗e_i give the same corrector; the
                    // unsymmetrized macroscopic part is kept in ∇W_ij.
                    let stress = &stresses[index(i, j)];
                    let grad = solution.elastic_gradient(k, h);
                    let v = if i <= j && k <= h {
                        stress.mean_dot(grad)
                    } else {
                        f64::NAN
                    };
                    lh.set(i, j, k, h, v);
                }
            }
        }
    }
    // Fill the remaining index orders from the minor symmetries of the
    // stored gradients (∇W_ij and ∇W_ji differ only by e_i⊗e_j − e_j⊗e_i,
    // which a minor-symmetric L annihilates).
    for i in 0..dim {
        for j in 0..dim {
            for k in 0..dim {
                for h in 0..dim {
                    if lh.get(i, j, k, h).is_nan() {
                        let v = lh.get(i.min(j), i.max(j), k.min(h), k.max(h));
                        lh.set(i, j, k, h, v);
                    }
                }
            }
        }
    }
    let symmetry = lh.symmetry_residuals();
    let (voigt, reuss) = stiffness.voigt_reuss();
    let bracket = bracket_margins(&lh.mandel(), &voigt, &reuss);
    if bracket[0] < -BRACKET_TOLERANCE || bracket[1] < -BRACKET_TOLERANCE {
        return Err(Error::BoundViolation {
            tensor: "effective elasticity".into(),
            violation: -bracket[0].min(bracket[1]),
        });
    }
    Ok((lh, symmetry, bracket))
}

/// M^h, and per family N^h and P^h, from the electrostriction field.
pub fn electro_coupling(
    striction: &PiecewiseField<Tensor4>,
    solution: &CellSolution,
) -> (Tensor4, Vec<Tensor3>, Vec<Matrix>) {
    let dim = solution.grid.dim;
    let npts = solution.grid.len();
    let families = solution.theta.len();
    let layers = solution.chi[0].gradient.layers.len();
    let weight = solution.chi[0].gradient.weight;
    let d2 = dim * dim;
    let mut mh = vec![0.0; d2 * d2];
    let mut nh = vec![vec![0.0; d2 * dim]; families];
    let mut ph = vec![vec![0.0; d2]; families];
    let mut gw = vec![vec![0.0; dim]; dim];
    let mut gt = vec![vec![0.0; dim]; families];
    let mut gwij = vec![vec![0.0; d2]; d2];
    let mut arg = vec![0.0; d2];
    let mut stress = vec![0.0; d2];
    let scale = weight / npts as f64;
    for l in 0..layers {
        for idx in 0..npts {
            let m = striction.at(idx);
            for (k, g) in gw.iter_mut().enumerate() {
                solution.chi[k].gradient.gather(l, idx, g);
            }
            for (p, g) in gt.iter_mut().enumerate() {
                solution.theta[p].gradient.gather(l, idx, g);
            }
            for i in 0..dim {
                for j in 0..dim {
                    solution.elastic_gradient(i, j).gather(l, idx, &mut gwij[i * dim + j]);
                }
            }
            let accumulate = |arg: &[f64], stress: &mut [f64], sink: &mut dyn FnMut(usize, f64)| {
                m.apply_into(arg, stress);
                for ij in 0..d2 {
                    sink(ij, stress.iter().zip(&gwij[ij]).map(|(s, w)| s * w).sum::<f64>());
                }
            };
            for k in 0..dim {
                for h in 0..dim {
                    outer_sym(&gw[k], &gw[h], &mut arg);
                    accumulate(&arg, &mut stress, &mut |ij, v| mh[ij * d2 + k * dim + h] += v * scale);
                }
                for p in 0..families {
                    outer_sym(&gw[k], &gt[p], &mut arg);
                    let row = &mut nh[p];
                    accumulate(&arg, &mut stress, &mut |ij, v| row[ij * dim + k] += v * scale);
                }
            }
            for p in 0..families {
                outer_sym(&gt[p], &gt[p], &mut arg);
                let row = &mut ph[p];
                accumulate(&arg, &mut stress, &mut |ij, v| row[ij] += v * scale);
            }
        }
    }
    let mh = Tensor4 { dim, data: mh };
    let nh = nh.into_iter().map(|data| Tensor3 { dim, data }).collect();
    let ph = ph
        .into_iter()
        .map(|data| Matrix::from_fn(dim, dim, |i, j| data[i * dim + j]))
        .collect();
    (mh, nh, ph)
}

#[inline]
fn outer_sym(a: &[f64], b: &[f64], out: &mut [f64]) {
    let dim = a.len();
    for i in 0..dim {
        for j in 0..dim {
            out[i * dim + j] = 0.5 * (a[i] * b[j] + a[j] * b[i]);
        }
    }
}

/// Assembles every tensor available from the solution. Elastic quantities
/// are present only when elastic correctors were solved.
pub fn assemble(solver: &CellSolver, coefficients: &Coefficients, solution: &CellSolution) -> Result<EffectiveTensors> {
    let dim = solution.grid.dim;
    let (permittivity, asym, bracket) = effective_permittivity(&coefficients.permittivity, solution)?;
    let (a, b, a_disc, b_disc) = charge_coupling(solver, &coefficients.permittivity, solution)?;
    let (k, k_disc) = kappa(&coefficients.permittivity, solution)?;
    let mut certificates = Certificates {
        permittivity_asymmetry: asym,
        permittivity_eigenvalues: sym_eigenvalues(&permittivity),
        permittivity_bracket: bracket,
        coupling_discrepancy: a_disc,
        flux_discrepancy: b_disc,
        kappa_discrepancy: k_disc,
        max_cell_residual: solution.max_residual(),
        max_field_mean: solution.max_mean(),
        max_null_fraction: solution.all_fields().map(|f| f.null_fraction).fold(0.0, f64::max),
        ..Default::default()
    };
    let (elasticity, electrostriction, coupling_n, coupling_p) = if solution.elastic.is_empty() {
        (None, None, Vec::new(), Vec::new())
    } else {
        let (lh, sym, br) = effective_elasticity(&coefficients.elasticity, solution)?;
        certificates.elasticity_symmetry = Some(sym);
        certificates.elasticity_eigenvalues = Some(lh.sym_eigenvalues());
        certificates.elasticity_bracket = Some(br);
        let (mh, nh, ph) = electro_coupling(&coefficients.electrostriction, solution);
        let [s1, s2, _] = mh.symmetry_residuals();
        certificates.electrostriction_symmetry = Some([s1, s2]);
        certificates.coupling_n_symmetry = nh.iter().map(|t| t.first_pair_asymmetry()).collect();
        certificates.coupling_p_symmetry = ph.iter().map(asymmetry).collect();
        (Some(lh), Some(mh), nh, ph)
    };
    let _ = dim;
    Ok(EffectiveTensors {
        dim: solution.grid.dim,
        permittivity,
        charge_coupling: a,
        flux_mean: b,
        kappa: k,
        elasticity,
        electrostriction,
        coupling_n,
        coupling_p,
        certificates,
    })
}

/// One tensor of the serialized document.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Row-major components.
    pub components: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Structured document holding every effective tensor and the certificates.
#[derive(Debug, Clone, Serialize)]
pub struct TensorDocument {
    pub dim: usize,
    pub families: usize,
    pub tensors: Vec<TensorEntry>,
    pub certificates: Certificates,
}

fn matrix_entry(name: &str, m: &Matrix, note: Option<&str>) -> TensorEntry {
    TensorEntry {
        name: name.to_string(),
        shape: vec![m.nrows(), m.ncols()],
        components: crate::tensor::matrix_to_rows(m).concat(),
        note: note.map(str::to_string),
    }
}

impl EffectiveTensors {
    pub fn families(&self) -> usize {
        self.charge_coupling.ncols()
    }

    pub fn document(&self) -> TensorDocument {
        let d = self.dim;
        let mut tensors = vec![
            matrix_entry("permittivity", &self.permittivity, None),
            matrix_entry("charge_coupling", &self.charge_coupling, Some("column p is the coupling vector of family p")),
            matrix_entry("flux_mean", &self.flux_mean, Some("column p is the mean flux of the charge corrector; equals -charge_coupling")),
            matrix_entry("kappa", &self.kappa, Some("diagonal: single-family energy; off-diagonal entries are a multi-family extension")),
        ];
        if let Some(l) = &self.elasticity {
            tensors.push(TensorEntry {
                name: "elasticity".into(),
                shape: vec![d; 4],
                components: l.data.clone(),
                note: None,
            });
        }
        if let Some(m) = &self.electrostriction {
            tensors.push(TensorEntry {
                name: "electrostriction".into(),
                shape: vec![d; 4],
                components: m.data.clone(),
                note: None,
            });
        }
        for (p, n) in self.coupling_n.iter().enumerate() {
            tensors.push(TensorEntry {
                name: format!("coupling_n[{p}]"),
                shape: vec![d; 3],
                components: n.data.clone(),
                note: None,
            });
        }
        for (p, m) in self.coupling_p.iter().enumerate() {
            tensors.push(matrix_entry(&format!("coupling_p[{p}]"), m, None));
        }
        TensorDocument {
            dim: d,
            families: self.families(),
            tensors,
            certificates: self.certificates.clone(),
        }
    }
}

/// ε̃^h = ε^h − λ a together with its spectrum.
#[derive(Debug, Clone, Serialize)]
pub struct Enhanced {
    pub amplitude: f64,
    pub tensor: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub elliptic: bool,
}

pub fn enhanced_permittivity(permittivity: &Matrix, coupling: &Matrix, amplitude: f64) -> Enhanced {
    let t = permittivity - coupling * amplitude;
    let eigenvalues = sym_eigenvalues(&t);
    Enhanced {
        amplitude,
        tensor: crate::tensor::matrix_to_rows(&t),
        elliptic: eigenvalues[0] > 0.0,
        eigenvalues,
    }
}

/// ξ·ε̃^h(λ)ξ for a fixed direction.
pub fn rayleigh_quotient(permittivity: &Matrix, coupling: &Matrix, amplitude: f64, xi: &[f64]) -> f64 {
    let v = nalgebra::DVector::from_column_slice(xi);
    let t = permittivity - coupling * amplitude;
    v.dot(&(&t * &v)) / v.dot(&v)
}
