//! Fine-scale solves at finite period δ on the unit box and their comparison
//! with the homogenized solution plus correctors.
//!
//! The fine grid is the Q1 cell grid tiled 1/δ times, so the cell correctors
//! are sampled exactly at the fine Gauss points.

use serde::{Deserialize, Serialize};

use crate::boxfem::{BoxGrid, BoxOperator, GaussField};
use crate::cell::{CellSolution, CellSolver, Discretization};
use crate::effective::{assemble, EffectiveTensors};
use crate::error::{Error, Result};
use crate::macro_solver::{
    solve_macro, ExtraSource, MacroProblem, MacroSolution, MacroTensors, Modulation, ScalarFunction, MACRO_SETTINGS,
};
use crate::microstructure::{
    assemble_coefficients, build_charge_family, build_phase_map, ChargeSpec, Coefficients, Materials, PhaseGeometry,
    PhaseMap,
};
use crate::pcg::{SolveReport, SolverSettings};
use crate::tensor::Matrix;
use crate::torus::{mean, Field, TorusGrid};

/// Caveat attached to every convergence table.
pub const INTERFACE_CAVEAT: &str = "voxelized interfaces are not C^{1,beta}; observed decay may be slower than for smooth inclusions; only monotone decrease is asserted";

/// Largest fine resolution per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryBudget {
    pub max_2d: usize,
    pub max_3d: usize,
}

impl Default for MemoryBudget {
    fn default() -> Self {
        Self {
            max_2d: 2048,
            max_3d: 256,
        }
    }
}

impl MemoryBudget {
    pub fn cap(&self, dim: usize) -> usize {
        if dim == 2 {
            self.max_2d
        } else {
            self.max_3d
        }
    }
}

/// Extra source h(x/δ) v(x) with h = constant + optional zero-mean density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscillatingSource {
    pub constant: f64,
    #[serde(default)]
    pub density: Option<ChargeSpec>,
    pub profile: ScalarFunction,
}

/// Inputs of a two-scale study on the unit box.
#[derive(Debug, Clone)]
pub struct TwoScaleStudy {
    pub dim: usize,
    /// Q1 cell resolution m (elements per cell and axis).
    pub cell_resolution: usize,
    /// Cell counts per axis, 1/δ.
    pub periods: Vec<usize>,
    pub geometry: PhaseGeometry,
    pub materials: Materials,
    pub charges: Vec<ChargeSpec>,
    /// Modulation f_p, one per charge family.
    pub modulation: Vec<ScalarFunction>,
    pub boundary: ScalarFunction,
    pub extra_source: Option<OscillatingSource>,
    /// Replace the coefficients outside Ω_δ by the matrix phase; `None`
    /// means on for two-phase geometries.
    pub boundary_layer: Option<bool>,
    pub exponents: Vec<f64>,
    pub elastic: bool,
    pub budget: MemoryBudget,
    pub cell_settings: SolverSettings,
    pub fine_settings: SolverSettings,
}

/// Cell-level data shared by every δ.
pub struct CellData {
    pub grid: TorusGrid,
    pub map: PhaseMap,
    pub coefficients: Coefficients,
    pub solution: CellSolution,
    pub tensors: EffectiveTensors,
    /// Voxel values of h (zero when there is no extra source).
    pub extra_density: Field,
}

/// Solves the cell problems with the Q1 scheme and assembles the tensors.
pub fn prepare_cell(study: &TwoScaleStudy) -> Result<CellData> {
    if study.modulation.len() != study.charges.len() {
        return Err(Error::Shape(format!(
            "{} modulation functions for {} charge families",
            study.modulation.len(),
            study.charges.len()
        )));
    }
    let grid = TorusGrid::new(study.dim, study.cell_resolution)?;
    let map = build_phase_map(&study.geometry, grid)?;
    let coefficients = assemble_coefficients(&study.materials, &map)?;
    let solver = CellSolver::new(grid, Discretization::Q1, study.cell_settings);
    let charges = solver.charge_densities(&study.charges, &study.geometry, &coefficients)?;
    let solution = solver.solve_all(&coefficients, &charges, study.elastic)?;
    let tensors = assemble(&solver, &coefficients, &solution)?;
    let extra_density = match &study.extra_source {
        Some(src) => {
            let base = match &src.density {
                Some(spec) => build_charge_family(spec, &study.geometry, grid, None)?.density,
                None => Field::constant(grid, 0.0),
            };
            Field::from_data(grid, base.rank(), base.data().iter().map(|v| v + src.constant).collect())?
        }
        None => Field::constant(grid, 0.0),
    };
    Ok(CellData {
        grid,
        map,
        coefficients,
        solution,
        tensors,
        extra_density,
    })
}

/// One fine-scale configuration.
#[derive(Debug, Clone)]
pub struct FineScaleRun {
    pub periods: usize,
    pub delta: f64,
    pub cell_resolution: usize,
    pub grid: BoxGrid,
    pub boundary_layer: bool,
    /// Element phase labels (tiled cell labels, matrix phase in the frame).
    pub labels: Vec<u8>,
    /// Elements in Ω ∖ Ω_δ.
    pub frame_elements: usize,
}

/// Whether cell `c` (per-axis cell indices) lies in a block δ(z + [0,2)^N)
/// contained in the box of `periods` cells.
fn in_double_cell_union(c: &[usize], periods: usize) -> bool {
    c.iter().all(|&ci| {
        let candidates = [ci.checked_sub(1), Some(ci)];
        candidates.iter().flatten().any(|&z| z + 2 <= periods)
    })
}

impl FineScaleRun {
    pub fn new(study: &TwoScaleStudy, cell: &CellData, periods: usize) -> Result<Self> {
        let m = study.cell_resolution;
        if cell.grid.n != m || cell.grid.dim != study.dim {
            return Err(Error::GridMismatch(format!(
                "cell grid {}^{} does not match the requested {m}^{}",
                cell.grid.n, cell.grid.dim, study.dim
            )));
        }
        if periods == 0 {
            return Err(Error::GridMismatch("1/δ must be a positive integer".into()));
        }
        let n = m * periods;
        let cap = study.budget.cap(study.dim);
        if n > cap {
            return Err(Error::MemoryBudget { requested: n, cap });
        }
        let grid = BoxGrid::unit(study.dim, n)?;
        let two_phase = cell.map.labels.iter().any(|&l| l != 0);
        let boundary_layer = study.boundary_layer.unwrap_or(two_phase);
        let dim = study.dim;
        let mut mi = vec![0usize; dim];
        let mut voxel = vec![0usize; dim];
        let mut cidx = vec![0usize; dim];
        let mut frame_elements = 0;
        let labels = (0..grid.element_count())
            .map(|e| {
                grid.element_index(e, &mut mi);
                for a in 0..dim {
                    voxel[a] = mi[a] % m;
                    cidx[a] = mi[a] / m;
                }
                if boundary_layer && !in_double_cell_union(&cidx, periods) {
                    frame_elements += 1;
                    0
                } else {
                    cell.map.labels[cell.grid.flat_index(&voxel)]
                }
            })
            .collect();
        Ok(Self {
            periods,
            delta: 1.0 / periods as f64,
            cell_resolution: m,
            grid,
            boundary_layer,
            labels,
            frame_elements,
        })
    }

    /// Cell voxel of fine element `e`.
    #[inline]
    fn voxel(&self, e: usize, cell: &TorusGrid, mi: &mut [usize]) -> usize {
        self.grid.element_index(e, mi);
        for v in mi.iter_mut() {
            *v %= self.cell_resolution;
        }
        cell.flat_index(mi)
    }

    fn check_cell(&self, cell: &CellData) -> Result<()> {
        if cell.grid.n != self.cell_resolution || cell.grid.dim != self.grid.dim || self.grid.cells % cell.grid.n != 0 {
            return Err(Error::GridMismatch(format!(
                "fine grid of {} elements per axis is not a tiling of the {}-voxel cell",
                self.grid.cells, cell.grid.n
            )));
        }
        if cell.solution.discretization != Discretization::Q1 {
            return Err(Error::GridMismatch("correctors must come from the Q1 cell scheme".into()));
        }
        Ok(())
    }
}

fn matrix_data(m: &Matrix) -> Vec<f64> {
    let d = m.nrows();
    (0..d * d).map(|k| m[(k / d, k % d)]).collect()
}

/// Fine-scale potential.
#[derive(Debug, Clone)]
pub struct FineDielectric {
    pub phi: Vec<f64>,
    pub gradient: GaussField,
    pub report: SolveReport,
}

/// div ε^δ∇φ^δ = (1/δ) Σ_p g_p(x/δ) f_p(x) + h(x/δ) v(x), φ^δ = ϕ on ∂Ω.
pub fn solve_fine_dielectric(study: &TwoScaleStudy, cell: &CellData, run: &FineScaleRun) -> Result<FineDielectric> {
    run.check_cell(cell)?;
    let grid = &run.grid;
    let coefs = cell.coefficients.permittivity.values.iter().map(matrix_data).collect();
    let op = BoxOperator::new(grid.clone(), 1, run.labels.clone(), coefs)?;
    let ne = grid.element_count();
    let dim = grid.dim;
    let f = GaussField::from_fn(grid, study.modulation.len(), |x, out| {
        for (o, fp) in out.iter_mut().zip(&study.modulation) {
            *o = fp.value(x);
        }
    });
    let profile = study.extra_source.as_ref().map(|s| GaussField::from_fn(grid, 1, |x, out| out[0] = s.profile.value(x)));
    let mut source = GaussField::zeros(1, ne, f.layers.len());
    let mut mi = vec![0usize; dim];
    for e in 0..ne {
        let v = run.voxel(e, &cell.grid, &mut mi);
        let h = cell.extra_density.data()[v];
        for g in 0..f.layers.len() {
            let mut s = 0.0;
            for (p, charge) in cell.solution.charges.iter().enumerate() {
                s += charge.data()[v] * f.layers[g][p * ne + e] / run.delta;
            }
            if let Some(pr) = &profile {
                s += h * pr.layers[g][e];
            }
            source.layers[g][e] = -s;
        }
    }
    let load = op.volume_load(&source);
    let boundary = grid.sample(|x| study.boundary.value(x));
    let (phi, report) = op.solve_dirichlet("fine dielectric", &boundary, &load, &study.fine_settings)?;
    let gradient = op.gradient(&phi);
    Ok(FineDielectric { phi, gradient, report })
}

/// The homogenized problem on the fine grid.
pub fn solve_homogenized(study: &TwoScaleStudy, cell: &CellData, run: &FineScaleRun) -> Result<MacroSolution> {
    let extra_source = study.extra_source.as_ref().map(|s| ExtraSource {
        mean: mean(&cell.extra_density)[0],
        profile: s.profile.clone(),
    });
    let mut tensors = MacroTensors::from(&cell.tensors);
    if !study.elastic {
        tensors.elasticity = None;
        tensors.electrostriction = None;
    }
    let problem = MacroProblem {
        grid: run.grid.clone(),
        tensors,
        boundary: study.boundary.clone(),
        modulation: Modulation::Passive {
            functions: study.modulation.clone(),
        },
        extra_source,
        settings: MACRO_SETTINGS,
    };
    solve_macro(&problem)
}

/// Corrector-expansion errors of one fine solve.
#[derive(Debug, Clone, Serialize)]
pub struct CorrectorErrors {
    pub exponent: f64,
    /// ‖∇φ^δ − Σ_j ∇w_j^δ ∂_jφ − ∇θ^δ f‖ over Ω.
    pub global: f64,
    /// Same over the concentric box of half the side.
    pub local: f64,
    /// ‖∇φ^δ − ∇φ‖ over Ω.
    pub naive: f64,
    /// Expansion without the charge-corrector term, over Ω.
    pub without_charge: f64,
}

/// Evaluates the corrector expansion at every fine Gauss point and returns
/// its L^q errors for each exponent.
pub fn corrector_error(
    run: &FineScaleRun,
    fine: &FineDielectric,
    homogenized: &MacroSolution,
    cell: &CellData,
    modulation: &[ScalarFunction],
    exponents: &[f64],
) -> Result<Vec<CorrectorErrors>> {
    run.check_cell(cell)?;
    let grid = &run.grid;
    if homogenized.scalar.grid != *grid {
        return Err(Error::GridMismatch("homogenized solution lives on a different grid".into()));
    }
    let dim = grid.dim;
    let ne = grid.element_count();
    let op = BoxOperator::uniform(grid.clone(), 1, matrix_data(&Matrix::identity(dim, dim)))?;
    let grad_hom = op.gradient(&homogenized.scalar.phi);
    let f = GaussField::from_fn(grid, modulation.len(), |x, out| {
        for (o, fp) in out.iter_mut().zip(modulation) {
            *o = fp.value(x);
        }
    });
    let layers = fine.gradient.layers.len();
    let mut full = GaussField::zeros(dim, ne, layers);
    let mut partial = GaussField::zeros(dim, ne, layers);
    let mut naive = GaussField::zeros(dim, ne, layers);
    let mut mi = vec![0usize; dim];
    let mut grad_w = vec![0.0; dim];
    let mut theta = vec![0.0; dim];
    let sol = &cell.solution;
    for e in 0..ne {
        let v = run.voxel(e, &cell.grid, &mut mi);
        for g in 0..layers {
            let mut expansion = vec![0.0; dim];
            for j in 0..dim {
                let dj = grad_hom.layers[g][j * ne + e];
                sol.chi[j].gradient.gather(g, v, &mut grad_w);
                for a in 0..dim {
                    expansion[a] += grad_w[a] * dj;
                }
            }
            let mut charge = vec![0.0; dim];
            for (p, th) in sol.theta.iter().enumerate() {
                th.gradient.gather(g, v, &mut theta);
                let fp = f.layers[g][p * ne + e];
                for a in 0..dim {
                    charge[a] += theta[a] * fp;
                }
            }
            for a in 0..dim {
                let fine_a = fine.gradient.layers[g][a * ne + e];
                partial.layers[g][a * ne + e] = fine_a - expansion[a];
                full.layers[g][a * ne + e] = fine_a - expansion[a] - charge[a];
                naive.layers[g][a * ne + e] = fine_a - grad_hom.layers[g][a * ne + e];
            }
        }
    }
    let inner = interior_mask(grid);
    Ok(exponents
        .iter()
        .map(|&q| CorrectorErrors {
            exponent: q,
            global: full.lq_norm(grid, q, None),
            local: full.lq_norm(grid, q, Some(&|e| inner[e])),
            naive: naive.lq_norm(grid, q, None),
            without_charge: partial.lq_norm(grid, q, None),
        })
        .collect())
}

/// Elements whose center lies in the concentric box of half the side.
fn interior_mask(grid: &BoxGrid) -> Vec<bool> {
    let dim = grid.dim;
    let mut mi = vec![0usize; dim];
    (0..grid.element_count())
        .map(|e| {
            grid.element_index(e, &mut mi);
            (0..dim).all(|a| {
                let t = (mi[a] as f64 + 0.5) / grid.cells as f64;
                (0.25..=0.75).contains(&t)
            })
        })
        .collect()
}

/// Fine-scale displacement.
#[derive(Debug, Clone)]
pub struct FineElastic {
    pub u: Vec<f64>,
    pub report: SolveReport,
}

/// div(L^δ∇u^δ + M^δ(∇φ^δ⊗∇φ^δ)) = 0, u^δ = 0 on ∂Ω.
pub fn solve_fine_elastic(
    study: &TwoScaleStudy,
    cell: &CellData,
    run: &FineScaleRun,
    fine: &FineDielectric,
) -> Result<FineElastic> {
    run.check_cell(cell)?;
    let grid = &run.grid;
    let dim = grid.dim;
    let d2 = dim * dim;
    let coefs = cell.coefficients.elasticity.values.iter().map(|t| t.data.clone()).collect();
    let op = BoxOperator::new(grid.clone(), dim, run.labels.clone(), coefs)?;
    let ne = grid.element_count();
    let layers = fine.gradient.layers.len();
    let mut z = GaussField::zeros(d2, ne, layers);
    let mut g = vec![0.0; dim];
    let mut outer = vec![0.0; d2];
    let mut stress = vec![0.0; d2];
    for e in 0..ne {
        let m = &cell.coefficients.electrostriction.values[run.labels[e] as usize];
        for l in 0..layers {
            fine.gradient.gather(l, e, &mut g);
            for i in 0..dim {
                for j in 0..dim {
                    outer[i * dim + j] = g[i] * g[j];
                }
            }
            m.apply_into(&outer, &mut stress);
            for (c, s) in stress.iter().enumerate() {
                z.layers[l][c * ne + e] = *s;
            }
        }
    }
    let mut load = op.flux_load(&z);
    load.iter_mut().for_each(|v| *v = -*v);
    let zero = vec![0.0; load.len()];
    let (u, report) = op.solve_dirichlet("fine elastic", &zero, &load, &study.fine_settings)?;
    Ok(FineElastic { u, report })
}

/// One row of the convergence table.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub delta: f64,
    pub periods: usize,
    pub fine_resolution: usize,
    pub boundary_layer: bool,
    pub frame_elements: usize,
    pub errors: Vec<CorrectorErrors>,
    /// (q, ‖∇φ^δ‖_{L^q}).
    pub gradient_norms: Vec<(f64, f64)>,
    /// ‖u^δ − u‖_{L²(Ω)}.
    pub elastic_distance: Option<f64>,
    pub fine_residual: f64,
    pub fine_iterations: usize,
}

impl ConvergenceRow {
    pub fn error(&self, q: f64) -> Option<&CorrectorErrors> {
        self.errors.iter().find(|e| e.exponent == q)
    }

    pub fn gradient_norm(&self, q: f64) -> Option<f64> {
        self.gradient_norms.iter().find(|(p, _)| *p == q).map(|(_, v)| *v)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TwoScaleReport {
    pub rows: Vec<ConvergenceRow>,
    pub caveat: String,
}

/// Runs the fine solves for every δ and tabulates the errors.
pub fn two_scale_study(study: &TwoScaleStudy) -> Result<TwoScaleReport> {
    let cell = prepare_cell(study)?;
    let mut rows = Vec::new();
    for &periods in &study.periods {
        rows.push(study_row(study, &cell, periods)?);
    }
    Ok(TwoScaleReport {
        rows,
        caveat: INTERFACE_CAVEAT.to_string(),
    })
}

/// One δ of the study.
pub fn study_row(study: &TwoScaleStudy, cell: &CellData, periods: usize) -> Result<ConvergenceRow> {
    let run = FineScaleRun::new(study, cell, periods)?;
    let fine = solve_fine_dielectric(study, cell, &run)?;
    let homogenized = solve_homogenized(study, cell, &run)?;
    let errors = corrector_error(&run, &fine, &homogenized, cell, &study.modulation, &study.exponents)?;
    let gradient_norms = study
        .exponents
        .iter()
        .map(|&q| (q, fine.gradient.lq_norm(&run.grid, q, None)))
        .collect();
    let elastic_distance = if study.elastic {
        let fine_u = solve_fine_elastic(study, cell, &run, &fine)?;
        let hom_u = homogenized
            .elastic
            .as_ref()
            .ok_or_else(|| Error::Shape("homogenized elastic tensors missing".into()))?;
        let diff: Vec<f64> = fine_u.u.iter().zip(&hom_u.u).map(|(a, b)| a - b).collect();
        Some(crate::macro_solver::l2_error(&run.grid, &diff, |_, o| o.iter_mut().for_each(|v| *v = 0.0))?)
    } else {
        None
    };
    Ok(ConvergenceRow {
        delta: run.delta,
        periods,
        fine_resolution: run.grid.cells,
        boundary_layer: run.boundary_layer,
        frame_elements: run.frame_elements,
        errors,
        gradient_norms,
        elastic_distance,
        fine_residual: fine.report.plain_residual,
        fine_iterations: fine.report.iterations,
    })
}
