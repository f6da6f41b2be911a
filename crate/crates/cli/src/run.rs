//! Subcommand pipelines.

use std::path::{Path, PathBuf};

use serde::Serialize;

use elastodiel::boxfem::BoxGrid;
use elastodiel::cell::{CellField, CellSolution, CellSolver, Discretization};
use elastodiel::dilute::{dilute_sweep, scaling_study, DiluteStudy, DiluteSweep, ScalingStudy};
use elastodiel::effective::{assemble, enhanced_permittivity, rayleigh_quotient, EffectiveTensors, TensorDocument};
use elastodiel::macro_solver::{solve_macro, ExtraSource, MacroProblem, MacroTensors, Modulation};
use elastodiel::microstructure::{
    assemble_coefficients, build_charge_family, build_phase_map, Coefficients, Materials, PhaseGeometry, PhaseMap,
    PhaseTensors,
};
use elastodiel::pcg::SolveReport;
use elastodiel::tensor::{matrix_to_rows, sym_eigenvalues};
use elastodiel::torus::{mean, Field, TorusGrid};
use elastodiel::twoscale::{prepare_cell, study_row, CellData, ConvergenceRow, TwoScaleStudy, INTERFACE_CAVEAT};

use crate::config::{FieldKind, RunConfig, Subcommand};
use crate::error::CliError;
use crate::output::{OutputDir, Provenance};

/// Tolerance of the cross-formula and flux identities checked by `verify`.
pub const IDENTITY_TOLERANCE: f64 = 1e-6;
/// Tolerance of the declared tensor symmetries checked by `verify`.
pub const SYMMETRY_TOLERANCE: f64 = 1e-8;

pub struct Context<'a> {
    pub config: &'a RunConfig,
    pub provenance: Provenance,
    pub out: OutputDir,
    pub verbose: bool,
    pub threads: usize,
    /// Files written so far, in order.
    pub written: Vec<PathBuf>,
}

impl Context<'_> {
    fn log(&self, msg: &str) {
        if self.verbose {
            eprintln!("[{}] {msg}", self.provenance.subcommand);
        }
    }

    fn record(&mut self, path: PathBuf) {
        self.log(&format!("wrote {}", path.display()));
        self.written.push(path);
    }

    fn wants(&self, kind: FieldKind) -> bool {
        self.config.output.fields.contains(&kind)
    }
}

pub fn execute(ctx: &mut Context) -> Result<(), CliError> {
    match ctx.config.subcommand {
        Subcommand::Cell => run_cell(ctx),
        Subcommand::Enhance => run_enhance(ctx),
        Subcommand::Dilute => run_dilute(ctx),
        Subcommand::Macro => run_macro(ctx),
        Subcommand::Verify => run_verify(ctx),
    }
}

/// Cell solves and effective tensors of the configured microstructure.
pub struct CellStage {
    pub grid: TorusGrid,
    pub map: PhaseMap,
    pub coefficients: Coefficients,
    pub solution: CellSolution,
    pub tensors: EffectiveTensors,
}

fn cell_stage(ctx: &Context) -> Result<CellStage, CliError> {
    let cfg = ctx.config;
    let grid = TorusGrid::new(cfg.dim, cfg.solver.resolution).map_err(CliError::module("torus_fields"))?;
    let geometry = cfg.geometry()?;
    let materials = cfg.materials()?;
    let map = build_phase_map(geometry, grid).map_err(CliError::module("microstructure"))?;
    let coefficients = assemble_coefficients(&materials, &map).map_err(CliError::module("microstructure"))?;
    let solver = CellSolver::new(grid, cfg.solver.discretization, cfg.solver.cell_settings());
    ctx.log(&format!("cell solves on {}^{} ({:?})", grid.n, grid.dim, cfg.solver.discretization));
    let charges = solver
        .charge_densities(cfg.families(), geometry, &coefficients)
        .map_err(CliError::module("microstructure"))?;
    let solution = solver
        .solve_all(&coefficients, &charges, cfg.elastic())
        .map_err(CliError::module("cell_solver"))?;
    let tensors = assemble(&solver, &coefficients, &solution).map_err(CliError::module("effective_tensors"))?;
    Ok(CellStage {
        grid,
        map,
        coefficients,
        solution,
        tensors,
    })
}

#[derive(Debug, Clone, Serialize)]
struct SolveSummary {
    label: String,
    iterations: usize,
    residual: f64,
    plain_residual: f64,
}

fn labelled_fields(solution: &CellSolution) -> Vec<(String, &CellField)> {
    let mut out = Vec::new();
    for (j, f) in solution.chi.iter().enumerate() {
        out.push((format!("corrector[{j}]"), f));
    }
    for (p, f) in solution.psi.iter().enumerate() {
        out.push((format!("charge_potential[{p}]"), f));
    }
    for (p, f) in solution.theta.iter().enumerate() {
        out.push((format!("charge_corrector[{p}]"), f));
    }
    for (k, f) in solution.elastic.iter().enumerate() {
        out.push((format!("elastic_corrector[{k}]"), f));
    }
    out
}

fn write_diagnostics(ctx: &mut Context, reports: &[(String, SolveReport)]) -> Result<(), CliError> {
    if !ctx.verbose {
        return Ok(());
    }
    let rows: Vec<SolveSummary> = reports
        .iter()
        .map(|(label, r)| SolveSummary {
            label: label.clone(),
            iterations: r.iterations,
            residual: r.residual,
            plain_residual: r.plain_residual,
        })
        .collect();
    let p = ctx.out.csv("diagnostics.csv", &rows)?;
    ctx.record(p);
    let header = vec!["label".to_string(), "iteration".to_string(), "residual".to_string()];
    let history: Vec<Vec<String>> = reports
        .iter()
        .flat_map(|(label, r)| {
            r.history
                .iter()
                .enumerate()
                .map(move |(i, v)| vec![label.clone(), i.to_string(), v.to_string()])
        })
        .collect();
    let p = ctx.out.table("residual_history.csv", &header, &history)?;
    ctx.record(p);
    Ok(())
}

fn cell_reports(solution: &CellSolution) -> Vec<(String, SolveReport)> {
    labelled_fields(solution)
        .into_iter()
        .map(|(l, f)| (l, f.report.clone()))
        .collect()
}

#[derive(Serialize)]
struct TensorsOutput<'a> {
    provenance: &'a Provenance,
    discretization: Discretization,
    resolution: usize,
    #[serde(flatten)]
    document: TensorDocument,
    solves: Vec<SolveSummary>,
}

fn write_tensors(
    ctx: &mut Context,
    tensors: &EffectiveTensors,
    solution: &CellSolution,
    discretization: Discretization,
) -> Result<(), CliError> {
    let solves = labelled_fields(solution)
        .into_iter()
        .map(|(label, f)| SolveSummary {
            label,
            iterations: f.report.iterations,
            residual: f.report.residual,
            plain_residual: f.report.plain_residual,
        })
        .collect();
    let doc = TensorsOutput {
        provenance: &ctx.provenance,
        discretization,
        resolution: solution.grid.n,
        document: tensors.document(),
        solves,
    };
    let p = ctx.out.json("tensors.json", &doc)?;
    ctx.record(p);
    Ok(())
}

fn dump_cell_fields(ctx: &mut Context, map: &PhaseMap, solution: &CellSolution) -> Result<(), CliError> {
    let format = ctx.config.output.format;
    let mut dumps: Vec<(String, Field)> = Vec::new();
    if ctx.wants(FieldKind::Indicator) {
        dumps.push(("indicator".into(), map.indicator()));
    }
    if ctx.wants(FieldKind::Charges) {
        for (p, g) in solution.charges.iter().enumerate() {
            dumps.push((format!("charge_{p}"), g.clone()));
        }
    }
    if ctx.wants(FieldKind::Correctors) {
        for (j, f) in solution.chi.iter().enumerate() {
            dumps.push((format!("corrector_{j}"), f.field.clone()));
        }
    }
    if ctx.wants(FieldKind::ChargeCorrectors) {
        for (p, f) in solution.theta.iter().enumerate() {
            dumps.push((format!("charge_corrector_{p}"), f.field.clone()));
        }
    }
    for (name, field) in dumps {
        let p = ctx.out.field(&name, &field, format)?;
        ctx.record(p);
    }
    Ok(())
}

fn run_cell(ctx: &mut Context) -> Result<(), CliError> {
    let stage = cell_stage(ctx)?;
    write_tensors(ctx, &stage.tensors, &stage.solution, ctx.config.solver.discretization)?;
    dump_cell_fields(ctx, &stage.map, &stage.solution)?;
    write_diagnostics(ctx, &cell_reports(&stage.solution))
}

#[derive(Debug, Clone, Serialize)]
pub struct EnhanceSummary {
    pub provenance: Provenance,
    pub permittivity_max_eigenvalue: f64,
    pub coupling_eigenvalues: Vec<f64>,
    pub coupling_asymmetry: f64,
    /// Smallest swept λ at which min eig ε̃^h exceeds max eig ε^h.
    pub threshold: Option<f64>,
    pub directions: Vec<Vec<f64>>,
    pub sweep: Vec<EnhanceRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnhanceRow {
    pub amplitude: f64,
    pub eigenvalues: Vec<f64>,
    pub elliptic: bool,
    pub exceeds_permittivity: bool,
    pub rayleigh: Vec<f64>,
}

fn run_enhance(ctx: &mut Context) -> Result<(), CliError> {
    let cfg = ctx.config;
    let charges = cfg.charges()?;
    let stage = cell_stage(ctx)?;
    let t = &stage.tensors;
    let dim = cfg.dim;
    let directions: Vec<Vec<f64>> = match cfg.study.as_ref().map(|s| s.directions.clone()) {
        Some(d) if !d.is_empty() => d,
        _ => (0..dim).map(|a| (0..dim).map(|b| if a == b { 1.0 } else { 0.0 }).collect()).collect(),
    };
    let eps_max = sym_eigenvalues(&t.permittivity).into_iter().fold(f64::NEG_INFINITY, f64::max);
    let a = &t.charge_coupling;
    let sym = (a + a.transpose()) * 0.5;
    let mut amplitudes = charges.amplitudes.clone();
    amplitudes.sort_by(f64::total_cmp);
    let sweep: Vec<EnhanceRow> = amplitudes
        .iter()
        .map(|&lambda| {
            let e = enhanced_permittivity(&t.permittivity, a, lambda);
            let min = e.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            EnhanceRow {
                amplitude: lambda,
                exceeds_permittivity: min > eps_max,
                elliptic: e.elliptic,
                rayleigh: directions
                    .iter()
                    .map(|xi| rayleigh_quotient(&t.permittivity, a, lambda, xi))
                    .collect(),
                eigenvalues: e.eigenvalues,
            }
        })
        .collect();
    let summary = EnhanceSummary {
        provenance: ctx.provenance.clone(),
        permittivity_max_eigenvalue: eps_max,
        coupling_eigenvalues: sym_eigenvalues(&sym),
        coupling_asymmetry: elastodiel::tensor::asymmetry(a),
        threshold: sweep.iter().find(|r| r.exceeds_permittivity).map(|r| r.amplitude),
        directions: directions.clone(),
        sweep,
    };
    write_tensors(ctx, t, &stage.solution, cfg.solver.discretization)?;
    let mut header = vec!["amplitude".to_string()];
    header.extend((0..dim).map(|k| format!("eigenvalue_{k}")));
    header.extend(["elliptic".to_string(), "exceeds_permittivity".to_string()]);
    header.extend((0..directions.len()).map(|k| format!("rayleigh_{k}")));
    let rows: Vec<Vec<String>> = summary
        .sweep
        .iter()
        .map(|r| {
            let mut row = vec![r.amplitude.to_string()];
            row.extend(r.eigenvalues.iter().map(|v| v.to_string()));
            row.extend([r.elliptic.to_string(), r.exceeds_permittivity.to_string()]);
            row.extend(r.rayleigh.iter().map(|v| v.to_string()));
            row
        })
        .collect();
    let p = ctx.out.table("enhance.csv", &header, &rows)?;
    ctx.record(p);
    let p = ctx.out.json("enhance.json", &summary)?;
    ctx.record(p);
    dump_cell_fields(ctx, &stage.map, &stage.solution)?;
    write_diagnostics(ctx, &cell_reports(&stage.solution))
}

#[derive(Debug, Clone, Serialize)]
struct DiluteRow {
    ell: usize,
    resolution: usize,
    mismatch: f64,
    corrector_distance: f64,
    enhancement_remainder: f64,
    formula_discrepancy: f64,
}

#[derive(Debug, Clone, Serialize)]
struct ScalingRow {
    amplitude: f64,
    ell: usize,
    n_norm: f64,
    p_norm: f64,
}

#[derive(Serialize)]
struct DiluteSummary<'a> {
    provenance: &'a Provenance,
    contrast: f64,
    eta: f64,
    voxels_per_radius: usize,
    sweep: &'a DiluteSweep,
    #[serde(skip_serializing_if = "Option::is_none")]
    scaling: Option<&'a ScalingStudy>,
}

fn run_dilute(ctx: &mut Context) -> Result<(), CliError> {
    let cfg = ctx.config;
    let st = cfg.study()?;
    let dim = cfg.dim;
    let materials = if cfg.phases.is_some() {
        cfg.materials()?
    } else {
        Materials::two_phase(
            PhaseTensors::isotropic(dim, 1.0, (1.0, 1.0), (0.0, 0.0)),
            PhaseTensors::isotropic(dim, 1.0, (1.0, 1.0), (0.0, 0.0)),
        )
    };
    let study = DiluteStudy {
        dim,
        ells: st.ells.clone(),
        contrast: st.contrast.unwrap_or_default(),
        eta: st.eta.unwrap_or_default(),
        amplitudes: st.amplitudes.clone(),
        voxels_per_radius: st.voxels_per_radius.unwrap_or_default(),
        materials,
        settings: cfg.solver.cell_settings(),
        discretization: cfg.solver.discretization,
    };
    ctx.log(&format!("dilute sweep over ell = {:?}", study.ells));
    let sweep = dilute_sweep(&study).map_err(CliError::module("dilute"))?;
    let scaling = if study.amplitudes.is_empty() {
        None
    } else {
        ctx.log(&format!("scaling study over amplitudes {:?}", study.amplitudes));
        Some(scaling_study(&study).map_err(CliError::module("dilute"))?)
    };
    let rows: Vec<DiluteRow> = sweep
        .records
        .iter()
        .map(|r| DiluteRow {
            ell: r.ell,
            resolution: r.resolution,
            mismatch: r.mismatch,
            corrector_distance: r.corrector_distance,
            enhancement_remainder: r.enhancement_remainder,
            formula_discrepancy: r.formula_discrepancy,
        })
        .collect();
    let p = ctx.out.csv("dilute.csv", &rows)?;
    ctx.record(p);
    if let Some(s) = &scaling {
        let rows: Vec<ScalingRow> = s
            .records
            .iter()
            .map(|r| ScalingRow {
                amplitude: r.amplitude,
                ell: r.ell,
                n_norm: r.n_norm,
                p_norm: r.p_norm,
            })
            .collect();
        let p = ctx.out.csv("scaling.csv", &rows)?;
        ctx.record(p);
    }
    let summary = DiluteSummary {
        provenance: &ctx.provenance,
        contrast: study.contrast,
        eta: study.eta,
        voxels_per_radius: study.voxels_per_radius,
        sweep: &sweep,
        scaling: scaling.as_ref(),
    };
    let p = ctx.out.json("dilute.json", &summary)?;
    ctx.record(p);
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct MacroSummary {
    provenance: Provenance,
    cells: usize,
    tensor: Vec<Vec<f64>>,
    scalar_iterations: usize,
    scalar_residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    elastic_iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    elastic_residual: Option<f64>,
}

/// Mean of the oscillating extra source over the cell.
fn extra_source_mean(ctx: &Context, geometry: &PhaseGeometry, grid: TorusGrid) -> Result<Option<ExtraSource>, CliError> {
    let Some(src) = ctx.config.macroscopic()?.extra_source.as_ref() else {
        return Ok(None);
    };
    let mut m = src.constant;
    if let Some(spec) = &src.density {
        let g = build_charge_family(spec, geometry, grid, None).map_err(CliError::module("microstructure"))?;
        m += mean(&g.density)[0];
    }
    Ok(Some(ExtraSource {
        mean: m,
        profile: src.profile.clone(),
    }))
}

fn run_macro(ctx: &mut Context) -> Result<(), CliError> {
    if !ctx.config.periods().is_empty() {
        return run_twoscale(ctx);
    }
    let cfg = ctx.config;
    let section = cfg.macroscopic()?;
    let stage = cell_stage(ctx)?;
    write_tensors(ctx, &stage.tensors, &stage.solution, cfg.solver.discretization)?;
    let grid = BoxGrid::unit(cfg.dim, section.cells).map_err(CliError::module("macro_solver"))?;
    let problem = MacroProblem {
        grid: grid.clone(),
        tensors: MacroTensors::from(&stage.tensors),
        boundary: section.boundary.clone(),
        modulation: section.modulation.clone(),
        extra_source: extra_source_mean(ctx, cfg.geometry()?, stage.grid)?,
        settings: cfg.solver.macro_settings(),
    };
    ctx.log(&format!("macroscopic solve on {} elements per axis", section.cells));
    let sol = solve_macro(&problem).map_err(CliError::module("macro_solver"))?;
    let summary = MacroSummary {
        provenance: ctx.provenance.clone(),
        cells: section.cells,
        tensor: matrix_to_rows(&sol.scalar.tensor),
        scalar_iterations: sol.scalar.report.iterations,
        scalar_residual: sol.scalar.residual,
        elastic_iterations: sol.elastic.as_ref().map(|e| e.report.iterations),
        elastic_residual: sol.elastic.as_ref().map(|e| e.residual),
    };
    let p = ctx.out.json("macro.json", &summary)?;
    ctx.record(p);
    if ctx.wants(FieldKind::Potential) {
        let p = ctx.out.nodal("potential", &grid, &sol.scalar.phi, &["phi"])?;
        ctx.record(p);
    }
    if let (true, Some(e)) = (ctx.wants(FieldKind::Displacement), &sol.elastic) {
        let labels: Vec<String> = (0..cfg.dim).map(|c| format!("u{c}")).collect();
        let labels: Vec<&str> = labels.iter().map(String::as_str).collect();
        let p = ctx.out.nodal("displacement", &grid, &e.u, &labels)?;
        ctx.record(p);
    }
    dump_cell_fields(ctx, &stage.map, &stage.solution)?;
    let mut reports = cell_reports(&stage.solution);
    reports.push(("macro_potential".into(), sol.scalar.report.clone()));
    if let Some(e) = &sol.elastic {
        reports.push(("macro_displacement".into(), e.report.clone()));
    }
    write_diagnostics(ctx, &reports)
}

/// Maps `f` over `items` on up to `threads` workers; results keep the input
/// order.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    let results = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|s| {
        for _ in 0..threads.min(items.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                results.lock().expect("result slots")[i] = Some(r);
            });
        }
    });
    slots.into_iter().map(|r| r.expect("every item mapped")).collect()
}

#[derive(Serialize)]
struct TwoScaleSummary<'a> {
    provenance: &'a Provenance,
    caveat: &'a str,
    cell_resolution: usize,
    rows: &'a [ConvergenceRow],
    monotone: MonotoneChecks,
}

/// Monotonicity of the tabulated sequences, ordered by decreasing δ.
#[derive(Debug, Clone, Serialize)]
pub struct MonotoneChecks {
    pub corrector_error_decreasing: Vec<(f64, bool)>,
    pub below_naive: bool,
    pub without_charge_non_decreasing: Vec<(f64, bool)>,
    pub elastic_distance_decreasing: Option<bool>,
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn non_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] >= w[0])
}

pub fn monotone_checks(rows: &[ConvergenceRow], exponents: &[f64]) -> MonotoneChecks {
    let mut rows: Vec<&ConvergenceRow> = rows.iter().collect();
    rows.sort_by(|a, b| b.delta.total_cmp(&a.delta));
    let series = |q: f64, pick: fn(&elastodiel::twoscale::CorrectorErrors) -> f64| -> Vec<f64> {
        rows.iter().filter_map(|r| r.error(q).map(pick)).collect()
    };
    let elastic: Option<Vec<f64>> = rows.iter().map(|r| r.elastic_distance).collect();
    MonotoneChecks {
        corrector_error_decreasing: exponents.iter().map(|&q| (q, strictly_decreasing(&series(q, |e| e.global)))).collect(),
        below_naive: rows.iter().all(|r| r.errors.iter().all(|e| e.global < e.naive)),
        without_charge_non_decreasing: exponents
            .iter()
            .map(|&q| (q, non_decreasing(&series(q, |e| e.without_charge))))
            .collect(),
        elastic_distance_decreasing: elastic.map(|v| strictly_decreasing(&v)),
    }
}

fn run_twoscale(ctx: &mut Context) -> Result<(), CliError> {
    let cfg = ctx.config;
    let section = cfg.macroscopic()?;
    let st = cfg.study()?;
    let Modulation::Passive { functions } = &section.modulation else {
        return Err(CliError::Config {
            section: "macro".into(),
            message: "the two-scale study needs passive modulation".into(),
        });
    };
    let study = TwoScaleStudy {
        dim: cfg.dim,
        cell_resolution: cfg.solver.resolution,
        periods: cfg.periods(),
        geometry: cfg.geometry()?.clone(),
        materials: cfg.materials()?,
        charges: cfg.families().to_vec(),
        modulation: functions.clone(),
        boundary: section.boundary.clone(),
        extra_source: section.extra_source.clone(),
        boundary_layer: st.boundary_layer,
        exponents: st.exponents.clone(),
        elastic: cfg.elastic(),
        budget: cfg.solver.budget(),
        cell_settings: cfg.solver.cell_settings(),
        fine_settings: cfg.solver.macro_settings(),
    };
    let cap = study.budget.cap(study.dim);
    if let Some(&k) = study.periods.iter().find(|&&k| k * study.cell_resolution > cap) {
        return Err(CliError::Module {
            module: "twoscale",
            source: elastodiel::Error::MemoryBudget {
                requested: k * study.cell_resolution,
                cap,
            },
        });
    }
    ctx.log(&format!("Q1 cell solves on {}^{}", study.cell_resolution, study.dim));
    let cell: CellData = prepare_cell(&study).map_err(CliError::module("twoscale"))?;
    write_tensors(ctx, &cell.tensors, &cell.solution, Discretization::Q1)?;
    ctx.log(&format!("fine solves for 1/delta = {:?} on {} threads", study.periods, ctx.threads));
    let rows = parallel_map(&study.periods, ctx.threads, |&k| study_row(&study, &cell, k))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .map_err(CliError::module("twoscale"))?;
    let mut header: Vec<String> = ["delta", "periods", "fine_resolution", "boundary_layer", "frame_elements"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for q in &study.exponents {
        for name in ["corrector_error", "local_corrector_error", "naive_error", "error_without_charge", "gradient_norm"] {
            header.push(format!("{name}_L{q}"));
        }
    }
    header.extend(["elastic_distance".to_string(), "fine_residual".to_string(), "fine_iterations".to_string()]);
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut row = vec![
                r.delta.to_string(),
                r.periods.to_string(),
                r.fine_resolution.to_string(),
                r.boundary_layer.to_string(),
                r.frame_elements.to_string(),
            ];
            for &q in &study.exponents {
                let e = r.error(q).expect("error for every exponent");
                row.extend([e.global, e.local, e.naive, e.without_charge].iter().map(|v| v.to_string()));
                row.push(r.gradient_norm(q).unwrap_or(f64::NAN).to_string());
            }
            row.push(r.elastic_distance.map(|v| v.to_string()).unwrap_or_default());
            row.push(r.fine_residual.to_string());
            row.push(r.fine_iterations.to_string());
            row
        })
        .collect();
    let p = ctx.out.table("convergence.csv", &header, &table)?;
    ctx.record(p);
    let summary = TwoScaleSummary {
        provenance: &ctx.provenance,
        caveat: INTERFACE_CAVEAT,
        cell_resolution: study.cell_resolution,
        rows: &rows,
        monotone: monotone_checks(&rows, &study.exponents),
    };
    let p = ctx.out.json("twoscale.json", &summary)?;
    ctx.record(p);
    dump_cell_fields(ctx, &cell.map, &cell.solution)?;
    write_diagnostics(ctx, &cell_reports(&cell.solution))
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub passed: bool,
}

fn at_most(name: &str, value: f64, limit: f64) -> Check {
    Check {
        name: name.to_string(),
        value,
        limit,
        passed: value <= limit,
    }
}

fn at_least(name: &str, value: f64, limit: f64) -> Check {
    Check {
        name: name.to_string(),
        value,
        limit,
        passed: value >= limit,
    }
}

fn above(name: &str, value: f64, limit: f64) -> Check {
    Check {
        name: name.to_string(),
        value,
        limit,
        passed: value > limit,
    }
}

/// Certificate checks on assembled tensors.
pub fn certificate_checks(t: &EffectiveTensors) -> Vec<Check> {
    let c = &t.certificates;
    let mut checks = vec![
        at_most("permittivity_asymmetry", c.permittivity_asymmetry, SYMMETRY_TOLERANCE),
        at_least("permittivity_lower_bracket", c.permittivity_bracket[0], -SYMMETRY_TOLERANCE),
        at_least("permittivity_upper_bracket", c.permittivity_bracket[1], -SYMMETRY_TOLERANCE),
    ];
    if t.families() > 0 {
        checks.push(at_most("coupling_triple_formula", c.coupling_discrepancy, IDENTITY_TOLERANCE));
        checks.push(at_most("flux_equals_minus_coupling", c.flux_discrepancy, IDENTITY_TOLERANCE));
        for p in 0..t.families() {
            checks.push(above(&format!("kappa[{p}]_positive"), t.kappa[(p, p)], 0.0));
        }
    }
    if let Some(s) = c.elasticity_symmetry {
        for (k, v) in s.iter().enumerate() {
            checks.push(at_most(&format!("elasticity_symmetry[{k}]"), *v, SYMMETRY_TOLERANCE));
        }
    }
    if let Some(b) = c.elasticity_bracket {
        checks.push(at_least("elasticity_lower_bracket", b[0], -SYMMETRY_TOLERANCE));
        checks.push(at_least("elasticity_upper_bracket", b[1], -SYMMETRY_TOLERANCE));
    }
    if let Some(s) = c.electrostriction_symmetry {
        for (k, v) in s.iter().enumerate() {
            checks.push(at_most(&format!("electrostriction_symmetry[{k}]"), *v, SYMMETRY_TOLERANCE));
        }
    }
    for (p, v) in c.coupling_n_symmetry.iter().enumerate() {
        checks.push(at_most(&format!("coupling_n[{p}]_symmetry"), *v, SYMMETRY_TOLERANCE));
    }
    for (p, v) in c.coupling_p_symmetry.iter().enumerate() {
        checks.push(at_most(&format!("coupling_p[{p}]_symmetry"), *v, SYMMETRY_TOLERANCE));
    }
    checks
}

#[derive(Serialize)]
struct VerifySummary<'a> {
    provenance: &'a Provenance,
    passed: bool,
    checks: &'a [Check],
}

fn run_verify(ctx: &mut Context) -> Result<(), CliError> {
    let stage = cell_stage(ctx)?;
    write_tensors(ctx, &stage.tensors, &stage.solution, ctx.config.solver.discretization)?;
    let checks = certificate_checks(&stage.tensors);
    let passed = checks.iter().all(|c| c.passed);
    let p = ctx.out.json(
        "verify.json",
        &VerifySummary {
            provenance: &ctx.provenance,
            passed,
            checks: &checks,
        },
    )?;
    ctx.record(p);
    write_diagnostics(ctx, &cell_reports(&stage.solution))?;
    if passed {
        Ok(())
    } else {
        let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        Err(CliError::Verification(failed.join(", ")))
    }
}

/// Resolves the output directory: the flag wins over the config entry.
pub fn output_root(flag: Option<&Path>, config: Option<&RunConfig>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| config.and_then(|c| c.output.directory.as_ref().map(PathBuf::from)))
        .unwrap_or_else(|| PathBuf::from("."))
}
