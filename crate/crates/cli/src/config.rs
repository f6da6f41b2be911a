//! Structured-text run configuration.

use serde::{Deserialize, Serialize};

use elastodiel::cell::Discretization;
use elastodiel::macro_solver::{Modulation, ScalarFunction};
use elastodiel::microstructure::{ChargeSpec, Materials, PhaseGeometry, PhaseTensors};
use elastodiel::pcg::SolverSettings;
use elastodiel::tensor::{matrix_from_rows, Matrix, Tensor4};
use elastodiel::twoscale::{MemoryBudget, OscillatingSource};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    Cell,
    Enhance,
    Dilute,
    Macro,
    Verify,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Cell => "cell",
            Subcommand::Enhance => "enhance",
            Subcommand::Dilute => "dilute",
            Subcommand::Macro => "macro",
            Subcommand::Verify => "verify",
        }
    }
}

/// A permittivity given as a multiple of the identity or as a full matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PermittivitySpec {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

/// A fourth-order tensor given by isotropic constants or full components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Tensor4Spec {
    Isotropic([f64; 2]),
    Full(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSection {
    pub permittivity: PermittivitySpec,
    /// Lamé pair (λ, μ) or the dim⁴ components.
    #[serde(default)]
    pub elasticity: Option<Tensor4Spec>,
    /// Isotropic pair (m₁, m₂) or the dim⁴ components.
    #[serde(default)]
    pub electrostriction: Option<Tensor4Spec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChargeSection {
    pub families: Vec<ChargeSpec>,
    /// Amplitudes λ swept by `enhance`.
    #[serde(default)]
    pub amplitudes: Vec<f64>,
}

fn default_resolution() -> usize {
    64
}
fn default_tolerance() -> f64 {
    1e-8
}
fn default_iterations() -> usize {
    10_000
}
fn default_macro_tolerance() -> f64 {
    1e-12
}
fn default_macro_iterations() -> usize {
    20_000
}
fn default_cap_2d() -> usize {
    MemoryBudget::default().max_2d
}
fn default_cap_3d() -> usize {
    MemoryBudget::default().max_3d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default)]
    pub discretization: Discretization,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_macro_tolerance")]
    pub macro_tolerance: f64,
    #[serde(default = "default_macro_iterations")]
    pub macro_max_iterations: usize,
    #[serde(default = "default_cap_2d")]
    pub max_fine_2d: usize,
    #[serde(default = "default_cap_3d")]
    pub max_fine_3d: usize,
    /// Declared ellipticity constants of the permittivities.
    #[serde(default)]
    pub ellipticity_bounds: Option<[f64; 2]>,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            resolution: default_resolution(),
            discretization: Discretization::default(),
            tolerance: default_tolerance(),
            max_iterations: default_iterations(),
            macro_tolerance: default_macro_tolerance(),
            macro_max_iterations: default_macro_iterations(),
            max_fine_2d: default_cap_2d(),
            max_fine_3d: default_cap_3d(),
            ellipticity_bounds: None,
        }
    }
}

impl SolverSection {
    pub fn cell_settings(&self) -> SolverSettings {
        SolverSettings {
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
        }
    }

    pub fn macro_settings(&self) -> SolverSettings {
        SolverSettings {
            tolerance: self.macro_tolerance,
            max_iterations: self.macro_max_iterations,
        }
    }

    pub fn budget(&self) -> MemoryBudget {
        MemoryBudget {
            max_2d: self.max_fine_2d,
            max_3d: self.max_fine_3d,
        }
    }
}

fn default_exponents() -> Vec<f64> {
    vec![2.0, 4.0, 8.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    /// Dilute cell sides ℓ.
    #[serde(default)]
    pub ells: Vec<usize>,
    /// Periods δ of the two-scale study; each 1/δ must be an integer.
    #[serde(default)]
    pub deltas: Vec<f64>,
    /// Amplitudes λ of the dilute scaling study.
    #[serde(default)]
    pub amplitudes: Vec<f64>,
    /// Exponents q of the two-scale L^q norms.
    #[serde(default = "default_exponents")]
    pub exponents: Vec<f64>,
    /// Dilute inclusion permittivity (unit background).
    #[serde(default)]
    pub contrast: Option<f64>,
    /// Dilute coating thickness relative to the radius.
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub voxels_per_radius: Option<usize>,
    /// Directions ξ of the Rayleigh quotients reported by `enhance`.
    #[serde(default)]
    pub directions: Vec<Vec<f64>>,
    /// Replace the coefficients outside the interior cell union by the
    /// matrix phase in the two-scale study.
    #[serde(default)]
    pub boundary_layer: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacroSection {
    /// Elements per axis on the unit box.
    pub cells: usize,
    pub boundary: ScalarFunction,
    pub modulation: Modulation,
    #[serde(default)]
    pub extra_source: Option<OscillatingSource>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldFormat {
    #[default]
    Csv,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldKind {
    Indicator,
    Charges,
    Correctors,
    ChargeCorrectors,
    Potential,
    Displacement,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub directory: Option<String>,
    #[serde(default)]
    pub fields: Vec<FieldKind>,
    #[serde(default)]
    pub format: FieldFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub subcommand: Subcommand,
    pub dim: usize,
    #[serde(default)]
    pub geometry: Option<PhaseGeometry>,
    #[serde(default)]
    pub phases: Option<Vec<PhaseSection>>,
    #[serde(default)]
    pub charges: Option<ChargeSection>,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub study: Option<StudySection>,
    #[serde(default, rename = "macro")]
    pub macroscopic: Option<MacroSection>,
    #[serde(default)]
    pub output: OutputSection,
}

fn invalid(section: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        section: section.to_string(),
        message: message.into(),
    }
}

fn missing(section: &str, subcommand: Subcommand) -> CliError {
    invalid(section, format!("section `{section}` is required by `{}` but absent", subcommand.name()))
}

fn positive(section: &str, name: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(section, format!("{name} must be positive and finite, got {v}")))
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let config: RunConfig = toml::from_str(text).map_err(|e| invalid("<root>", e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn geometry(&self) -> Result<&PhaseGeometry, CliError> {
        self.geometry.as_ref().ok_or_else(|| missing("geometry", self.subcommand))
    }

    pub fn charges(&self) -> Result<&ChargeSection, CliError> {
        self.charges.as_ref().ok_or_else(|| missing("charges", self.subcommand))
    }

    pub fn families(&self) -> &[ChargeSpec] {
        self.charges.as_ref().map(|c| c.families.as_slice()).unwrap_or(&[])
    }

    pub fn study(&self) -> Result<&StudySection, CliError> {
        self.study.as_ref().ok_or_else(|| missing("study", self.subcommand))
    }

    pub fn macroscopic(&self) -> Result<&MacroSection, CliError> {
        self.macroscopic.as_ref().ok_or_else(|| missing("macro", self.subcommand))
    }

    /// Two-scale periods 1/δ.
    pub fn periods(&self) -> Vec<usize> {
        self.study
            .as_ref()
            .map(|s| s.deltas.iter().map(|d| (1.0 / d).round() as usize).collect())
            .unwrap_or_default()
    }

    /// True when every phase carries elastic and electrostrictive data.
    pub fn elastic(&self) -> bool {
        self.phases
            .as_ref()
            .is_some_and(|p| p.iter().all(|ph| ph.elasticity.is_some() && ph.electrostriction.is_some()))
    }

    pub fn materials(&self) -> Result<Materials, CliError> {
        let phases = self.phases.as_ref().ok_or_else(|| missing("phases", self.subcommand))?;
        let dim = self.dim;
        let elastic = self.elastic();
        let phases = phases
            .iter()
            .enumerate()
            .map(|(p, ph)| {
                let section = format!("phases[{p}]");
                let permittivity = match &ph.permittivity {
                    PermittivitySpec::Scalar(e) => Matrix::identity(dim, dim) * *e,
                    PermittivitySpec::Matrix(rows) => {
                        if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                            return Err(invalid(&section, format!("permittivity must be {dim}x{dim}")));
                        }
                        matrix_from_rows(rows)
                    }
                };
                let tensor = |spec: &Option<Tensor4Spec>, name: &str| -> Result<Tensor4, CliError> {
                    match spec {
                        _ if !elastic => Ok(Tensor4::isotropic(dim, 1.0, 1.0)),
                        Some(Tensor4Spec::Isotropic([a, b])) => Ok(Tensor4::isotropic(dim, *a, *b)),
                        Some(Tensor4Spec::Full(data)) if data.len() == dim.pow(4) => Ok(Tensor4 {
                            dim,
                            data: data.clone(),
                        }),
                        Some(Tensor4Spec::Full(data)) => Err(invalid(
                            &section,
                            format!("{name} needs {} components, got {}", dim.pow(4), data.len()),
                        )),
                        None => Err(invalid(&section, format!("{name} missing"))),
                    }
                };
                Ok(PhaseTensors {
                    elasticity: tensor(&ph.elasticity, "elasticity")?,
                    electrostriction: tensor(&ph.electrostriction, "electrostriction")?,
                    permittivity,
                })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        Ok(Materials {
            phases,
            bounds: self.solver.ellipticity_bounds.map(|[a, b]| (a, b)),
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(2..=3).contains(&self.dim) {
            return Err(invalid("<root>", format!("dim must be 2 or 3, got {}", self.dim)));
        }
        let s = &self.solver;
        if s.resolution < 4 || !s.resolution.is_power_of_two() {
            return Err(invalid("solver", format!("resolution must be a power of two >= 4, got {}", s.resolution)));
        }
        for (name, t) in [("tolerance", s.tolerance), ("macro_tolerance", s.macro_tolerance)] {
            if !(t > 0.0 && t < 1.0) {
                return Err(invalid("solver", format!("{name} must lie in (0, 1), got {t}")));
            }
        }
        if s.max_iterations == 0 || s.macro_max_iterations == 0 {
            return Err(invalid("solver", "iteration limits must be positive"));
        }
        if let Some([a, b]) = s.ellipticity_bounds {
            if !(a > 0.0 && b >= a) {
                return Err(invalid("solver", "ellipticity_bounds must satisfy 0 < lower <= upper"));
            }
        }
        if let Some(phases) = &self.phases {
            if phases.is_empty() {
                return Err(invalid("phases", "at least one phase is required"));
            }
            let some_elastic = phases.iter().any(|p| p.elasticity.is_some() || p.electrostriction.is_some());
            if some_elastic && !self.elastic() {
                return Err(invalid(
                    "phases",
                    "elasticity and electrostriction must be given for every phase or for none",
                ));
            }
            if let Some(geometry) = &self.geometry {
                if geometry.phase_count() > phases.len() {
                    return Err(invalid(
                        "phases",
                        format!("geometry uses {} phases, {} defined", geometry.phase_count(), phases.len()),
                    ));
                }
            }
        }
        if let Some(c) = &self.charges {
            for &a in &c.amplitudes {
                if !a.is_finite() || a < 0.0 {
                    return Err(invalid("charges", format!("amplitudes must be finite and non-negative, got {a}")));
                }
            }
        }
        if let Some(st) = &self.study {
            for &d in &st.deltas {
                let k = (1.0 / d).round();
                if !(d > 0.0 && d <= 1.0) || (k * d - 1.0).abs() > 1e-9 {
                    return Err(invalid("study", format!("delta {d} is not the reciprocal of a positive integer")));
                }
            }
            for &q in &st.exponents {
                if !(q >= 1.0 && q.is_finite()) {
                    return Err(invalid("study", format!("exponent {q} must be finite and >= 1")));
                }
            }
            for &a in &st.amplitudes {
                positive("study", "amplitude", a)?;
            }
            if let Some(c) = st.contrast {
                positive("study", "contrast", c)?;
            }
            if let Some(e) = st.eta {
                positive("study", "eta", e)?;
            }
            if st.directions.iter().any(|d| d.len() != self.dim || d.iter().all(|v| *v == 0.0)) {
                return Err(invalid("study", format!("directions must be nonzero vectors of length {}", self.dim)));
            }
        }
        if let Some(m) = &self.macroscopic {
            if m.cells < 2 {
                return Err(invalid("macro", "cells must be at least 2"));
            }
            if !m.boundary.dimension_ok(self.dim) {
                return Err(invalid("macro", "boundary function dimension does not match dim"));
            }
            match &m.modulation {
                Modulation::Passive { functions } => {
                    if functions.len() != self.families().len() {
                        return Err(invalid(
                            "macro",
                            format!(
                                "{} modulation functions for {} charge families",
                                functions.len(),
                                self.families().len()
                            ),
                        ));
                    }
                    if functions.iter().any(|f| !f.dimension_ok(self.dim)) {
                        return Err(invalid("macro", "modulation function dimension does not match dim"));
                    }
                }
                Modulation::Active => {
                    if self.families().len() != self.dim {
                        return Err(invalid("macro", "active modulation needs one charge family per direction"));
                    }
                }
            }
        }
        self.validate_subcommand()
    }

    fn validate_subcommand(&self) -> Result<(), CliError> {
        let sub = self.subcommand;
        match sub {
            Subcommand::Cell | Subcommand::Verify => {
                self.geometry()?;
                self.materials()?;
            }
            Subcommand::Enhance => {
                self.geometry()?;
                self.materials()?;
                let c = self.charges()?;
                if c.families.len() != self.dim {
                    return Err(invalid("charges", "enhance needs one charge family per direction"));
                }
                if c.amplitudes.is_empty() {
                    return Err(invalid("charges", "enhance needs a non-empty amplitudes list"));
                }
            }
            Subcommand::Dilute => {
                let st = self.study()?;
                if st.ells.is_empty() {
                    return Err(invalid("study", "dilute needs a non-empty ells list"));
                }
                if st.contrast.is_none() || st.eta.is_none() || st.voxels_per_radius.is_none() {
                    return Err(invalid("study", "dilute needs contrast, eta and voxels_per_radius"));
                }
                if !st.amplitudes.is_empty() {
                    if st.amplitudes.len() < 3 || st.ells.len() < 3 {
                        return Err(invalid("study", "the scaling study needs at least 3 amplitudes and 3 ells"));
                    }
                    let m = self.materials()?;
                    if m.phases.len() != 2 || !self.elastic() {
                        return Err(invalid(
                            "phases",
                            "the scaling study needs two phases with elastic and electrostrictive data",
                        ));
                    }
                }
            }
            Subcommand::Macro => {
                self.geometry()?;
                self.materials()?;
                let m = self.macroscopic()?;
                if !self.periods().is_empty() {
                    if !matches!(m.modulation, Modulation::Passive { .. }) {
                        return Err(invalid("macro", "the two-scale study needs passive modulation"));
                    }
                    if self.dim != 2 && self.dim != 3 {
                        return Err(invalid("<root>", "two-scale study needs dim 2 or 3"));
                    }
                }
            }
        }
        Ok(())
    }
}
