//! Phase geometry on the torus, per-phase material tensors, voxelized
//! coefficient fields and the microscopic charge families.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::dilute::eshelby_corrector;
use crate::error::{Error, Result};
use crate::tensor::{asymmetry, sym_eigenvalues, Matrix, Tensor4};
use crate::torus::{mean, project_zero_mean, Field, Rank, TorusGrid};

/// Largest eigenvalue ratio accepted between and within phases.
pub const MAX_CONTRAST: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Shape {
    Ball { center: Vec<f64>, radius: f64 },
    /// Axis-aligned ellipsoid {Σ ((y−c)_a / s_a)² < 1}.
    Ellipsoid { center: Vec<f64>, semi_axes: Vec<f64> },
}

impl Shape {
    pub fn center(&self) -> &[f64] {
        match self {
            Shape::Ball { center, .. } | Shape::Ellipsoid { center, .. } => center,
        }
    }

    /// Level-set value: negative inside, zero on the boundary.
    fn level(&self, offset: &[f64]) -> f64 {
        match self {
            Shape::Ball { radius, .. } => offset.iter().map(|d| d * d).sum::<f64>() - radius * radius,
            Shape::Ellipsoid { semi_axes, .. } => {
                offset
                    .iter()
                    .zip(semi_axes)
                    .map(|(d, s)| (d / s).powi(2))
                    .sum::<f64>()
                    - 1.0
            }
        }
    }

    fn max_extent(&self) -> f64 {
        match self {
            Shape::Ball { radius, .. } => *radius,
            Shape::Ellipsoid { semi_axes, .. } => semi_axes.iter().fold(0.0, |m, s| m.max(*s)),
        }
    }
}

fn default_phase() -> usize {
    1
}

/// One inclusion: its shape, the phase it is made of, and an optional
/// coating thickness (relative to the radius) that can host charges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inclusion {
    pub shape: Shape,
    #[serde(default = "default_phase")]
    pub phase: usize,
    #[serde(default)]
    pub coating: Option<f64>,
}

impl Inclusion {
    pub fn ball(center: Vec<f64>, radius: f64) -> Self {
        Self {
            shape: Shape::Ball { center, radius },
            phase: 1,
            coating: None,
        }
    }

    pub fn with_coating(mut self, eta: f64) -> Self {
        self.coating = Some(eta);
        self
    }
}

/// Geometry of the cell. `Inclusions` is the particulate setting (checked for
/// overlap and matrix connectivity); the patterns are reference
/// microstructures with closed-form effective tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PhaseGeometry {
    Inclusions { inclusions: Vec<Inclusion> },
    /// Phase 1 on {y_axis ≥ 1 − fraction}.
    Laminate { axis: usize, fraction: f64 },
    /// `cells^dim` board, phase 1 where the cell multi-index sum is odd.
    Checkerboard { cells: usize },
}

impl PhaseGeometry {
    pub fn homogeneous() -> Self {
        PhaseGeometry::Inclusions { inclusions: vec![] }
    }

    pub fn inclusions(&self) -> &[Inclusion] {
        match self {
            PhaseGeometry::Inclusions { inclusions } => inclusions,
            _ => &[],
        }
    }

    pub fn phase_count(&self) -> usize {
        match self {
            PhaseGeometry::Inclusions { inclusions } => {
                inclusions.iter().map(|i| i.phase).max().unwrap_or(0) + 1
            }
            _ => 2,
        }
    }
}

/// Minimal-image offset `y − c` on the unit torus.
#[inline]
pub fn periodic_offset(y: &[f64], c: &[f64], out: &mut [f64]) {
    for a in 0..out.len() {
        let mut d = y[a] - c[a];
        d -= d.round();
        out[a] = d;
    }
}

/// Phase label per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMap {
    pub grid: TorusGrid,
    pub labels: Vec<u8>,
    pub phases: usize,
}

impl PhaseMap {
    pub fn uniform(grid: TorusGrid, phases: usize) -> Self {
        Self {
            grid,
            labels: vec![0; grid.len()],
            phases,
        }
    }

    pub fn volume_fraction(&self, phase: usize) -> f64 {
        self.labels.iter().filter(|&&l| l as usize == phase).count() as f64 / self.labels.len() as f64
    }

    /// Indicator of every non-matrix phase.
    pub fn indicator(&self) -> Field {
        let data = self.labels.iter().map(|&l| if l != 0 { 1.0 } else { 0.0 }).collect();
        Field::from_data(self.grid, Rank::Scalar, data).expect("indicator shape")
    }

    /// Two-phase map from a binary indicator (1 = inclusion phase).
    pub fn from_indicator(indicator: &Field) -> Result<Self> {
        let mut labels = Vec::with_capacity(indicator.data().len());
        for &v in indicator.data() {
            if v == 0.0 {
                labels.push(0);
            } else if v == 1.0 {
                labels.push(1);
            } else {
                return Err(Error::Shape(format!("indicator value {v} not in {{0,1}}")));
            }
        }
        Ok(Self {
            grid: *indicator.grid(),
            labels,
            phases: 2,
        })
    }
}

fn check_inclusions(inclusions: &[Inclusion], dim: usize) -> Result<()> {
    for (i, inc) in inclusions.iter().enumerate() {
        let c = inc.shape.center();
        if c.len() != dim {
            return Err(Error::Shape(format!("inclusion {i} center has {} coordinates", c.len())));
        }
        if let Shape::Ellipsoid { semi_axes, .. } = &inc.shape {
            if semi_axes.len() != dim || semi_axes.iter().any(|s| !(*s > 0.0)) {
                return Err(Error::Shape(format!("inclusion {i} has invalid semi-axes")));
            }
        }
        if !(inc.shape.max_extent() > 0.0) {
            return Err(Error::Shape(format!("inclusion {i} has non-positive size")));
        }
        if inc.phase == 0 {
            return Err(Error::Shape(format!("inclusion {i} uses the matrix phase label 0")));
        }
        // An inclusion reaching half the cell touches its own periodic image.
        if inc.shape.max_extent() >= 0.5 {
            return Err(Error::Overlap { first: i, second: i });
        }
    }
    let mut off = vec![0.0; dim];
    for i in 0..inclusions.len() {
        for j in (i + 1)..inclusions.len() {
            if let (Shape::Ball { center: ci, radius: ri }, Shape::Ball { center: cj, radius: rj }) =
                (&inclusions[i].shape, &inclusions[j].shape)
            {
                periodic_offset(ci, cj, &mut off);
                let dist = off.iter().map(|d| d * d).sum::<f64>().sqrt();
                if dist <= ri + rj {
                    return Err(Error::Overlap { first: i, second: j });
                }
            }
        }
    }
    Ok(())
}

/// Number of face-connected components of the voxels with label 0.
pub fn matrix_components(map: &PhaseMap) -> usize {
    let grid = map.grid;
    let n = grid.n;
    let mut seen = vec![false; grid.len()];
    let mut components = 0;
    let mut queue = VecDeque::new();
    let mut mi = vec![0usize; grid.dim];
    let mut nb = vec![0usize; grid.dim];
    for start in 0..grid.len() {
        if seen[start] || map.labels[start] != 0 {
            continue;
        }
        components += 1;
        seen[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            grid.multi_index(v, &mut mi);
            for a in 0..grid.dim {
                for step in [1, n - 1] {
                    nb.copy_from_slice(&mi);
                    nb[a] = (mi[a] + step) % n;
                    let w = grid.flat_index(&nb);
                    if !seen[w] && map.labels[w] == 0 {
                        seen[w] = true;
                        queue.push_back(w);
                    }
                }
            }
        }
    }
    components
}

/// Voxelizes the geometry: each voxel takes the phase of the inclusion
/// containing its midpoint.
pub fn build_phase_map(geometry: &PhaseGeometry, grid: TorusGrid) -> Result<PhaseMap> {
    let dim = grid.dim;
    let phases = geometry.phase_count();
    let mut map = PhaseMap::uniform(grid, phases);
    let mut y = vec![0.0; dim];
    let mut off = vec![0.0; dim];
    match geometry {
        PhaseGeometry::Inclusions { inclusions } => {
            check_inclusions(inclusions, dim)?;
            let mut owner: Vec<Option<usize>> = vec![None; grid.len()];
            for (k, inc) in inclusions.iter().enumerate() {
                let c = inc.shape.center();
                for idx in 0..grid.len() {
                    grid.point(idx, &mut y);
                    periodic_offset(&y, c, &mut off);
                    if inc.shape.level(&off) < 0.0 {
                        if let Some(prev) = owner[idx] {
                            return Err(Error::Overlap { first: prev, second: k });
                        }
                        owner[idx] = Some(k);
                        map.labels[idx] = inc.phase as u8;
                    }
                }
            }
            if !inclusions.is_empty() {
                let components = matrix_components(&map);
                if components != 1 {
                    return Err(Error::DisconnectedMatrix { components });
                }
            }
        }
        PhaseGeometry::Laminate { axis, fraction } => {
            if *axis >= dim || !(0.0..=1.0).contains(fraction) {
                return Err(Error::Shape("laminate axis or fraction out of range".into()));
            }
            for idx in 0..grid.len() {
                grid.point(idx, &mut y);
                if y[*axis] >= 1.0 - fraction {
                    map.labels[idx] = 1;
                }
            }
        }
        PhaseGeometry::Checkerboard { cells } => {
            if *cells == 0 || grid.n % cells != 0 {
                return Err(Error::Shape(format!(
                    "checkerboard of {cells} cells incompatible with n = {}",
                    grid.n
                )));
            }
            let mut mi = vec![0usize; dim];
            let per = grid.n / cells;
            for idx in 0..grid.len() {
                grid.multi_index(idx, &mut mi);
                let s: usize = mi.iter().map(|i| i / per).sum();
                if s % 2 == 1 {
                    map.labels[idx] = 1;
                }
            }
        }
    }
    Ok(map)
}

/// Binary indicator of the inclusion phase(s).
pub fn build_indicator(geometry: &PhaseGeometry, grid: TorusGrid) -> Result<Field> {
    Ok(build_phase_map(geometry, grid)?.indicator())
}

/// Material tensors of one phase.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTensors {
    pub permittivity: Matrix,
    pub elasticity: Tensor4,
    pub electrostriction: Tensor4,
}

impl PhaseTensors {
    /// ε = e·I, isotropic L(λ, μ), isotropic M(m₁, m₂).
    pub fn isotropic(dim: usize, eps: f64, lame: (f64, f64), striction: (f64, f64)) -> Self {
        Self {
            permittivity: Matrix::identity(dim, dim) * eps,
            elasticity: Tensor4::isotropic(dim, lame.0, lame.1),
            electrostriction: Tensor4::isotropic(dim, striction.0, striction.1),
        }
    }

    pub fn dim(&self) -> usize {
        self.permittivity.nrows()
    }
}

/// Per-phase tensors, index 0 being the matrix phase.
#[derive(Debug, Clone, PartialEq)]
pub struct Materials {
    pub phases: Vec<PhaseTensors>,
    /// Declared ellipticity constants (γ, γ′) for the permittivities.
    pub bounds: Option<(f64, f64)>,
}

impl Materials {
    pub fn two_phase(matrix: PhaseTensors, inclusion: PhaseTensors) -> Self {
        Self {
            phases: vec![matrix, inclusion],
            bounds: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.phases[0].dim()
    }

    /// Checks symmetry, definiteness, declared bounds and contrast.
    pub fn validate(&self) -> Result<()> {
        let dim = self.dim();
        let mut eps_min = f64::INFINITY;
        let mut eps_max = 0.0f64;
        let mut l_min = f64::INFINITY;
        let mut l_max = 0.0f64;
        for (p, ph) in self.phases.iter().enumerate() {
            if ph.dim() != dim || ph.elasticity.dim != dim || ph.electrostriction.dim != dim {
                return Err(Error::Shape(format!("phase {p} tensors have mixed dimensions")));
            }
            if asymmetry(&ph.permittivity) > 1e-12 {
                return Err(Error::Shape(format!("phase {p} permittivity is not symmetric")));
            }
            let ev = sym_eigenvalues(&ph.permittivity);
            if ev[0] <= 0.0 {
                return Err(Error::Ellipticity {
                    what: format!("permittivity of phase {p}"),
                    min_eigenvalue: ev[0],
                });
            }
            if let Some((lo, hi)) = self.bounds {
                if ev[0] < lo || ev[dim - 1] > hi {
                    return Err(Error::EllipticityBounds {
                        what: format!("permittivity of phase {p}"),
                        min: ev[0],
                        max: ev[dim - 1],
                        lower: lo,
                        upper: hi,
                    });
                }
            }
            eps_min = eps_min.min(ev[0]);
            eps_max = eps_max.max(ev[dim - 1]);
            let [s1, s2, s3] = ph.elasticity.symmetry_residuals();
            if s1.max(s2).max(s3) > 1e-12 {
                return Err(Error::Shape(format!("phase {p} elasticity lacks minor/major symmetry")));
            }
            let lev = ph.elasticity.sym_eigenvalues();
            if lev[0] <= 0.0 {
                return Err(Error::Ellipticity {
                    what: format!("elasticity of phase {p}"),
                    min_eigenvalue: lev[0],
                });
            }
            l_min = l_min.min(lev[0]);
            l_max = l_max.max(*lev.last().unwrap());
            let [m1, m2, _] = ph.electrostriction.symmetry_residuals();
            if m1.max(m2) > 1e-12 {
                return Err(Error::Shape(format!("phase {p} electrostriction lacks minor symmetries")));
            }
        }
        for contrast in [eps_max / eps_min, l_max / l_min] {
            if contrast > MAX_CONTRAST {
                return Err(Error::Contrast {
                    contrast,
                    limit: MAX_CONTRAST,
                });
            }
        }
        Ok(())
    }
}

/// A coefficient that takes one value per phase, evaluated through a phase map.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseField<T> {
    pub labels: Vec<u8>,
    pub values: Vec<T>,
    pub grid: TorusGrid,
}

impl<T> PiecewiseField<T> {
    #[inline]
    pub fn at(&self, idx: usize) -> &T {
        &self.values[self.labels[idx] as usize]
    }

    /// Values of the phases that actually occur on the grid.
    pub fn present(&self) -> Vec<&T> {
        let mut used = vec![false; self.values.len()];
        for &l in &self.labels {
            used[l as usize] = true;
        }
        self.values
            .iter()
            .zip(used)
            .filter_map(|(v, u)| u.then_some(v))
            .collect()
    }
}

impl PiecewiseField<Matrix> {
    /// Materializes the matrix-valued field (row-major components).
    pub fn to_field(&self) -> Field {
        let dim = self.grid.dim;
        let npts = self.grid.len();
        let mut data = vec![0.0; npts * dim * dim];
        for idx in 0..npts {
            let m = self.at(idx);
            for i in 0..dim {
                for j in 0..dim {
                    data[(i * dim + j) * npts + idx] = m[(i, j)];
                }
            }
        }
        Field::from_data(self.grid, Rank::Matrix, data).expect("coefficient shape")
    }

    /// (min, max) eigenvalues over the phases present.
    pub fn ellipticity(&self) -> (f64, f64) {
        self.present().iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), m| {
            let ev = sym_eigenvalues(m);
            (lo.min(ev[0]), hi.max(*ev.last().unwrap()))
        })
    }

    /// Arithmetic mean of the phase values present (reference medium).
    pub fn reference(&self) -> Matrix {
        let p = self.present();
        let mut s = Matrix::zeros(self.grid.dim, self.grid.dim);
        for m in &p {
            s += *m;
        }
        s / p.len() as f64
    }

    /// Volume averages ⟨ε⟩ and ⟨ε⁻¹⟩⁻¹.
    pub fn voigt_reuss(&self) -> (Matrix, Matrix) {
        let dim = self.grid.dim;
        let npts = self.labels.len() as f64;
        let mut counts = vec![0usize; self.values.len()];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        let mut arith = Matrix::zeros(dim, dim);
        let mut harm = Matrix::zeros(dim, dim);
        for (v, c) in self.values.iter().zip(counts) {
            if c > 0 {
                let w = c as f64 / npts;
                arith += v * w;
                harm += v.clone().try_inverse().expect("elliptic phase") * w;
            }
        }
        (arith, harm.try_inverse().expect("elliptic mean"))
    }
}

impl PiecewiseField<Tensor4> {
    pub fn reference(&self) -> Tensor4 {
        let p = self.present();
        let mut s = Tensor4::zeros(self.grid.dim);
        for t in &p {
            s = s.add(t);
        }
        s.scaled(1.0 / p.len() as f64)
    }

    /// Voigt and Reuss averages as Mandel matrices.
    pub fn voigt_reuss(&self) -> (Matrix, Matrix) {
        let npts = self.labels.len() as f64;
        let mut counts = vec![0usize; self.values.len()];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        let m = self.grid.dim * (self.grid.dim + 1) / 2;
        let mut arith = Matrix::zeros(m, m);
        let mut harm = Matrix::zeros(m, m);
        for (v, c) in self.values.iter().zip(counts) {
            if c > 0 {
                let w = c as f64 / npts;
                let mandel = v.mandel();
                arith += &mandel * w;
                harm += mandel.try_inverse().expect("elliptic phase") * w;
            }
        }
        (arith, harm.try_inverse().expect("elliptic mean"))
    }
}

/// Pointwise permittivity, elasticity and electrostriction fields.
#[derive(Debug, Clone)]
pub struct Coefficients {
    pub permittivity: PiecewiseField<Matrix>,
    pub elasticity: PiecewiseField<Tensor4>,
    pub electrostriction: PiecewiseField<Tensor4>,
}

impl Coefficients {
    pub fn grid(&self) -> &TorusGrid {
        &self.permittivity.grid
    }
}

pub fn assemble_coefficients(materials: &Materials, map: &PhaseMap) -> Result<Coefficients> {
    materials.validate()?;
    if materials.dim() != map.grid.dim {
        return Err(Error::Shape("material and grid dimensions differ".into()));
    }
    if let Some(&l) = map.labels.iter().max() {
        if l as usize >= materials.phases.len() {
            return Err(Error::Shape(format!(
                "phase {l} used by the geometry has no tensors"
            )));
        }
    }
    let labels = map.labels.clone();
    let grid = map.grid;
    Ok(Coefficients {
        permittivity: PiecewiseField {
            labels: labels.clone(),
            values: materials.phases.iter().map(|p| p.permittivity.clone()).collect(),
            grid,
        },
        elasticity: PiecewiseField {
            labels: labels.clone(),
            values: materials.phases.iter().map(|p| p.elasticity.clone()).collect(),
            grid,
        },
        electrostriction: PiecewiseField {
            labels,
            values: materials.phases.iter().map(|p| p.electrostriction.clone()).collect(),
            grid,
        },
    })
}

/// C^∞ bump on the radial shell `inner < r < outer`, equal to 1 mid-shell.
#[inline]
pub fn shell_bump(r: f64, inner: f64, outer: f64) -> f64 {
    let s = (2.0 * r - inner - outer) / (outer - inner);
    if s.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - s * s)).exp()
    }
}

/// Weight ω used by corrector-weighted charges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Weight {
    Uniform,
    /// Smooth bump on the shell `inner·r < |y − c| < outer·r` of an inclusion of radius r.
    Shell { inclusion: usize, inner: f64, outer: f64 },
}

/// How a charge density g_p is constructed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum ChargeSpec {
    /// amplitude · cos(2π k·y).
    Cosine { wavevector: Vec<i64>, amplitude: f64 },
    /// Smooth bump on a shell around a ball inclusion (radii relative to its
    /// radius), optionally multiplied by the direction cosine (y−c)_p/|y−c|.
    ShellBump {
        inclusion: usize,
        inner: f64,
        outer: f64,
        amplitude: f64,
        #[serde(default)]
        direction: Option<usize>,
    },
    /// Whole-space single-inclusion corrector profile on the coating shell of
    /// every coated ball inclusion, for inclusion permittivity `contrast`
    /// in a unit background.
    Coating { direction: usize, contrast: f64, amplitude: f64 },
    /// amplitude · ω χ_p − mean.
    CorrectorWeighted { direction: usize, weight: Weight, amplitude: f64 },
    /// Raw voxel piecewise-constant density: amplitude on the inclusion phase,
    /// balanced on the matrix. Discontinuous, flagged as such.
    PhaseContrast { amplitude: f64 },
}

/// A zero-mean microscopic charge density with its provenance.
#[derive(Debug, Clone)]
pub struct ChargeFamily {
    pub density: Field,
    pub spec: ChargeSpec,
    /// False for densities with jumps (outside the Hölder setting).
    pub smooth: bool,
}

impl ChargeFamily {
    pub fn from_field(density: Field, smooth: bool) -> Self {
        let amplitude = 1.0;
        Self {
            density: project_zero_mean(&density),
            spec: ChargeSpec::PhaseContrast { amplitude },
            smooth,
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            density: self.density.scaled(s),
            spec: self.spec.clone(),
            smooth: self.smooth,
        }
    }
}

fn ball_of(geometry: &PhaseGeometry, k: usize) -> Result<(&[f64], f64)> {
    match geometry.inclusions().get(k).map(|i| &i.shape) {
        Some(Shape::Ball { center, radius }) => Ok((center, *radius)),
        Some(_) => Err(Error::Support(format!("inclusion {k} is not a ball"))),
        None => Err(Error::Support(format!("no inclusion {k}"))),
    }
}

/// Checks that the ball of radius `outer` around inclusion `k` fits in the
/// cell and stays clear of every other inclusion.
fn check_shell(geometry: &PhaseGeometry, k: usize, outer: f64) -> Result<()> {
    let (c, _) = ball_of(geometry, k)?;
    if outer >= 0.5 {
        return Err(Error::Support(format!(
            "shell of radius {outer} around inclusion {k} exits the cell"
        )));
    }
    let mut off = vec![0.0; c.len()];
    for (j, other) in geometry.inclusions().iter().enumerate() {
        if j == k {
            continue;
        }
        periodic_offset(other.shape.center(), c, &mut off);
        let dist = off.iter().map(|d| d * d).sum::<f64>().sqrt();
        if dist <= outer + other.shape.max_extent() {
            return Err(Error::Support(format!(
                "shell around inclusion {k} overlaps inclusion {j}"
            )));
        }
    }
    Ok(())
}

/// Builds a zero-mean charge density. `correctors` (χ_1..χ_N) are required
/// for the corrector-weighted mode.
pub fn build_charge_family(
    spec: &ChargeSpec,
    geometry: &PhaseGeometry,
    grid: TorusGrid,
    correctors: Option<&[Field]>,
) -> Result<ChargeFamily> {
    let dim = grid.dim;
    let mut off = vec![0.0; dim];
    let mut smooth = true;
    let density = match spec {
        ChargeSpec::Cosine { wavevector, amplitude } => {
            if wavevector.len() != dim {
                return Err(Error::Shape("wavevector dimension".into()));
            }
            Field::from_fn(grid, |y| {
                let phase: f64 = y.iter().zip(wavevector).map(|(a, k)| a * *k as f64).sum();
                amplitude * (2.0 * std::f64::consts::PI * phase).cos()
            })
        }
        ChargeSpec::ShellBump {
            inclusion,
            inner,
            outer,
            amplitude,
            direction,
        } => {
            let (c, r) = ball_of(geometry, *inclusion)?;
            if !(inner < outer) || *inner < 0.0 {
                return Err(Error::Support("shell radii must satisfy 0 <= inner < outer".into()));
            }
            if let Some(p) = direction {
                if *p >= dim {
                    return Err(Error::Shape(format!("direction {p} out of range")));
                }
            }
            check_shell_within(geometry, *inclusion, outer * r)?;
            Field::from_fn(grid, |y| {
                let mut o = vec![0.0; dim];
                periodic_offset(y, c, &mut o);
                let rr = o.iter().map(|d| d * d).sum::<f64>().sqrt();
                let b = shell_bump(rr, inner * r, outer * r);
                let ang = direction.map(|p| if rr > 0.0 { o[p] / rr } else { 0.0 }).unwrap_or(1.0);
                amplitude * b * ang
            })
        }
        ChargeSpec::Coating {
            direction,
            contrast,
            amplitude,
        } => {
            if *direction >= dim {
                return Err(Error::Shape(format!("direction {direction} out of range")));
            }
            let mut g = vec![0.0; grid.len()];
            let mut y = vec![0.0; dim];
            let mut any = false;
            for (k, inc) in geometry.inclusions().iter().enumerate() {
                let Some(eta) = inc.coating else { continue };
                if !(eta > 0.0) {
                    return Err(Error::Support(format!("coating of inclusion {k} must be positive")));
                }
                let (c, r) = ball_of(geometry, k)?;
                check_shell(geometry, k, r * (1.0 + eta))?;
                any = true;
                let mut support = Vec::new();
                let mut x = vec![0.0; dim];
                for (idx, gv) in g.iter_mut().enumerate() {
                    grid.point(idx, &mut y);
                    periodic_offset(&y, c, &mut off);
                    let rr = off.iter().map(|d| d * d).sum::<f64>().sqrt();
                    if rr >= r && rr < r * (1.0 + eta) {
                        for a in 0..dim {
                            x[a] = off[a] / r;
                        }
                        *gv = amplitude * eshelby_corrector(*contrast, &x, *direction);
                        support.push(idx);
                    }
                }
                if !support.is_empty() {
                    let m = support.iter().map(|&i| g[i]).sum::<f64>() / support.len() as f64;
                    for &i in &support {
                        g[i] -= m;
                    }
                }
            }
            if !any {
                return Err(Error::Support("coating mode needs at least one coated inclusion".into()));
            }
            smooth = false;
            Field::from_data(grid, Rank::Scalar, g)?
        }
        ChargeSpec::CorrectorWeighted {
            direction,
            weight,
            amplitude,
        } => {
            let chi = correctors
                .ok_or_else(|| Error::Support("corrector-weighted charges need solved correctors".into()))?;
            let chi_p = chi
                .get(*direction)
                .ok_or_else(|| Error::Shape(format!("no corrector for direction {direction}")))?;
            if chi_p.grid() != &grid {
                return Err(Error::Shape("corrector grid differs from charge grid".into()));
            }
            let omega = weight_field(weight, geometry, grid)?;
            let data = omega
                .data()
                .iter()
                .zip(chi_p.data())
                .map(|(w, x)| amplitude * w * x)
                .collect();
            Field::from_data(grid, Rank::Scalar, data)?
        }
        ChargeSpec::PhaseContrast { amplitude } => {
            smooth = false;
            build_indicator(geometry, grid)?.scaled(*amplitude)
        }
    };
    // Coating densities already have zero mean on every shell; a global
    // shift would leak outside the shells. Nonconstant Fourier modes have
    // zero mean already.
    let density = match spec {
        ChargeSpec::Coating { .. } => density,
        ChargeSpec::Cosine { wavevector, .. } if wavevector.iter().any(|k| *k != 0) => density,
        _ => project_zero_mean(&density),
    };
    debug_assert!(mean(&density)[0].abs() < 1e-12);
    Ok(ChargeFamily {
        density,
        spec: spec.clone(),
        smooth,
    })
}

fn check_shell_within(geometry: &PhaseGeometry, k: usize, outer: f64) -> Result<()> {
    check_shell(geometry, k, outer)
}

/// ω as a field.
pub fn weight_field(weight: &Weight, geometry: &PhaseGeometry, grid: TorusGrid) -> Result<Field> {
    match weight {
        Weight::Uniform => Ok(Field::constant(grid, 1.0)),
        Weight::Shell { inclusion, inner, outer } => {
            let (c, r) = ball_of(geometry, *inclusion)?;
            if !(inner < outer) || *inner < 0.0 {
                return Err(Error::Support("weight shell radii must satisfy 0 <= inner < outer".into()));
            }
            check_shell(geometry, *inclusion, outer * r)?;
            let dim = grid.dim;
            Ok(Field::from_fn(grid, |y| {
                let mut o = vec![0.0; dim];
                periodic_offset(y, c, &mut o);
                let rr = o.iter().map(|d| d * d).sum::<f64>().sqrt();
                shell_bump(rr, inner * r, outer * r)
            }))
        }
    }
}
