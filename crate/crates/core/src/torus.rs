//! Periodic grids on the unit torus, sampled fields and the spectral calculus
//! (FFT-based differentiation, means, inner products) used by the cell solvers.
//!
//! Samples sit at the midpoints `(i + 1/2) / n` of a uniform lattice. Fields
//! store their components one after another (component-major), each
//! component being a row-major array with axis 0 varying slowest.

use std::io::{BufRead, Read, Write};
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Regular `n^dim` grid of midpoints on the unit torus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorusGrid {
    pub dim: usize,
    pub n: usize,
    /// Physical side length represented by the unit cell (1 unless the grid
    /// carries a dilution scale).
    pub scale: f64,
}

impl TorusGrid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        Self::with_scale(dim, n, 1.0)
    }

    pub fn with_scale(dim: usize, n: usize, scale: f64) -> Result<Self> {
        if !(2..=3).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in {{2, 3}}")));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "resolution {n} must be a power of two >= 8"
            )));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidGrid(format!("scale {scale} must be positive")));
        }
        Ok(Self { dim, n, scale })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Multi-index of a flat index (axis 0 slowest).
    #[inline]
    pub fn multi_index(&self, mut idx: usize, out: &mut [usize]) {
        for a in (0..self.dim).rev() {
            out[a] = idx % self.n;
            idx /= self.n;
        }
    }

    #[inline]
    pub fn flat_index(&self, mi: &[usize]) -> usize {
        mi.iter().take(self.dim).fold(0, |acc, &i| acc * self.n + i)
    }

    /// Midpoint coordinates of a flat index in `[0,1)^dim`.
    #[inline]
    pub fn point(&self, idx: usize, out: &mut [f64]) {
        let mut rem = idx;
        let h = self.spacing();
        for a in (0..self.dim).rev() {
            out[a] = ((rem % self.n) as f64 + 0.5) * h;
            rem /= self.n;
        }
    }

    /// Signed frequency of a DFT index; `None` for the Nyquist index.
    #[inline]
    pub fn frequency(&self, k: usize) -> Option<i64> {
        let half = self.n / 2;
        if k == half {
            None
        } else if k < half {
            Some(k as i64)
        } else {
            Some(k as i64 - self.n as i64)
        }
    }

    /// Derivative symbol 2π·freq along one axis, zero at the Nyquist index.
    #[inline]
    pub fn derivative_symbol(&self, k: usize) -> f64 {
        self.frequency(k)
            .map(|f| 2.0 * std::f64::consts::PI * f as f64)
            .unwrap_or(0.0)
    }
}

/// Tensor rank of a field's samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rank {
    Scalar,
    Vector,
    Matrix,
    SymMatrix,
}

impl Rank {
    pub fn components(self, dim: usize) -> usize {
        match self {
            Rank::Scalar => 1,
            Rank::Vector => dim,
            Rank::Matrix => dim * dim,
            Rank::SymMatrix => dim * (dim + 1) / 2,
        }
    }

    fn code(self) -> u32 {
        match self {
            Rank::Scalar => 0,
            Rank::Vector => 1,
            Rank::Matrix => 2,
            Rank::SymMatrix => 3,
        }
    }

    fn from_code(c: u32) -> Result<Self> {
        Ok(match c {
            0 => Rank::Scalar,
            1 => Rank::Vector,
            2 => Rank::Matrix,
            3 => Rank::SymMatrix,
            _ => return Err(Error::Format(format!("unknown rank code {c}"))),
        })
    }

    fn name(self) -> &'static str {
        match self {
            Rank::Scalar => "scalar",
            Rank::Vector => "vector",
            Rank::Matrix => "matrix",
            Rank::SymMatrix => "sym-matrix",
        }
    }

    fn from_name(s: &str) -> Result<Self> {
        Ok(match s {
            "scalar" => Rank::Scalar,
            "vector" => Rank::Vector,
            "matrix" => Rank::Matrix,
            "sym-matrix" => Rank::SymMatrix,
            _ => return Err(Error::Format(format!("unknown rank {s}"))),
        })
    }
}

/// Samples of a scalar, vector or matrix quantity on a [`TorusGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: TorusGrid,
    rank: Rank,
    data: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: TorusGrid, rank: Rank) -> Self {
        Self {
            grid,
            rank,
            data: vec![0.0; grid.len() * rank.components(grid.dim)],
        }
    }

    pub fn from_data(grid: TorusGrid, rank: Rank, data: Vec<f64>) -> Result<Self> {
        let expected = grid.len() * rank.components(grid.dim);
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "{} samples given, {} expected",
                data.len(),
                expected
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Shape(format!("non-finite sample {bad}")));
        }
        Ok(Self { grid, rank, data })
    }

    /// Samples `f` at every midpoint.
    pub fn from_fn(grid: TorusGrid, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut y = vec![0.0; grid.dim];
        let data = (0..grid.len())
            .map(|i| {
                grid.point(i, &mut y);
                f(&y)
            })
            .collect();
        Self {
            grid,
            rank: Rank::Scalar,
            data,
        }
    }

    pub fn constant(grid: TorusGrid, value: f64) -> Self {
        Self {
            grid,
            rank: Rank::Scalar,
            data: vec![value; grid.len()],
        }
    }

    /// Builds a multi-component field from scalar components.
    pub fn stack(rank: Rank, components: &[Field]) -> Result<Self> {
        let grid = components
            .first()
            .ok_or_else(|| Error::Shape("no components".into()))?
            .grid;
        if components.len() != rank.components(grid.dim) {
            return Err(Error::Shape(format!(
                "{} components for rank {:?}",
                components.len(),
                rank
            )));
        }
        let mut data = Vec::with_capacity(grid.len() * components.len());
        for c in components {
            if c.grid != grid || c.rank != Rank::Scalar {
                return Err(Error::Shape("stacked components must be scalar on one grid".into()));
            }
            data.extend_from_slice(&c.data);
        }
        Ok(Self { grid, rank, data })
    }

    #[inline]
    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    #[inline]
    pub fn rank(&self) -> Rank {
        self.rank
    }

    #[inline]
    pub fn components(&self) -> usize {
        self.rank.components(self.grid.dim)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Samples of component `c`.
    #[inline]
    pub fn component(&self, c: usize) -> &[f64] {
        let n = self.grid.len();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.grid.len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn component_field(&self, c: usize) -> Field {
        Field {
            grid: self.grid,
            rank: Rank::Scalar,
            data: self.component(c).to_vec(),
        }
    }

    /// Value of component `c` at flat point index `i`.
    #[inline]
    pub fn at(&self, c: usize, i: usize) -> f64 {
        self.data[c * self.grid.len() + i]
    }

    pub fn scaled(&self, s: f64) -> Field {
        Field {
            grid: self.grid,
            rank: self.rank,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn linear_combination(&self, a: f64, other: &Field, b: f64) -> Result<Field> {
        self.check_same_shape(other)?;
        Ok(Field {
            grid: self.grid,
            rank: self.rank,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        })
    }

    pub fn check_same_shape(&self, other: &Field) -> Result<()> {
        if self.grid != other.grid || self.rank != other.rank {
            return Err(Error::Shape(format!(
                "{:?}/{:?} vs {:?}/{:?}",
                self.grid, self.rank, other.grid, other.rank
            )));
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Discrete L² norm with midpoint weights, summed over components.
    pub fn l2_norm(&self) -> f64 {
        inner_product(self, self).sqrt()
    }

    /// Serializes to the binary layout: magic, dimension, resolution, rank,
    /// component count (u32 LE each), then point-major f64 LE samples.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(FIELD_MAGIC)?;
        for v in [
            self.grid.dim as u32,
            self.grid.n as u32,
            self.rank.code(),
            self.components() as u32,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        let npts = self.grid.len();
        let nc = self.components();
        for i in 0..npts {
            for c in 0..nc {
                w.write_all(&self.data[c * npts + i].to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != FIELD_MAGIC {
            return Err(Error::Format("bad field magic".into()));
        }
        let mut word = [0u8; 4];
        let mut header = [0u32; 4];
        for h in header.iter_mut() {
            r.read_exact(&mut word)?;
            *h = u32::from_le_bytes(word);
        }
        let grid = TorusGrid::new(header[0] as usize, header[1] as usize)?;
        let rank = Rank::from_code(header[2])?;
        let nc = rank.components(grid.dim);
        if nc != header[3] as usize {
            return Err(Error::Format("component count does not match rank".into()));
        }
        let npts = grid.len();
        let mut data = vec![0.0; npts * nc];
        let mut buf = [0u8; 8];
        for i in 0..npts {
            for c in 0..nc {
                r.read_exact(&mut buf)?;
                data[c * npts + i] = f64::from_le_bytes(buf);
            }
        }
        Field::from_data(grid, rank, data)
    }

    /// CSV layout: a `# dimension=..,resolution=..,rank=..` header line, a
    /// column header, then one row per point (multi-index, components).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.grid.dim;
        writeln!(
            w,
            "# dimension={},resolution={},rank={}",
            d,
            self.grid.n,
            self.rank.name()
        )?;
        let mut cols: Vec<String> = (0..d).map(|a| format!("i{a}")).collect();
        cols.extend((0..self.components()).map(|c| format!("c{c}")));
        writeln!(w, "{}", cols.join(","))?;
        let npts = self.grid.len();
        let mut mi = vec![0; d];
        for i in 0..npts {
            self.grid.multi_index(i, &mut mi);
            let mut row: Vec<String> = mi.iter().map(|v| v.to_string()).collect();
            row.extend((0..self.components()).map(|c| format!("{:e}", self.data[c * npts + i])));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty csv".into()))??;
        let mut dim = None;
        let mut n = None;
        let mut rank = None;
        for kv in header.trim_start_matches('#').trim().split(',') {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad header entry {kv}")))?;
            match k.trim() {
                "dimension" => dim = v.trim().parse::<usize>().ok(),
                "resolution" => n = v.trim().parse::<usize>().ok(),
                "rank" => rank = Some(Rank::from_name(v.trim())?),
                _ => {}
            }
        }
        let (dim, n, rank) = match (dim, n, rank) {
            (Some(d), Some(n), Some(r)) => (d, n, r),
            _ => return Err(Error::Format("incomplete csv header".into())),
        };
        let grid = TorusGrid::new(dim, n)?;
        let nc = rank.components(dim);
        let npts = grid.len();
        let mut data = vec![0.0; npts * nc];
        lines.next();
        let mut count = 0;
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<&str> = line.split(',').collect();
            if vals.len() != dim + nc {
                return Err(Error::Format(format!("row has {} columns", vals.len())));
            }
            let mi: Vec<usize> = vals[..dim]
                .iter()
                .map(|s| s.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(e.to_string()))?;
            let idx = grid.flat_index(&mi);
            for c in 0..nc {
                data[c * npts + idx] = vals[dim + c]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(e.to_string()))?;
            }
            count += 1;
        }
        if count != npts {
            return Err(Error::Format(format!("{count} rows, {npts} expected")));
        }
        Field::from_data(grid, rank, data)
    }
}

const FIELD_MAGIC: &[u8; 8] = b"EDFIELD1";

/// Per-component midpoint-rule average.
pub fn mean(f: &Field) -> Vec<f64> {
    let n = f.grid.len() as f64;
    (0..f.components())
        .map(|c| f.component(c).iter().sum::<f64>() / n)
        .collect()
}

/// Subtracts the mean from every component.
pub fn project_zero_mean(f: &Field) -> Field {
    let m = mean(f);
    let mut out = f.clone();
    for (c, mc) in m.iter().enumerate() {
        for v in out.component_mut(c) {
            *v -= mc;
        }
    }
    out
}

/// ⨍ f·g summed over components.
pub fn inner_product(f: &Field, g: &Field) -> f64 {
    f.data.iter().zip(&g.data).map(|(a, b)| a * b).sum::<f64>() / f.grid.len() as f64
}

/// FFT machinery for one grid: forward/inverse N-dimensional transforms and
/// the derivative symbols.
pub struct Spectral {
    grid: TorusGrid,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    symbols: Vec<f64>,
}

impl Spectral {
    pub fn new(grid: TorusGrid) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(grid.n);
        let inverse = planner.plan_fft_inverse(grid.n);
        let symbols = (0..grid.n).map(|k| grid.derivative_symbol(k)).collect();
        Self {
            grid,
            forward,
            inverse,
            symbols,
        }
    }

    #[inline]
    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    /// Derivative symbol per DFT index along one axis.
    #[inline]
    pub fn symbols(&self) -> &[f64] {
        &self.symbols
    }

    fn transform(&self, data: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        let n = self.grid.n;
        let dim = self.grid.dim;
        let total = data.len();
        let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        // Last axis: contiguous lines.
        fft.process_with_scratch(data, &mut scratch);
        let mut line = vec![Complex64::default(); n];
        for axis in 0..dim - 1 {
            let stride = n.pow((dim - 1 - axis) as u32);
            let block = stride * n;
            for start in (0..total).step_by(block) {
                for offset in 0..stride {
                    let base = start + offset;
                    for (k, l) in line.iter_mut().enumerate() {
                        *l = data[base + k * stride];
                    }
                    fft.process_with_scratch(&mut line, &mut scratch);
                    for (k, l) in line.iter().enumerate() {
                        data[base + k * stride] = *l;
                    }
                }
            }
        }
    }

    /// Unnormalized forward DFT in place.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, &self.forward);
    }

    /// Inverse DFT in place, normalized so that `inverse(forward(x)) = x`.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, &self.inverse);
        let s = 1.0 / data.len() as f64;
        for v in data.iter_mut() {
            *v *= s;
        }
    }

    pub fn forward_real(&self, values: &[f64]) -> Vec<Complex64> {
        let mut c: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut c);
        c
    }

    /// Inverse transform keeping the real part.
    pub fn inverse_real(&self, mut spectrum: Vec<Complex64>) -> Vec<f64> {
        self.inverse(&mut spectrum);
        spectrum.into_iter().map(|c| c.re).collect()
    }

    /// Writes the derivative symbols of mode `idx` into `xi`.
    #[inline]
    pub fn wavevector(&self, idx: usize, xi: &mut [f64]) {
        let n = self.grid.n;
        let mut rem = idx;
        for a in (0..self.grid.dim).rev() {
            xi[a] = self.symbols[rem % n];
            rem /= n;
        }
    }

    /// True for modes annihilated by the spectral gradient: every axis index is
    /// either 0 or Nyquist (this includes the mean mode).
    #[inline]
    pub fn is_null_mode(&self, idx: usize) -> bool {
        let n = self.grid.n;
        let mut rem = idx;
        for _ in 0..self.grid.dim {
            let k = rem % n;
            if k != 0 && k != n / 2 {
                return false;
            }
            rem /= n;
        }
        true
    }

    /// Gradient of the real field whose spectrum is `hat`, one component per axis.
    pub fn gradient_from_spectrum(&self, hat: &[Complex64]) -> Vec<Vec<f64>> {
        let dim = self.grid.dim;
        let mut xi = vec![0.0; dim];
        (0..dim)
            .map(|a| {
                let mut d: Vec<Complex64> = hat.to_vec();
                for (idx, v) in d.iter_mut().enumerate() {
                    self.wavevector(idx, &mut xi);
                    *v *= Complex64::new(0.0, xi[a]);
                }
                self.inverse_real(d)
            })
            .collect()
    }

    /// Spectral Laplacian with the Nyquist-zeroed symbols, i.e. div∘grad.
    pub fn laplacian(&self, f: &[f64]) -> Vec<f64> {
        let mut hat = self.forward_real(f);
        let mut xi = vec![0.0; self.grid.dim];
        for (idx, v) in hat.iter_mut().enumerate() {
            self.wavevector(idx, &mut xi);
            *v *= -xi.iter().map(|x| x * x).sum::<f64>();
        }
        self.inverse_real(hat)
    }
}

/// Trigonometric-interpolation gradient of a scalar field.
pub fn spectral_gradient(f: &Field) -> Result<Field> {
    if f.rank != Rank::Scalar {
        return Err(Error::Shape("spectral_gradient needs a scalar field".into()));
    }
    let sp = Spectral::new(f.grid);
    let hat = sp.forward_real(&f.data);
    let comps = sp.gradient_from_spectrum(&hat);
    let data = comps.concat();
    Ok(Field {
        grid: f.grid,
        rank: Rank::Vector,
        data,
    })
}

/// ⨍ f g computed from DFT coefficients (Parseval), summed over components.
pub fn spectral_inner_product(f: &Field, g: &Field) -> Result<f64> {
    f.check_same_shape(g)?;
    let sp = Spectral::new(f.grid);
    let npts = f.grid.len() as f64;
    let mut total = 0.0;
    for c in 0..f.components() {
        let a = sp.forward_real(f.component(c));
        let b = sp.forward_real(g.component(c));
        total += a.iter().zip(&b).map(|(x, y)| (x.conj() * y).re).sum::<f64>();
    }
    Ok(total / (npts * npts))
}
