//! Periodic grids, discrete Fourier transforms and the field containers.
//!
//! The torus `[-L/2, L/2)^d` stands in for the whole space. Physical points
//! are `x_i = -L/2 + i L / N`; Fourier coefficients use the standard FFT
//! index order (`0, 1, .., N/2-1, -N/2, .., -1`) with wavenumbers
//! `xi = 2 pi k / L`. Coefficients are normalized so that the `xi = 0`
//! entry is the mean value of the field, hence `mass = L^d * c(0)`.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::io::{Read, Write};

use rustfft::num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Magic bytes opening every binary field frame.
pub const FRAME_MAGIC: &[u8; 4] = b"KSE1";

/// Periodic square domain together with its Fourier-mode lattice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    side: f64,
    points: usize,
}

impl Grid {
    pub fn new(dim: usize, side: f64, points: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidGrid(format!(
                "dimension must be 1 or 2, got {dim}"
            )));
        }
        if !(side.is_finite() && side > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "side length must be positive, got {side}"
            )));
        }
        if points < 8 || !points.is_multiple_of(2) {
            return Err(Error::InvalidGrid(format!(
                "points per side must be even and at least 8, got {points}"
            )));
        }
        Ok(Self { dim, side, points })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side_length(&self) -> f64 {
        self.side
    }

    pub fn points_per_side(&self) -> usize {
        self.points
    }

    /// Total number of grid points, `N^d`.
    pub fn len(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        self.side / self.points as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// `L^d`.
    pub fn volume(&self) -> f64 {
        self.side.powi(self.dim as i32)
    }

    /// Lattice spacing `2 pi / L` of the Fourier modes.
    pub fn mode_spacing(&self) -> f64 {
        2.0 * PI / self.side
    }

    /// Magnitude of the Nyquist wavenumber, `pi N / L`.
    pub fn max_wavenumber(&self) -> f64 {
        PI * self.points as f64 / self.side
    }

    pub fn coordinate(&self, i: usize) -> f64 {
        -0.5 * self.side + i as f64 * self.spacing()
    }

    /// Signed integer wavenumber of FFT position `p`.
    pub fn mode_index(&self, p: usize) -> i64 {
        if p < self.points / 2 {
            p as i64
        } else {
            p as i64 - self.points as i64
        }
    }

    pub fn wavenumber(&self, p: usize) -> f64 {
        self.mode_index(p) as f64 * self.mode_spacing()
    }

    /// Wavenumber used by odd-order derivatives: the Nyquist entry is dropped so
    /// that derivatives of real fields stay real.
    pub fn derivative_wavenumber(&self, p: usize) -> f64 {
        if p == self.points / 2 {
            0.0
        } else {
            self.wavenumber(p)
        }
    }

    /// Per-axis positions of a flat index (row-major, first axis slowest).
    pub fn unflatten(&self, flat: usize) -> [usize; 2] {
        if self.dim == 1 {
            [flat, 0]
        } else {
            [flat / self.points, flat % self.points]
        }
    }

    /// Physical position of a flat index; the second entry is 0 when d = 1.
    pub fn point(&self, flat: usize) -> [f64; 2] {
        let [i, j] = self.unflatten(flat);
        if self.dim == 1 {
            [self.coordinate(i), 0.0]
        } else {
            [self.coordinate(i), self.coordinate(j)]
        }
    }

    pub fn radius_sq(&self, flat: usize) -> f64 {
        let [x, y] = self.point(flat);
        x * x + y * y
    }

    /// Wave vector at a flat spectral index.
    pub fn mode(&self, flat: usize) -> [f64; 2] {
        let [i, j] = self.unflatten(flat);
        if self.dim == 1 {
            [self.wavenumber(i), 0.0]
        } else {
            [self.wavenumber(i), self.wavenumber(j)]
        }
    }

    pub fn derivative_mode(&self, flat: usize) -> [f64; 2] {
        let [i, j] = self.unflatten(flat);
        if self.dim == 1 {
            [self.derivative_wavenumber(i), 0.0]
        } else {
            [self.derivative_wavenumber(i), self.derivative_wavenumber(j)]
        }
    }

    pub fn mode_sq(&self, flat: usize) -> f64 {
        let [a, b] = self.mode(flat);
        a * a + b * b
    }

    /// `|xi|^2` for every spectral index, in storage order.
    pub fn mode_sq_table(&self) -> Vec<f64> {
        (0..self.len()).map(|p| self.mode_sq(p)).collect()
    }

    fn parity(&self, flat: usize) -> f64 {
        let [i, j] = self.unflatten(flat);
        if (i + j) % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

/// Real scalar field sampled on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RealField {
    grid: Grid,
    values: Vec<f64>,
    time: f64,
}

impl RealField {
    pub fn new(grid: Grid, values: Vec<f64>, time: f64) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Mismatch(format!(
                "field has {} values, grid needs {}",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        if !(time >= 0.0 && time.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "time tag must be nonnegative, got {time}"
            )));
        }
        Ok(Self { grid, values, time })
    }

    /// Construction without the finiteness scan; used on hot paths whose
    /// inputs are already validated.
    pub(crate) fn from_parts(grid: Grid, values: Vec<f64>, time: f64) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values, time }
    }

    pub fn zeros(grid: Grid, time: f64) -> Self {
        Self::from_parts(grid, vec![0.0; grid.len()], time)
    }

    /// Samples `f` at every grid point.
    pub fn from_fn(grid: Grid, time: f64, f: impl Fn([f64; 2]) -> f64) -> Result<Self> {
        let values = (0..grid.len()).map(|p| f(grid.point(p))).collect();
        Self::new(grid, values, time)
    }

    /// `mass (2 pi width^2)^{-d/2} e^{-|x - center|^2 / (2 width^2)}` with
    /// distances measured to the nearest periodic image of `center`.
    pub fn gaussian(grid: Grid, mass: f64, width: f64, center: [f64; 2]) -> Result<Self> {
        if !(width > 0.0 && mass.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "need width > 0 and finite mass, got ({width}, {mass})"
            )));
        }
        let side = grid.side_length();
        let wrap = |d: f64| d - side * (d / side).round();
        let norm =
            mass / (2.0 * std::f64::consts::PI * width * width).powf(grid.dim() as f64 / 2.0);
        Self::from_fn(grid, 0.0, |x| {
            let r2: f64 = (0..grid.dim())
                .map(|c| wrap(x[c] - center[c]).powi(2))
                .sum();
            norm * (-r2 / (2.0 * width * width)).exp()
        })
    }

    /// All of `mass` placed in the single cell at the origin.
    pub fn dirac_cell(grid: Grid, mass: f64) -> Self {
        let n = grid.points_per_side();
        let origin = if grid.dim() == 1 {
            n / 2
        } else {
            (n / 2) * n + n / 2
        };
        let mut values = vec![0.0; grid.len()];
        values[origin] = mass / grid.cell_volume();
        Self::from_parts(grid, values, 0.0)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn with_time(mut self, time: f64) -> Self {
        self.time = time;
        self
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self::from_parts(
            self.grid,
            self.values.iter().map(|v| a * v).collect(),
            self.time,
        )
    }

    /// `self + a * other`, keeping the time tag of `self`.
    pub fn axpy(&self, a: f64, other: &RealField) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::Mismatch("fields live on different grids".into()));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| x + a * y)
            .collect();
        Ok(Self::from_parts(self.grid, values, self.time))
    }

    pub fn write_frame<W: Write>(&self, mut w: W) -> Result<()> {
        write_header(&mut w, &self.grid, self.time)?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_frame<R: Read>(mut r: R) -> Result<Self> {
        let (grid, time) = read_header(&mut r)?;
        let values = read_f64s(&mut r, grid.len())?;
        Self::new(grid, values, time)
    }
}

pub(crate) fn write_header<W: Write>(w: &mut W, grid: &Grid, time: f64) -> Result<()> {
    w.write_all(FRAME_MAGIC)?;
    w.write_all(&(grid.dim as u32).to_le_bytes())?;
    w.write_all(&(grid.points as u32).to_le_bytes())?;
    w.write_all(&grid.side.to_le_bytes())?;
    w.write_all(&time.to_le_bytes())?;
    Ok(())
}

pub(crate) fn read_header<R: Read>(r: &mut R) -> Result<(Grid, f64)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != FRAME_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let dim = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4)?;
    let points = u32::from_le_bytes(b4) as usize;
    let side = read_f64s(r, 1)?[0];
    let time = read_f64s(r, 1)?[0];
    let grid = Grid::new(dim, side, points).map_err(|e| Error::Format(e.to_string()))?;
    Ok((grid, time))
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; 8 * n];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// Fourier coefficients of a field on the grid's mode lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    grid: Grid,
    coeffs: Vec<Complex64>,
    time: f64,
}

impl SpectralField {
    pub fn new(grid: Grid, coeffs: Vec<Complex64>, time: f64) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(Error::Mismatch(format!(
                "spectrum has {} coefficients, grid needs {}",
                coeffs.len(),
                grid.len()
            )));
        }
        if let Some(i) = coeffs
            .iter()
            .position(|c| !(c.re.is_finite() && c.im.is_finite()))
        {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { grid, coeffs, time })
    }

    pub(crate) fn from_parts(grid: Grid, coeffs: Vec<Complex64>, time: f64) -> Self {
        debug_assert_eq!(coeffs.len(), grid.len());
        Self { grid, coeffs, time }
    }

    pub fn zeros(grid: Grid, time: f64) -> Self {
        Self::from_parts(grid, vec![Complex64::new(0.0, 0.0); grid.len()], time)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub(crate) fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn with_time(mut self, time: f64) -> Self {
        self.time = time;
        self
    }

    /// Mean value of the physical field.
    pub fn mean(&self) -> Complex64 {
        self.coeffs[0]
    }

    /// `L^d c(0)`, the integral of the physical field.
    pub fn mass(&self) -> f64 {
        self.grid.volume() * self.coeffs[0].re
    }

    /// Applies a per-mode multiplier `m(flat_index)`.
    pub fn map_modes(&self, m: impl Fn(usize, Complex64) -> Complex64) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(p, &c)| m(p, c))
            .collect();
        Self::from_parts(self.grid, coeffs, self.time)
    }

    /// Flat index of the mode with signed integer wavenumbers `k`.
    pub fn index_of(&self, k: [i64; 2]) -> Option<usize> {
        let n = self.grid.points as i64;
        let pos = |k: i64| -> Option<usize> {
            if (-n / 2..n / 2).contains(&k) {
                Some(k.rem_euclid(n) as usize)
            } else {
                None
            }
        };
        match self.grid.dim {
            1 => {
                if k[1] != 0 {
                    return None;
                }
                pos(k[0])
            }
            _ => Some(pos(k[0])? * self.grid.points + pos(k[1])?),
        }
    }

    pub fn coeff(&self, k: [i64; 2]) -> Option<Complex64> {
        self.index_of(k).map(|p| self.coeffs[p])
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn transpose_square(data: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            data.swap(i * n + j, j * n + i);
        }
    }
}

fn fft_in_place(grid: &Grid, data: &mut [Complex64], direction: FftDirection) {
    let n = grid.points;
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft(n, direction));
    // process() transforms every contiguous length-n chunk
    fft.process(data);
    if grid.dim == 2 {
        transpose_square(data, n);
        fft.process(data);
        transpose_square(data, n);
    }
}

pub fn forward_transform(f: &RealField) -> SpectralField {
    let grid = f.grid;
    let mut data: Vec<Complex64> = f.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_in_place(&grid, &mut data, FftDirection::Forward);
    let scale = 1.0 / grid.len() as f64;
    for (p, c) in data.iter_mut().enumerate() {
        *c *= scale * grid.parity(p);
    }
    SpectralField::from_parts(grid, data, f.time)
}

/// Inverse transform; any imaginary residue is discarded.
pub fn inverse_transform(f: &SpectralField) -> RealField {
    let grid = f.grid;
    let mut data: Vec<Complex64> = f
        .coeffs
        .iter()
        .enumerate()
        .map(|(p, &c)| c * grid.parity(p))
        .collect();
    fft_in_place(&grid, &mut data, FftDirection::Inverse);
    RealField::from_parts(grid, data.into_iter().map(|c| c.re).collect(), f.time)
}

/// Two-thirds rule: zeroes every mode with some `|k_c| > N/3`.
pub fn dealias(f: &SpectralField) -> SpectralField {
    let mut out = f.clone();
    dealias_in_place(&mut out);
    out
}

pub(crate) fn dealias_in_place(f: &mut SpectralField) {
    let grid = f.grid;
    let cutoff = grid.points as i64;
    for (p, c) in f.coeffs.iter_mut().enumerate() {
        let [i, j] = grid.unflatten(p);
        let ki = grid.mode_index(i).abs();
        let kj = if grid.dim == 2 {
            grid.mode_index(j).abs()
        } else {
            0
        };
        // |k| > N/3  <=>  3|k| > N
        if 3 * ki > cutoff || 3 * kj > cutoff {
            *c = Complex64::new(0.0, 0.0);
        }
    }
}
