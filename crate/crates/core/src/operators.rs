//! Linear and bilinear building blocks of the mild formulations.
//!
//! Everything acts mode by mode on [`SpectralField`]s:
//!
//! * heat semigroup `e^{t Delta}`: multiplier `e^{-t |xi|^2}`;
//! * gradient heat kernel `G(., t)`: multiplier `i xi e^{-t |xi|^2}`;
//! * `W_0 = grad (-Delta)^{-1}`: multiplier `i xi / |xi|^2`, mean removed;
//! * `W_tau`: gradient of the relaxed chemical
//!   `phi(t) = (1/tau) int_0^t e^{(t - s) Delta / tau} v(s) ds`;
//! * `B_tau(u, v)(t) = int_0^t e^{(t - s) Delta} div(u W_tau(v))(s) ds`.
//!
//! Time integrals use exact exponential weights against data interpolated
//! linearly between stored times, see [`crate::expint`].

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expint::linear_weights;
use crate::spectral::{
    dealias_in_place, forward_transform, inverse_transform, Grid, RealField, SpectralField,
};
use crate::trajectory::{Trajectory, TrajectoryMeta};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Model parameters shared by both systems.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Relaxation time of the chemical; 0 selects the parabolic-elliptic model.
    pub tau: f64,
    /// Soft bound on the E-norm of admissible data; only used for warnings.
    pub epsilon_e: f64,
}

impl ModelParams {
    pub const DEFAULT_EPSILON_E: f64 = 0.1;

    pub fn new(tau: f64, epsilon_e: f64) -> Result<Self> {
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "tau must be >= 0, got {tau}"
            )));
        }
        if !(epsilon_e > 0.0 && epsilon_e.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "epsilon_E must be > 0, got {epsilon_e}"
            )));
        }
        Ok(Self { tau, epsilon_e })
    }

    pub fn parabolic_elliptic() -> Self {
        Self {
            tau: 0.0,
            epsilon_e: Self::DEFAULT_EPSILON_E,
        }
    }

    pub fn parabolic_parabolic(tau: f64) -> Result<Self> {
        Self::new(tau, Self::DEFAULT_EPSILON_E)
    }

    pub fn is_elliptic(&self) -> bool {
        self.tau == 0.0
    }
}

/// A `d`-component vector field in physical space.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    components: Vec<RealField>,
}

impl VectorField {
    pub fn new(components: Vec<RealField>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidArgument("vector field needs components".into()))?;
        if components.len() != first.grid().dim() {
            return Err(Error::Mismatch(format!(
                "{} components on a {}-d grid",
                components.len(),
                first.grid().dim()
            )));
        }
        if components.iter().any(|c| c.grid() != first.grid()) {
            return Err(Error::Mismatch("components on different grids".into()));
        }
        Ok(Self { components })
    }

    pub fn from_spectral(parts: &[SpectralField]) -> Self {
        Self {
            components: parts.iter().map(inverse_transform).collect(),
        }
    }

    pub fn grid(&self) -> &Grid {
        self.components[0].grid()
    }

    pub fn time(&self) -> f64 {
        self.components[0].time()
    }

    pub fn components(&self) -> &[RealField] {
        &self.components
    }

    pub fn component(&self, c: usize) -> &RealField {
        &self.components[c]
    }

    /// Euclidean length at each grid point.
    pub fn magnitude(&self) -> Vec<f64> {
        let n = self.grid().len();
        (0..n)
            .map(|p| {
                self.components
                    .iter()
                    .map(|c| c.values()[p].powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }

    /// Sup norm of the pointwise Euclidean length.
    pub fn max_norm(&self) -> f64 {
        self.magnitude().into_iter().fold(0.0, f64::max)
    }

    /// `L^1` norm of the pointwise Euclidean length.
    pub fn l1_norm(&self) -> f64 {
        self.grid().cell_volume() * self.magnitude().into_iter().sum::<f64>()
    }

    pub fn sub(&self, other: &VectorField) -> Result<VectorField> {
        let components = self
            .components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a.axpy(-1.0, b))
            .collect::<Result<Vec<_>>>()?;
        VectorField::new(components)
    }
}

fn check_nonneg_time(t: f64) -> Result<()> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "time increment must be >= 0, got {t}"
        )))
    }
}

/// `e^{t Delta} f`; advances the time tag by `t`.
pub fn heat_propagate(f: &SpectralField, t: f64) -> Result<SpectralField> {
    check_nonneg_time(t)?;
    let grid = *f.grid();
    Ok(f.map_modes(|p, c| c * (-t * grid.mode_sq(p)).exp())
        .with_time(f.time() + t))
}

/// Spectral components of `G(., t) * f`.
pub fn grad_heat_spectral(f: &SpectralField, t: f64) -> Result<Vec<SpectralField>> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "kernel time must be > 0, got {t}"
        )));
    }
    let grid = *f.grid();
    Ok((0..grid.dim())
        .map(|c| {
            f.map_modes(|p, v| I * grid.derivative_mode(p)[c] * (-t * grid.mode_sq(p)).exp() * v)
        })
        .collect())
}

/// Convolution with the gradient heat kernel `G(., t)`.
pub fn grad_heat_apply(f: &SpectralField, t: f64) -> Result<VectorField> {
    Ok(VectorField::from_spectral(&grad_heat_spectral(f, t)?))
}

/// Spectral gradient `i xi f`.
pub fn gradient_spectral(f: &SpectralField) -> Vec<SpectralField> {
    let grid = *f.grid();
    (0..grid.dim())
        .map(|c| f.map_modes(|p, v| I * grid.derivative_mode(p)[c] * v))
        .collect()
}

/// `(-Delta)^{-1} u` on the torus with the mean removed.
pub fn inverse_laplacian(u: &SpectralField) -> SpectralField {
    let grid = *u.grid();
    u.map_modes(|p, v| if p == 0 { ZERO } else { v / grid.mode_sq(p) })
}

/// `W_0(u) = grad (-Delta)^{-1} u`, the chemical gradient of the elliptic model.
pub fn grad_inv_laplacian(u: &SpectralField) -> VectorField {
    VectorField::from_spectral(&gradient_spectral(&inverse_laplacian(u)))
}

/// Chemical potential at every stored time: the elliptic solve for `tau = 0`,
/// otherwise the relaxed integral started from `phi(0) = 0`.
///
/// The mean of the relaxed chemical is not tracked (the `xi = 0` entry is
/// kept at zero); only its gradient enters the dynamics.
pub fn chemical_history(spectra: &[SpectralField], times: &[f64], tau: f64) -> Vec<SpectralField> {
    if tau == 0.0 {
        return spectra.par_iter().map(inverse_laplacian).collect();
    }
    let grid = *spectra[0].grid();
    let mut out = Vec::with_capacity(spectra.len());
    out.push(SpectralField::zeros(grid, times[0]));
    for n in 0..spectra.len() - 1 {
        let next = relax_step(
            &out[n],
            &spectra[n],
            &spectra[n + 1],
            times[n + 1] - times[n],
            tau,
        );
        out.push(next.with_time(times[n + 1]));
    }
    out
}

/// One exact step of `tau phi_t = Delta phi + v` for `v` linear on the interval.
fn relax_step(
    phi: &SpectralField,
    v_left: &SpectralField,
    v_right: &SpectralField,
    h: f64,
    tau: f64,
) -> SpectralField {
    let grid = *phi.grid();
    let coeffs = (0..grid.len())
        .map(|p| {
            if p == 0 {
                return ZERO;
            }
            let z = h * grid.mode_sq(p) / tau;
            let (wl, wr) = linear_weights(z);
            phi.coeffs()[p] * (-z).exp()
                + (h / tau) * (wl * v_left.coeffs()[p] + wr * v_right.coeffs()[p])
        })
        .collect();
    SpectralField::from_parts(grid, coeffs, phi.time() + h)
}

fn check_tau_positive(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "tau must be > 0, got {tau}"
        )))
    }
}

/// `W_tau(v)(t)` for any `t` inside the stored range of `v`.
pub fn w_tau_apply(v: &Trajectory, tau: f64, t: f64) -> Result<VectorField> {
    check_tau_positive(tau)?;
    let times = v.times();
    let end = *times.last().expect("nonempty");
    if !(t >= 0.0 && t <= end) {
        return Err(Error::OutOfRange { t, start: 0.0, end });
    }
    // last stored node not after t
    let m = times.partition_point(|&s| s <= t) - 1;
    let spectra: Vec<SpectralField> = v.frames()[..(m + 2).min(v.len())]
        .iter()
        .map(forward_transform)
        .collect();
    let history = chemical_history(&spectra[..=m], &times[..=m], tau);
    let mut phi = history[m].clone();
    let rest = t - times[m];
    if rest > 0.0 {
        let h = times[m + 1] - times[m];
        let theta = rest / h;
        let v_t = spectra[m].map_modes(|p, c| c + theta * (spectra[m + 1].coeffs()[p] - c));
        phi = relax_step(&phi, &spectra[m], &v_t, rest, tau);
    }
    Ok(VectorField::from_spectral(&gradient_spectral(
        &phi.with_time(t),
    )))
}

/// Spectrum of `div(u grad phi)`, the product formed in physical space and
/// dealiased.
pub fn flux_divergence(u: &RealField, phi: &SpectralField) -> SpectralField {
    let grid = *u.grid();
    let mut div = SpectralField::zeros(grid, u.time());
    for (c, g) in gradient_spectral(phi).iter().enumerate() {
        let g = inverse_transform(g);
        let prod: Vec<f64> = u
            .values()
            .iter()
            .zip(g.values())
            .map(|(a, b)| a * b)
            .collect();
        let mut flux = forward_transform(&RealField::from_parts(grid, prod, u.time()));
        dealias_in_place(&mut flux);
        for (p, d) in div.coeffs_mut().iter_mut().enumerate() {
            *d += I * grid.derivative_mode(p)[c] * flux.coeffs()[p];
        }
    }
    div
}

/// Spectra of `B_tau(u, v)` at every stored time.
pub(crate) fn bilinear_history(
    times: &[f64],
    u_frames: &[RealField],
    v_spectra: &[SpectralField],
    tau: f64,
) -> Vec<SpectralField> {
    let grid = *u_frames[0].grid();
    let chem = chemical_history(v_spectra, times, tau);
    let divs: Vec<SpectralField> = u_frames
        .par_iter()
        .zip(chem.par_iter())
        .map(|(u, phi)| flux_divergence(u, phi))
        .collect();
    let mode_sq = grid.mode_sq_table();
    let mut out = Vec::with_capacity(times.len());
    out.push(SpectralField::zeros(grid, times[0]));
    for n in 0..times.len() - 1 {
        let h = times[n + 1] - times[n];
        let coeffs = (0..grid.len())
            .map(|p| {
                let z = h * mode_sq[p];
                let (wl, wr) = linear_weights(z);
                out[n].coeffs()[p] * (-z).exp()
                    + h * (wl * divs[n].coeffs()[p] + wr * divs[n + 1].coeffs()[p])
            })
            .collect();
        out.push(SpectralField::from_parts(grid, coeffs, times[n + 1]));
    }
    out
}

/// `B_tau(u, v)` on the common time grid of `u` and `v`; `B_tau(u, v)(0) = 0`.
pub fn duhamel_bilinear(u: &Trajectory, v: &Trajectory, tau: f64) -> Result<Trajectory> {
    u.check_compatible(v)?;
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "tau must be >= 0, got {tau}"
        )));
    }
    let history = bilinear_history(u.times(), u.frames(), &v.spectra(), tau);
    let frames = history.iter().map(inverse_transform).collect();
    let meta = TrajectoryMeta {
        solver: "duhamel-bilinear".into(),
        ..Default::default()
    };
    Trajectory::new(*u.params(), u.times().to_vec(), frames, meta)
}
