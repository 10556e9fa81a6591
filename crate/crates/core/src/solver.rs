//! Discrete mild solutions of the parabolic-elliptic and parabolic-parabolic
//! systems.
//!
//! [`picard_solve`] iterates `u <- e^{t Delta} u0 - B_tau(u, u)` over the
//! whole time horizon at once. [`march_solve`] is an independent
//! exponential time stepper for the differential form and serves as its
//! oracle.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expint::{phi1, phi2};
use crate::norms::x_norm_frames;
use crate::operators::{
    bilinear_history, flux_divergence, heat_propagate, inverse_laplacian, ModelParams,
};
use crate::spectral::{forward_transform, inverse_transform, Grid, RealField, SpectralField};
use crate::trajectory::{check_times, Trajectory, TrajectoryMeta};

/// Record of a Picard run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PicardReport {
    pub iterations: usize,
    /// X-norm of `u_{k+1} - u_k`, one entry per iteration.
    pub residuals: Vec<f64>,
    /// Successive residual quotients.
    pub ratios: Vec<f64>,
    /// X-norm of every iterate, starting with the free heat flow.
    pub iterate_norms: Vec<f64>,
    pub converged: bool,
    /// Set when the free heat flow exceeds the configured smallness gauge.
    pub warnings: Vec<String>,
}

impl PicardReport {
    pub fn max_ratio(&self) -> f64 {
        self.ratios.iter().copied().fold(0.0, f64::max)
    }
}

/// Whole-trajectory Picard iteration on the given time grid.
///
/// Fails with [`Error::NotConverged`] (carrying the report) when the
/// residual does not drop below `tol` within `max_iter` iterations, which
/// signals data outside the contraction regime.
pub fn picard_solve(
    u0: &RealField,
    params: ModelParams,
    times: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Trajectory, PicardReport)> {
    check_times(times)?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be > 0, got {tol}"
        )));
    }
    if max_iter == 0 {
        return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
    }
    let u0_hat = forward_transform(u0).with_time(0.0);
    let heat: Vec<SpectralField> = times
        .iter()
        .map(|&t| heat_propagate(&u0_hat, t))
        .collect::<Result<_>>()?;

    let mut spectra = heat.clone();
    let mut frames: Vec<RealField> = spectra.iter().map(inverse_transform).collect();
    let mut report = PicardReport::default();
    let heat_norm = x_norm_frames(times, &frames);
    report.iterate_norms.push(heat_norm);
    if heat_norm > params.epsilon_e {
        report.warnings.push(format!(
            "free heat flow has X-norm {heat_norm:.4e} above the smallness gauge {:.4e}",
            params.epsilon_e
        ));
    }

    for _ in 0..max_iter {
        let b = bilinear_history(times, &frames, &spectra, params.tau);
        let next_spectra: Vec<SpectralField> = heat
            .iter()
            .zip(&b)
            .map(|(h, b)| h.map_modes(|p, c| c - b.coeffs()[p]))
            .collect();
        let next_frames: Vec<RealField> = next_spectra.iter().map(inverse_transform).collect();
        let diff: Vec<RealField> = next_frames
            .iter()
            .zip(&frames)
            .map(|(a, b)| a.axpy(-1.0, b))
            .collect::<Result<_>>()?;
        let res = x_norm_frames(times, &diff);
        if let Some(&prev) = report.residuals.last() {
            report
                .ratios
                .push(if prev > 0.0 { res / prev } else { 0.0 });
        }
        report.residuals.push(res);
        report.iterations += 1;
        report
            .iterate_norms
            .push(x_norm_frames(times, &next_frames));
        spectra = next_spectra;
        frames = next_frames;
        if !res.is_finite() {
            break;
        }
        if res < tol {
            report.converged = true;
            break;
        }
    }
    if !report.converged {
        return Err(Error::NotConverged(Box::new(report)));
    }
    let meta = TrajectoryMeta {
        solver: "picard".into(),
        iterations: report.iterations,
        residual_history: report.residuals.clone(),
        blowup_suspected_at: None,
    };
    Ok((
        Trajectory::new(params, times.to_vec(), frames, meta)?,
        report,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MarchScheme {
    /// First-order exponential Euler.
    ExponentialEuler,
    /// Second-order exponential Runge-Kutta (Cox-Matthews).
    Etd2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarchOptions {
    /// Upper bound on the time step; the horizon is split into equal steps.
    pub step: f64,
    pub t_final: f64,
    pub scheme: MarchScheme,
    /// When false only the linear parts are integrated.
    pub nonlinear: bool,
    /// Blow-up guard: stop once `|u|_inf` exceeds this multiple of `|u0|_inf`.
    pub ceiling_factor: f64,
    /// Store every `store_every`-th step (the final state is always stored).
    pub store_every: usize,
}

impl MarchOptions {
    pub const DEFAULT_CEILING_FACTOR: f64 = 1e4;

    pub fn new(step: f64, t_final: f64) -> Self {
        Self {
            step,
            t_final,
            scheme: MarchScheme::Etd2,
            nonlinear: true,
            ceiling_factor: Self::DEFAULT_CEILING_FACTOR,
            store_every: 1,
        }
    }
}

/// Exponential integrator for `u_t = Delta u - div(u grad phi)` with either
/// `-Delta phi = u` (`tau = 0`) or `tau phi_t = Delta phi + u`, `phi(0) = 0`.
pub fn march_solve(
    u0: &RealField,
    params: ModelParams,
    step: f64,
    t_final: f64,
) -> Result<Trajectory> {
    march_solve_with(u0, params, &MarchOptions::new(step, t_final))
}

struct LinearFactors {
    decay: Vec<f64>,
    phi1: Vec<f64>,
    phi2: Vec<f64>,
}

impl LinearFactors {
    fn new(mode_sq: &[f64], h: f64, rate_scale: f64) -> Self {
        let z: Vec<f64> = mode_sq.iter().map(|k2| h * k2 * rate_scale).collect();
        Self {
            decay: z.iter().map(|z| (-z).exp()).collect(),
            phi1: z.iter().map(|&z| phi1(z)).collect(),
            phi2: z.iter().map(|&z| phi2(z)).collect(),
        }
    }
}

struct MarchState {
    u_hat: SpectralField,
    u: RealField,
    phi_hat: Option<SpectralField>,
}

pub fn march_solve_with(
    u0: &RealField,
    params: ModelParams,
    opts: &MarchOptions,
) -> Result<Trajectory> {
    if !(opts.step > 0.0 && opts.step.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "step must be > 0, got {}",
            opts.step
        )));
    }
    if !(opts.t_final >= opts.step) {
        return Err(Error::InvalidArgument(format!(
            "horizon {} shorter than the step {}",
            opts.t_final, opts.step
        )));
    }
    if opts.store_every == 0 {
        return Err(Error::InvalidArgument("store_every must be >= 1".into()));
    }
    let grid = *u0.grid();
    let steps = (opts.t_final / opts.step - 1e-9).ceil() as usize;
    let h = opts.t_final / steps as f64;
    let mode_sq = grid.mode_sq_table();
    let lin_u = LinearFactors::new(&mode_sq, h, 1.0);
    let tau = params.tau;
    let lin_phi = (tau > 0.0).then(|| LinearFactors::new(&mode_sq, h, 1.0 / tau));

    let u0 = u0.clone().with_time(0.0);
    let ceiling = opts.ceiling_factor * u0.max_abs();
    let mut state = MarchState {
        u_hat: forward_transform(&u0),
        u: u0.clone(),
        phi_hat: (tau > 0.0).then(|| SpectralField::zeros(grid, 0.0)),
    };

    let mut times = vec![0.0];
    let mut frames = vec![u0];
    let mut chemical = state.phi_hat.as_ref().map(|p| vec![inverse_transform(p)]);
    let mut blowup = None;

    let nonlinear =
        |u: &RealField, u_hat: &SpectralField, phi_hat: Option<&SpectralField>| -> Vec<Complex64> {
            if !opts.nonlinear {
                return vec![Complex64::new(0.0, 0.0); grid.len()];
            }
            let div = match phi_hat {
                Some(phi) => flux_divergence(u, phi),
                None => flux_divergence(u, &inverse_laplacian(u_hat)),
            };
            div.coeffs().iter().map(|c| -c).collect()
        };

    for n in 1..=steps {
        let t = n as f64 * h;
        let n_old = nonlinear(&state.u, &state.u_hat, state.phi_hat.as_ref());
        let stage_u: Vec<Complex64> = (0..grid.len())
            .map(|p| lin_u.decay[p] * state.u_hat.coeffs()[p] + h * lin_u.phi1[p] * n_old[p])
            .collect();
        let stage_phi = lin_phi.as_ref().map(|lp| {
            let phi = state.phi_hat.as_ref().expect("relaxed chemical");
            relax_coeffs(grid, |p| {
                lp.decay[p] * phi.coeffs()[p] + (h / tau) * lp.phi1[p] * state.u_hat.coeffs()[p]
            })
        });
        let (u_hat, phi_hat) = match opts.scheme {
            MarchScheme::ExponentialEuler => (stage_u, stage_phi),
            MarchScheme::Etd2 => {
                let a_hat = SpectralField::from_parts(grid, stage_u.clone(), t);
                let a = inverse_transform(&a_hat);
                let a_phi = stage_phi
                    .as_ref()
                    .map(|c| SpectralField::from_parts(grid, c.clone(), t));
                let n_stage = nonlinear(&a, &a_hat, a_phi.as_ref());
                let u_new: Vec<Complex64> = (0..grid.len())
                    .map(|p| stage_u[p] + h * lin_u.phi2[p] * (n_stage[p] - n_old[p]))
                    .collect();
                let phi_new = lin_phi.as_ref().map(|lp| {
                    let sp = stage_phi.as_ref().expect("relaxed chemical");
                    relax_coeffs(grid, |p| {
                        sp[p] + (h / tau) * lp.phi2[p] * (stage_u[p] - state.u_hat.coeffs()[p])
                    })
                });
                (u_new, phi_new)
            }
        };
        let u_hat = SpectralField::from_parts(grid, u_hat, t);
        let u = inverse_transform(&u_hat);
        let peak = u.values().iter().fold(0.0_f64, |m, v| {
            if v.is_finite() {
                m.max(v.abs())
            } else {
                f64::INFINITY
            }
        });
        let phi_hat = phi_hat.map(|c| SpectralField::from_parts(grid, c, t));
        let tripped = !(peak <= ceiling);
        if tripped {
            // the offending state is not stored
            blowup = Some(t);
            break;
        }
        state = MarchState { u_hat, u, phi_hat };
        if n % opts.store_every == 0 || n == steps {
            times.push(t);
            frames.push(state.u.clone());
            if let (Some(ch), Some(phi)) = (chemical.as_mut(), state.phi_hat.as_ref()) {
                ch.push(inverse_transform(phi));
            }
        }
    }

    let meta = TrajectoryMeta {
        solver: match opts.scheme {
            MarchScheme::ExponentialEuler => "march-etd1".into(),
            MarchScheme::Etd2 => "march-etd2".into(),
        },
        iterations: steps,
        residual_history: Vec::new(),
        blowup_suspected_at: blowup,
    };
    let traj = Trajectory::new(params, times, frames, meta)?;
    match chemical {
        Some(ch) => traj.with_chemical(ch),
        None => Ok(traj),
    }
}

/// Relaxed-chemical update with the mean entry pinned to zero.
fn relax_coeffs(grid: Grid, f: impl Fn(usize) -> Complex64) -> Vec<Complex64> {
    (0..grid.len())
        .map(|p| {
            if p == 0 {
                Complex64::new(0.0, 0.0)
            } else {
                f(p)
            }
        })
        .collect()
}

/// X-norm of `traj - (e^{t Delta} u(0) - B_tau(traj, traj))`.
pub fn residual(traj: &Trajectory) -> Result<f64> {
    if traj.len() < 2 {
        return Err(Error::InvalidArgument(
            "residual needs at least two stored times".into(),
        ));
    }
    let times = traj.times();
    let spectra = traj.spectra();
    let b = bilinear_history(times, traj.frames(), &spectra, traj.params().tau);
    let u0_hat = spectra[0].clone();
    let diff: Vec<RealField> = times
        .iter()
        .zip(&b)
        .zip(traj.frames())
        .map(|((&t, b), u)| {
            let heat = heat_propagate(&u0_hat, t)?;
            let mild = inverse_transform(&heat.map_modes(|p, c| c - b.coeffs()[p]));
            u.axpy(-1.0, &mild)
        })
        .collect::<Result<_>>()?;
    Ok(x_norm_frames(times, &diff))
}
