//! Fourier-side blow-up certificates for the parabolic-parabolic system.
//!
//! For data `u_hat(0) = A w_hat_0` with `w_hat_0 >= 0` supported in
//! `{1/2 <= xi_1 <= |xi| <= 1}`, the Fourier transform of the solution of
//!
//! ```text
//! u_hat(xi, t) = e^{-t|xi|^2} u_hat_0(xi)
//!   + int_0^t int_0^s int (xi . eta / tau) e^{-(t-s)|xi|^2} e^{-(s-sigma)|eta|^2 / tau}
//!                         u_hat(xi - eta, s) u_hat(eta, sigma) d eta d sigma d s / (2 pi)^d
//! ```
//!
//! stays nonnegative and dominates `beta_k e^{-2^k t} w_hat_k` on
//! `[t_k, t*)`, with `w_hat_k` the normalized self-convolutions of `w_hat_0`.
//! Once `A >= 2^{4 - M}` the amplitudes `beta_k` diverge.
//!
//! Here `u_hat` is the continuous Fourier transform sampled on the grid's
//! mode lattice and `d eta` becomes a lattice sum weighted by the cell
//! volume `(2 pi / L)^d`. Convolutions are direct (no wrap-around): every
//! spectrum involved is supported in `xi_1 >= 1/2`, so truncating the
//! lattice at the top does not feed back into the retained modes.

use std::f64::consts::{LN_2, PI};
use std::fmt::Write as _;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expint::linear_weights;
use crate::spectral::Grid;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// `M_{delta,tau} = log2((3 delta tau - 1 + e^{-4 delta tau}) e^{-delta} / (8 tau))`.
pub fn m_delta_tau(delta: f64, tau: f64) -> Result<f64> {
    if !(delta > 0.0 && tau > 0.0) {
        return Err(Error::Certificate(format!(
            "delta and tau must be > 0, got ({delta}, {tau})"
        )));
    }
    let dt = delta * tau;
    let base = (3.0 * dt - 1.0 + (-4.0 * dt).exp()) * (-delta).exp() / (8.0 * tau);
    if !(base > 0.0 && base.is_finite()) {
        return Err(Error::Certificate(format!(
            "nonpositive base {base:e} for (delta, tau) = ({delta}, {tau})"
        )));
    }
    Ok(base.log2())
}

/// Critical amplitude `2^{4 - M}`.
pub fn threshold_amplitude(delta: f64, tau: f64) -> Result<f64> {
    Ok((4.0 - m_delta_tau(delta, tau)?).exp2())
}

/// The threshold written without `M`: `(3 delta tau - 1 + e^{-4 delta tau}) A >= 2^7 e^delta tau`.
pub fn threshold_met_direct(delta: f64, tau: f64, amplitude: f64) -> bool {
    let dt = delta * tau;
    (3.0 * dt - 1.0 + (-4.0 * dt).exp()) * amplitude >= 128.0 * delta.exp() * tau
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateSequences {
    pub delta: f64,
    pub tau: f64,
    pub amplitude: f64,
    pub k_max: usize,
    pub m: f64,
    pub t_star: f64,
    /// `t_k = delta tau (1 - 2^{-2k})`, `k = 0..=K`.
    pub t_k: Vec<f64>,
    /// Closed form `(A 2^{M-4})^{2^k} 2^{4 - M + 2k}`; may overflow to infinity.
    pub beta_k: Vec<f64>,
    /// `log2 beta_k` from the closed form.
    pub log2_beta_k: Vec<f64>,
    /// `log2 beta_k` from `beta_k = 2^{M - 2k} beta_{k-1}^2`, `beta_0 = A`.
    pub log2_beta_recursion: Vec<f64>,
    /// `max_k |beta_k(recursion) / beta_k(closed) - 1|`.
    pub recursion_discrepancy: f64,
    pub threshold_met: bool,
}

pub fn certificate_sequences(
    delta: f64,
    tau: f64,
    amplitude: f64,
    k_max: usize,
) -> Result<CertificateSequences> {
    if 3.0 * delta * tau < 1.0 {
        return Err(Error::Certificate(format!(
            "requires 3 delta tau >= 1, got {}",
            3.0 * delta * tau
        )));
    }
    if !(amplitude > 0.0 && amplitude.is_finite()) {
        return Err(Error::Certificate(format!(
            "amplitude must be > 0, got {amplitude}"
        )));
    }
    if k_max < 1 {
        return Err(Error::Certificate("K must be at least 1".into()));
    }
    let m = m_delta_tau(delta, tau)?;
    let t_star = delta * tau;
    let t_k: Vec<f64> = (0..=k_max)
        .map(|k| t_star * (1.0 - (-2.0 * k as f64).exp2()))
        .collect();
    let log_base = amplitude.log2() + m - 4.0;
    let log2_beta_k: Vec<f64> = (0..=k_max)
        .map(|k| (k as f64).exp2() * log_base + 4.0 - m + 2.0 * k as f64)
        .collect();
    let mut log2_beta_recursion = vec![amplitude.log2()];
    for k in 1..=k_max {
        let prev = log2_beta_recursion[k - 1];
        log2_beta_recursion.push(m - 2.0 * k as f64 + 2.0 * prev);
    }
    let recursion_discrepancy = log2_beta_k
        .iter()
        .zip(&log2_beta_recursion)
        .map(|(a, b)| ((b - a) * LN_2).exp_m1().abs())
        .fold(0.0, f64::max);
    Ok(CertificateSequences {
        delta,
        tau,
        amplitude,
        k_max,
        m,
        t_star,
        t_k,
        beta_k: log2_beta_k.iter().map(|l| l.exp2()).collect(),
        log2_beta_k,
        log2_beta_recursion,
        recursion_discrepancy,
        threshold_met: amplitude >= (4.0 - m).exp2(),
    })
}

/// Nonnegative annulus-supported profile `w_hat_0` on a mode lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnulusData {
    grid: Grid,
    profile: Vec<f64>,
}

fn raised_cosine(x: f64, lo: f64, hi: f64) -> f64 {
    if x < lo || x > hi {
        return 0.0;
    }
    let s = (2.0 * x - lo - hi) / (hi - lo);
    (0.5 * (1.0 + (PI * s).cos())).max(0.0)
}

/// Lattice integral `sum f (2 pi / L)^d`.
fn lattice_integral(grid: &Grid, f: &[f64]) -> f64 {
    grid.mode_spacing().powi(grid.dim() as i32) * f.iter().sum::<f64>()
}

/// Smooth bump supported in `{1/2 <= xi_1 <= |xi| <= 1}` with unit lattice
/// integral: a raised cosine in `xi_1` over `[1/2, 1]`, multiplied in
/// `d = 2` by a raised cosine in `|xi|` over the same band.
pub fn annulus_data(grid: &Grid) -> Result<AnnulusData> {
    if grid.mode_spacing() > 0.125 {
        return Err(Error::Coverage(format!(
            "mode spacing {} too coarse for the annulus (needs <= 1/8)",
            grid.mode_spacing()
        )));
    }
    if grid.max_wavenumber() < 1.0 {
        return Err(Error::Coverage("lattice does not reach |xi| = 1".into()));
    }
    let mut profile: Vec<f64> = (0..grid.len())
        .map(|p| {
            let xi = grid.mode(p);
            let radial = if grid.dim() == 2 {
                raised_cosine((xi[0] * xi[0] + xi[1] * xi[1]).sqrt(), 0.5, 1.0)
            } else {
                1.0
            };
            raised_cosine(xi[0], 0.5, 1.0) * radial
        })
        .collect();
    let total = lattice_integral(grid, &profile);
    for v in &mut profile {
        *v /= total;
    }
    Ok(AnnulusData {
        grid: *grid,
        profile,
    })
}

impl AnnulusData {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn profile(&self) -> &[f64] {
        &self.profile
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }
}

/// Whether every positive entry lies in `E_k = {2^{k-1} <= xi_1 <= |xi| <= 2^k}`.
pub fn supported_in_e_k(grid: &Grid, profile: &[f64], k: usize) -> bool {
    let (lo, hi) = ((k as f64 - 1.0).exp2(), (k as f64).exp2());
    let eps = 1e-12 * hi;
    profile.iter().enumerate().all(|(p, &v)| {
        if v == 0.0 {
            return true;
        }
        let xi = grid.mode(p);
        let r = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
        v > 0.0 && xi[0] >= lo - eps && r <= hi + eps
    })
}

/// Signed integer wavenumbers of a storage index.
fn lattice_index(grid: &Grid, p: usize) -> [i64; 2] {
    let [i, j] = grid.unflatten(p);
    if grid.dim() == 1 {
        [grid.mode_index(i), 0]
    } else {
        [grid.mode_index(i), grid.mode_index(j)]
    }
}

/// Storage index of integer wavenumbers, `None` outside the lattice.
fn storage_index(grid: &Grid, k: [i64; 2]) -> Option<usize> {
    let n = grid.points_per_side() as i64;
    let pos = |k: i64| {
        (-n / 2..n / 2)
            .contains(&k)
            .then(|| k.rem_euclid(n) as usize)
    };
    if grid.dim() == 1 {
        pos(k[0])
    } else {
        Some(pos(k[0])? * n as usize + pos(k[1])?)
    }
}

/// Nonzero entries with their integer wavenumbers.
fn support<T: Copy>(
    grid: &Grid,
    values: &[T],
    nonzero: impl Fn(T) -> bool,
) -> Vec<(usize, [i64; 2])> {
    values
        .iter()
        .enumerate()
        .filter(|(_, &v)| nonzero(v))
        .map(|(p, _)| (p, lattice_index(grid, p)))
        .collect()
}

/// Componentwise bounds of `{a + b}` over two supports.
fn sum_box(a: &[(usize, [i64; 2])], b: &[(usize, [i64; 2])]) -> [[i64; 2]; 2] {
    let bounds = |s: &[(usize, [i64; 2])]| {
        s.iter()
            .fold([[i64::MAX; 2], [i64::MIN; 2]], |[lo, hi], &(_, k)| {
                [
                    [lo[0].min(k[0]), lo[1].min(k[1])],
                    [hi[0].max(k[0]), hi[1].max(k[1])],
                ]
            })
    };
    let ([la, ha], [lb, hb]) = (bounds(a), bounds(b));
    [
        [la[0].saturating_add(lb[0]), la[1].saturating_add(lb[1])],
        [ha[0].saturating_add(hb[0]), ha[1].saturating_add(hb[1])],
    ]
}

fn in_box(k: [i64; 2], b: &[[i64; 2]; 2]) -> bool {
    (b[0][0]..=b[1][0]).contains(&k[0]) && (b[0][1]..=b[1][1]).contains(&k[1])
}

/// `(2 pi)^{-d} w * w` as a lattice sum, without wrap-around.
fn self_convolution(grid: &Grid, w: &[f64]) -> Vec<f64> {
    let cell = grid.mode_spacing().powi(grid.dim() as i32) / (2.0 * PI).powi(grid.dim() as i32);
    let supp = support(grid, w, |v| v != 0.0);
    let bbox = sum_box(&supp, &supp);
    (0..w.len())
        .into_par_iter()
        .with_min_len(256)
        .map(|q| {
            let kq = lattice_index(grid, q);
            if !in_box(kq, &bbox) {
                return 0.0;
            }
            supp.iter()
                .filter_map(|&(pb, kb)| {
                    let pa = storage_index(grid, [kq[0] - kb[0], kq[1] - kb[1]])?;
                    Some(cell * w[pa] * w[pb])
                })
                .sum()
        })
        .collect()
}

/// `w_hat_0, .., w_hat_K` with `w_hat_k = (2 pi)^{-d} w_hat_{k-1} * w_hat_{k-1}`.
pub fn w_k_family(w0: &AnnulusData, k_max: usize) -> Result<Vec<Vec<f64>>> {
    let grid = w0.grid;
    let top = grid.wavenumber(grid.points_per_side() / 2 - 1);
    let need = (k_max as f64).exp2();
    if top < need {
        return Err(Error::Coverage(format!(
            "lattice reaches xi_1 = {top}, family up to K = {k_max} needs {need}"
        )));
    }
    let mut family = vec![w0.profile.clone()];
    for k in 1..=k_max {
        let next = self_convolution(&grid, &family[k - 1]);
        family.push(next);
    }
    Ok(family)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositivitySample {
    pub time: f64,
    /// Smallest real part over the nonzero modes.
    pub min_re: f64,
    pub max_abs_im: f64,
    pub sup_abs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierSimOptions {
    pub step: f64,
    pub t_final: f64,
    pub nonlinear: bool,
    pub store_every: usize,
}

impl FourierSimOptions {
    pub fn new(step: f64, t_final: f64) -> Self {
        Self {
            step,
            t_final,
            nonlinear: true,
            store_every: 1,
        }
    }
}

/// Time history of the coupled spectral system.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralTrajectory {
    pub grid: Grid,
    pub tau: f64,
    pub amplitude: f64,
    pub times: Vec<f64>,
    pub u_hat: Vec<Vec<Complex64>>,
    /// The relaxed chemical `phi_hat`, started from zero.
    pub phi_hat: Vec<Vec<Complex64>>,
    pub monitor: Vec<PositivitySample>,
}

impl SpectralTrajectory {
    /// Index of the stored time closest to `t`.
    pub fn nearest(&self, t: f64) -> usize {
        let mut best = 0;
        for (i, s) in self.times.iter().enumerate() {
            if (s - t).abs() < (self.times[best] - t).abs() {
                best = i;
            }
        }
        best
    }

    pub fn sup_abs_at(&self, t: f64) -> f64 {
        self.monitor[self.nearest(t)].sup_abs
    }

    /// `time,name,value` rows of the positivity monitor.
    pub fn monitor_csv(&self) -> String {
        let mut out = String::from("time,name,value\n");
        for m in &self.monitor {
            let _ = writeln!(out, "{},sup_abs,{}", m.time, m.sup_abs);
            let _ = writeln!(out, "{},min_re,{}", m.time, m.min_re);
            let _ = writeln!(out, "{},max_abs_im,{}", m.time, m.max_abs_im);
        }
        out
    }

    /// Worst violation of `Re u_hat >= -tol |u_hat|_inf` and `|Im u_hat| <= tol |u_hat|_inf`
    /// expressed in units of `|u_hat|_inf`.
    pub fn positivity_defect(&self) -> f64 {
        self.monitor
            .iter()
            .map(|m| {
                let scale = m.sup_abs.max(f64::MIN_POSITIVE);
                ((-m.min_re).max(0.0) / scale).max(m.max_abs_im / scale)
            })
            .fold(0.0, f64::max)
    }
}

fn monitor(time: f64, u: &[Complex64]) -> PositivitySample {
    let mut s = PositivitySample {
        time,
        min_re: 0.0,
        max_abs_im: 0.0,
        sup_abs: 0.0,
    };
    let mut first = true;
    for c in u.iter().filter(|c| **c != ZERO) {
        s.min_re = if first { c.re } else { s.min_re.min(c.re) };
        first = false;
        s.max_abs_im = s.max_abs_im.max(c.im.abs());
        s.sup_abs = s.sup_abs.max(c.norm());
    }
    s
}

/// Quadratic term `(2 pi)^{-d} sum_eta (xi . eta) u(xi - eta) phi(eta) |d eta|`.
fn interaction(grid: &Grid, u: &[Complex64], phi: &[Complex64]) -> Vec<Complex64> {
    let dxi = grid.mode_spacing();
    let d = grid.dim() as i32;
    let cell = dxi.powi(d) / (2.0 * PI).powi(d) * dxi * dxi;
    let sp = support(grid, phi, |c| c != ZERO);
    let bbox = sum_box(&support(grid, u, |c| c != ZERO), &sp);
    (0..u.len())
        .into_par_iter()
        .with_min_len(256)
        .map(|q| {
            let kq = lattice_index(grid, q);
            let mut acc = ZERO;
            if !in_box(kq, &bbox) {
                return acc;
            }
            for &(pb, kb) in &sp {
                let Some(pa) = storage_index(grid, [kq[0] - kb[0], kq[1] - kb[1]]) else {
                    continue;
                };
                if u[pa] != ZERO {
                    let dot = (kq[0] * kb[0] + kq[1] * kb[1]) as f64;
                    acc += cell * dot * u[pa] * phi[pb];
                }
            }
            acc
        })
        .collect()
}

/// Marches `u_t = -|xi|^2 u + Q(u, phi)`, `tau phi_t = -|xi|^2 phi + u`,
/// `phi(0) = 0`, `u(0) = A w_hat_0`, with an integrating-factor RK4 step.
pub fn fourier_simulate(
    w0: &AnnulusData,
    amplitude: f64,
    tau: f64,
    opts: &FourierSimOptions,
) -> Result<SpectralTrajectory> {
    let grid = w0.grid;
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tau must be > 0, got {tau}"
        )));
    }
    if !(amplitude >= 0.0 && amplitude.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "amplitude must be >= 0, got {amplitude}"
        )));
    }
    if !(opts.step > 0.0 && opts.t_final >= opts.step) || opts.store_every == 0 {
        return Err(Error::InvalidArgument(
            "need 0 < step <= t_final and store_every >= 1".into(),
        ));
    }
    let mode_sq = grid.mode_sq_table();
    let k2_max = mode_sq.iter().copied().fold(0.0, f64::max);
    if opts.step * k2_max > 1.0 {
        return Err(Error::InvalidArgument(format!(
            "step {} does not resolve |xi|^2_max = {k2_max} (needs step |xi|^2_max <= 1)",
            opts.step
        )));
    }
    let steps = (opts.t_final / opts.step - 1e-9).ceil() as usize;
    let h = opts.t_final / steps as f64;
    let n = grid.len();
    let half_u: Vec<f64> = mode_sq.iter().map(|k2| (-0.5 * h * k2).exp()).collect();
    let half_phi: Vec<f64> = mode_sq
        .iter()
        .map(|k2| (-0.5 * h * k2 / tau).exp())
        .collect();

    let rhs = |u: &[Complex64], phi: &[Complex64]| -> (Vec<Complex64>, Vec<Complex64>) {
        let nu = if opts.nonlinear {
            interaction(&grid, u, phi)
        } else {
            vec![ZERO; n]
        };
        let nphi = u.iter().map(|c| c / tau).collect();
        (nu, nphi)
    };
    let combine = |y: &[Complex64],
                   e: &[f64],
                   e_pow: i32,
                   k: &[Complex64],
                   e_k: i32,
                   a: f64|
     -> Vec<Complex64> {
        (0..n)
            .map(|p| y[p] * e[p].powi(e_pow) + a * k[p] * e[p].powi(e_k))
            .collect()
    };

    let mut u: Vec<Complex64> = w0
        .profile
        .iter()
        .map(|&w| Complex64::new(amplitude * w, 0.0))
        .collect();
    let mut phi = vec![ZERO; n];
    let mut out = SpectralTrajectory {
        grid,
        tau,
        amplitude,
        times: vec![0.0],
        u_hat: vec![u.clone()],
        phi_hat: vec![phi.clone()],
        monitor: vec![monitor(0.0, &u)],
    };
    for step in 1..=steps {
        let (k1u, k1p) = rhs(&u, &phi);
        let (u2, p2) = (
            combine(&u, &half_u, 1, &k1u, 1, 0.5 * h),
            combine(&phi, &half_phi, 1, &k1p, 1, 0.5 * h),
        );
        let (k2u, k2p) = rhs(&u2, &p2);
        let (u3, p3) = (
            combine(&u, &half_u, 1, &k2u, 0, 0.5 * h),
            combine(&phi, &half_phi, 1, &k2p, 0, 0.5 * h),
        );
        let (k3u, k3p) = rhs(&u3, &p3);
        let (u4, p4) = (
            combine(&u, &half_u, 2, &k3u, 1, h),
            combine(&phi, &half_phi, 2, &k3p, 1, h),
        );
        let (k4u, k4p) = rhs(&u4, &p4);
        let advance = |y: &[Complex64],
                       e: &[f64],
                       k1: &[Complex64],
                       k2: &[Complex64],
                       k3: &[Complex64],
                       k4: &[Complex64]|
         -> Vec<Complex64> {
            (0..n)
                .map(|p| {
                    let e1 = e[p];
                    let e2 = e1 * e1;
                    y[p] * e2 + (h / 6.0) * (k1[p] * e2 + 2.0 * (k2[p] + k3[p]) * e1 + k4[p])
                })
                .collect()
        };
        u = advance(&u, &half_u, &k1u, &k2u, &k3u, &k4u);
        phi = advance(&phi, &half_phi, &k1p, &k2p, &k3p, &k4p);
        if u.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(Error::NonFinite(step));
        }
        if step % opts.store_every == 0 || step == steps {
            let t = step as f64 * h;
            out.times.push(t);
            out.monitor.push(monitor(t, &u));
            out.u_hat.push(u.clone());
            out.phi_hat.push(phi.clone());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMargin {
    pub k: usize,
    /// `min (Re u_hat - beta_k e^{-2^k t} w_hat_k)` over `supp w_hat_k` and
    /// stored `t` in `[t_k, t*)`.
    pub min_margin: f64,
    /// `min_margin / beta_k`.
    pub relative_margin: f64,
    pub times_checked: usize,
    pub covered: bool,
}

impl KMargin {
    pub fn holds(&self, rel_tol: f64) -> bool {
        self.covered && self.relative_margin >= -rel_tol
    }
}

/// Checks `u_hat(xi, t) >= beta_k e^{-2^k t} w_hat_k(xi)` for `k = 0..=K`.
pub fn verify_lower_bound(
    traj: &SpectralTrajectory,
    cert: &CertificateSequences,
    family: &[Vec<f64>],
    k_max: usize,
) -> Vec<KMargin> {
    (0..=k_max)
        .map(|k| {
            let mut m = KMargin {
                k,
                min_margin: f64::INFINITY,
                relative_margin: f64::INFINITY,
                times_checked: 0,
                covered: true,
            };
            let (Some(wk), Some(&tk), Some(&beta)) =
                (family.get(k), cert.t_k.get(k), cert.beta_k.get(k))
            else {
                m.covered = false;
                return m;
            };
            let supp: Vec<usize> = (0..wk.len()).filter(|&p| wk[p] > 0.0).collect();
            if supp.is_empty() {
                m.covered = false;
            }
            for (i, &t) in traj.times.iter().enumerate() {
                if t < tk || t >= cert.t_star {
                    continue;
                }
                m.times_checked += 1;
                let scale = beta * (-(k as f64).exp2() * t).exp();
                for &p in &supp {
                    m.min_margin = m.min_margin.min(traj.u_hat[i][p].re - scale * wk[p]);
                }
            }
            if m.times_checked == 0 {
                m.covered = false;
            }
            m.relative_margin = m.min_margin / beta;
            m
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuhamelProbe {
    pub time: f64,
    pub xi: [f64; 2],
    /// `[re, im]` of the stored coefficient.
    pub stored: [f64; 2],
    /// `[re, im]` of the Duhamel right-hand side.
    pub duhamel: [f64; 2],
    pub relative_error: f64,
}

/// Relaxed chemical recomputed from the stored density by exponential
/// trapezoids, using every `stride`-th stored time.
fn chemical_by_quadrature(
    traj: &SpectralTrajectory,
    stride: usize,
    upto: usize,
) -> Vec<Vec<Complex64>> {
    let grid = traj.grid;
    let mode_sq = grid.mode_sq_table();
    let tau = traj.tau;
    let idx: Vec<usize> = (0..=upto).step_by(stride).collect();
    let mut out = vec![vec![ZERO; grid.len()]];
    for w in idx.windows(2) {
        let h = traj.times[w[1]] - traj.times[w[0]];
        let prev = out.last().expect("nonempty");
        let next = (0..grid.len())
            .map(|p| {
                let z = h * mode_sq[p] / tau;
                let (wl, wr) = linear_weights(z);
                prev[p] * (-z).exp()
                    + (h / tau) * (wl * traj.u_hat[w[0]][p] + wr * traj.u_hat[w[1]][p])
            })
            .collect();
        out.push(next);
    }
    out
}

/// Right-hand side of the Fourier Duhamel formula at stored index `m`,
/// mode `q`, using every `stride`-th stored time for both time integrals.
fn duhamel_rhs(traj: &SpectralTrajectory, m: usize, q: usize, stride: usize) -> Complex64 {
    let grid = traj.grid;
    let dxi = grid.mode_spacing();
    let d = grid.dim() as i32;
    let cell = dxi.powi(d) / (2.0 * PI).powi(d) * dxi * dxi;
    let k2 = grid.mode_sq(q);
    let kq = lattice_index(&grid, q);
    let chem = chemical_by_quadrature(traj, stride, m);
    let idx: Vec<usize> = (0..=m).step_by(stride).collect();
    let source: Vec<Complex64> = idx
        .iter()
        .zip(&chem)
        .map(|(&i, phi)| {
            let mut acc = ZERO;
            for (pb, &c) in phi.iter().enumerate() {
                if c == ZERO {
                    continue;
                }
                let kb = lattice_index(&grid, pb);
                if let Some(pa) = storage_index(&grid, [kq[0] - kb[0], kq[1] - kb[1]]) {
                    let dot = (kq[0] * kb[0] + kq[1] * kb[1]) as f64;
                    acc += cell * dot * traj.u_hat[i][pa] * c;
                }
            }
            acc
        })
        .collect();
    let t = traj.times[m];
    let mut integral = ZERO;
    for (j, w) in idx.windows(2).enumerate() {
        let (s0, s1) = (traj.times[w[0]], traj.times[w[1]]);
        let h = s1 - s0;
        let (wl, wr) = linear_weights(h * k2);
        integral += (-(t - s1) * k2).exp() * h * (wl * source[j] + wr * source[j + 1]);
    }
    (-t * k2).exp() * traj.u_hat[0][q] + integral
}

/// Substitutes the stored trajectory into the right-hand side of the Fourier
/// Duhamel formula at the given probe times and up to `modes_per_time` modes
/// (spread over the modes carrying at least `1e-3` of the peak), using
/// Richardson-extrapolated exponential trapezoids in both time integrals.
///
/// The stored time grid must be uniform and the probe indices even.
pub fn duhamel_residual(
    traj: &SpectralTrajectory,
    probe_times: &[f64],
    modes_per_time: usize,
) -> Result<Vec<DuhamelProbe>> {
    let dt = traj.times.get(1).copied().unwrap_or(0.0) - traj.times[0];
    if traj
        .times
        .windows(2)
        .any(|w| ((w[1] - w[0]) - dt).abs() > 1e-9 * dt)
    {
        return Err(Error::InvalidArgument(
            "Duhamel probe needs a uniformly stored trajectory".into(),
        ));
    }
    let mut probes = Vec::new();
    for &t in probe_times {
        let mut m = traj.nearest(t);
        m -= m % 2;
        if m == 0 {
            return Err(Error::InvalidArgument(format!(
                "probe time {t} too close to 0"
            )));
        }
        let u = &traj.u_hat[m];
        let peak = u.iter().map(|c| c.norm()).fold(0.0, f64::max);
        let live: Vec<usize> = (0..u.len())
            .filter(|&p| u[p].norm() >= 1e-3 * peak)
            .collect();
        let count = modes_per_time.min(live.len());
        for j in 0..count {
            let q = live[j * (live.len() - 1) / (count - 1).max(1)];
            let fine = duhamel_rhs(traj, m, q, 1);
            let coarse = duhamel_rhs(traj, m, q, 2);
            let rhs = (4.0 * fine - coarse) / 3.0;
            probes.push(DuhamelProbe {
                time: traj.times[m],
                xi: traj.grid.mode(q),
                stored: [u[q].re, u[q].im],
                duhamel: [rhs.re, rhs.im],
                relative_error: (u[q] - rhs).norm() / u[q].norm(),
            });
        }
    }
    Ok(probes)
}

/// `max |u_hat(xi, t)|` over `E_k` at the stored time nearest `t`.
pub fn annulus_sup(traj: &SpectralTrajectory, k: usize, t: f64) -> f64 {
    let (lo, hi) = ((k as f64 - 1.0).exp2(), (k as f64).exp2());
    let u = &traj.u_hat[traj.nearest(t)];
    (0..u.len())
        .filter(|&p| {
            let xi = traj.grid.mode(p);
            let r = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
            xi[0] >= lo && r <= hi
        })
        .map(|p| u[p].norm())
        .fold(0.0, f64::max)
}

/// Serialized form of a certificate with its verified margins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateSummary {
    pub delta: f64,
    pub tau: f64,
    #[serde(rename = "A")]
    pub amplitude: f64,
    #[serde(rename = "K")]
    pub k_max: usize,
    #[serde(rename = "M")]
    pub m: f64,
    pub t_star: f64,
    pub t_k: Vec<f64>,
    pub beta_k: Vec<f64>,
    pub threshold_met: bool,
    pub margins: Vec<KMargin>,
}

impl CertificateSummary {
    pub fn new(cert: &CertificateSequences, margins: Vec<KMargin>) -> Self {
        Self {
            delta: cert.delta,
            tau: cert.tau,
            amplitude: cert.amplitude,
            k_max: cert.k_max,
            m: cert.m,
            t_star: cert.t_star,
            t_k: cert.t_k.clone(),
            beta_k: cert.beta_k.clone(),
            threshold_met: cert.threshold_met,
            margins,
        }
    }
}

/// Settings for an end-to-end lower-bound check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundSetup {
    pub delta: f64,
    pub tau: f64,
    pub amplitude: f64,
    pub k_max: usize,
    pub step: f64,
    pub probe_times: Vec<f64>,
    pub probe_modes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowerBoundCheck {
    pub certificate: CertificateSequences,
    pub margins: Vec<KMargin>,
    /// `annulus_sup` at each `t_k`.
    pub annulus_sups: Vec<f64>,
    pub positivity_defect: f64,
    pub probes: Vec<DuhamelProbe>,
    pub trajectory: SpectralTrajectory,
}

impl LowerBoundCheck {
    /// Ratios of consecutive `annulus_sups`.
    pub fn growth(&self) -> Vec<f64> {
        self.annulus_sups.windows(2).map(|w| w[1] / w[0]).collect()
    }

    pub fn worst_probe(&self) -> f64 {
        self.probes
            .iter()
            .map(|p| p.relative_error)
            .fold(0.0, f64::max)
    }

    pub fn summary(&self) -> CertificateSummary {
        CertificateSummary::new(&self.certificate, self.margins.clone())
    }

    /// `k,t_k,beta_k,min_margin,relative_margin,annulus_sup` rows.
    pub fn margins_csv(&self) -> String {
        let mut out = String::from("k,t_k,beta_k,min_margin,relative_margin,annulus_sup\n");
        for m in &self.margins {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                m.k,
                self.certificate.t_k[m.k],
                self.certificate.beta_k[m.k],
                m.min_margin,
                m.relative_margin,
                self.annulus_sups[m.k]
            );
        }
        out
    }
}

/// Builds the sequences, the annulus data and its family on `grid`,
/// marches up to `t*`, verifies the lower bounds and probes the Duhamel
/// residual.
pub fn check_lower_bound(grid: &Grid, setup: &LowerBoundSetup) -> Result<LowerBoundCheck> {
    let certificate = certificate_sequences(setup.delta, setup.tau, setup.amplitude, setup.k_max)?;
    let w0 = annulus_data(grid)?;
    let family = w_k_family(&w0, setup.k_max)?;
    let opts = FourierSimOptions::new(setup.step, certificate.t_star);
    let trajectory = fourier_simulate(&w0, setup.amplitude, setup.tau, &opts)?;
    let margins = verify_lower_bound(&trajectory, &certificate, &family, setup.k_max);
    let annulus_sups = certificate
        .t_k
        .iter()
        .enumerate()
        .map(|(k, &t)| annulus_sup(&trajectory, k, t))
        .collect();
    let probes = duhamel_residual(&trajectory, &setup.probe_times, setup.probe_modes)?;
    Ok(LowerBoundCheck {
        positivity_defect: trajectory.positivity_defect(),
        certificate,
        margins,
        annulus_sups,
        probes,
        trajectory,
    })
}
