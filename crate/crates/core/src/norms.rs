//! Norms and functionals used as diagnostics along trajectories.
//!
//! Suprema over continuous space-time are replaced by maxima over grid
//! points and stored times.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::heat_propagate;
use crate::spectral::{forward_transform, inverse_transform, Grid, RealField};
use crate::trajectory::Trajectory;

/// `max_{t > 0, x} (t + |x|^2) |u(x, t)|` over the given frames.
pub fn x_norm_frames(times: &[f64], frames: &[RealField]) -> f64 {
    let mut best = 0.0_f64;
    for (&t, f) in times.iter().zip(frames) {
        if t <= 0.0 {
            continue;
        }
        let grid = f.grid();
        for (p, v) in f.values().iter().enumerate() {
            best = best.max((t + grid.radius_sq(p)) * v.abs());
        }
    }
    best
}

/// X-norm of a trajectory; the `t = 0` frame is excluded.
pub fn x_norm(traj: &Trajectory) -> f64 {
    x_norm_frames(traj.times(), traj.frames())
}

/// 40 log-spaced times from `1e-4` up to `L^2 / 256`.
///
/// On the torus the weight `|x|^2` reaches `L^2 / 2`, so for `t` of order
/// `L^2` the uniform background left by diffusion dominates the X-norm; the
/// upper end keeps the samples in the regime where the torus mimics the
/// whole space (`t <= 4` at the default `L = 32`).
pub fn default_e_samples(grid: &Grid) -> Vec<f64> {
    log_space(1e-4, grid.side_length().powi(2) / 256.0, 40)
}

pub fn log_space(start: f64, end: f64, count: usize) -> Vec<f64> {
    let (a, b) = (start.ln(), end.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count.max(2) - 1) as f64).exp())
        .collect()
}

/// Lower estimate of `|u0|_E = sup_t |e^{t Delta} u0|_X` from the samples.
pub fn e_norm(u0: &RealField, t_samples: &[f64]) -> Result<f64> {
    let u0_hat = forward_transform(u0).with_time(0.0);
    let mut best = 0.0_f64;
    for &t in t_samples {
        if !(t > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "E-norm sample times must be > 0, got {t}"
            )));
        }
        let f = inverse_transform(&heat_propagate(&u0_hat, t)?);
        best = best.max(x_norm_frames(&[t], std::slice::from_ref(&f)));
    }
    Ok(best)
}

/// `max_{t, xi} (1 + t^{1/2} |xi|)^alpha |u_hat(xi, t)|` with the
/// continuous-transform scaling `u_hat = L^d c`.
pub fn y_alpha_norm(traj: &Trajectory, alpha: f64) -> Result<f64> {
    if !(alpha > 1.0 && alpha < 2.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must lie in (1, 2), got {alpha}"
        )));
    }
    let grid = *traj.grid();
    let vol = grid.volume();
    let mode_sq = grid.mode_sq_table();
    let mut best = 0.0_f64;
    for (&t, f) in traj.times().iter().zip(traj.frames()) {
        let s = forward_transform(f);
        let st = t.sqrt();
        for (c, k2) in s.coeffs().iter().zip(&mode_sq) {
            best = best.max((1.0 + st * k2.sqrt()).powf(alpha) * vol * c.norm());
        }
    }
    Ok(best)
}

/// Weak-Lorentz quasi-norm `sup_lambda lambda |{|f| > lambda}|^{1/r}`,
/// evaluated exactly from the decreasing rearrangement.
pub fn weak_lorentz_norm(f: &RealField, r: f64) -> Result<f64> {
    if !(r > 1.0) {
        return Err(Error::InvalidArgument(format!(
            "Lorentz exponent must be > 1, got {r}"
        )));
    }
    Ok(weak_lorentz_values(f.values(), f.grid().cell_volume(), r))
}

pub(crate) fn weak_lorentz_values(values: &[f64], cell_volume: f64, r: f64) -> f64 {
    let mut mags: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    mags.sort_unstable_by(|a, b| b.total_cmp(a));
    mags.iter()
        .enumerate()
        .map(|(k, v)| v * ((k + 1) as f64 * cell_volume).powf(1.0 / r))
        .fold(0.0, f64::max)
}

pub fn mass(f: &RealField) -> f64 {
    f.grid().cell_volume() * f.values().iter().sum::<f64>()
}

/// `(int |f|^p)^{1/p}` for finite `p >= 1`, the sup norm for `p = inf`.
pub fn lp_norm(f: &RealField, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::InvalidArgument(format!("p must be >= 1, got {p}")));
    }
    if p.is_infinite() {
        return Ok(f.max_abs());
    }
    let cv = f.grid().cell_volume();
    Ok((cv * f.values().iter().map(|v| v.abs().powf(p)).sum::<f64>()).powf(1.0 / p))
}

/// `int |x|^2 f` with the torus-centered coordinate.
pub fn second_moment(f: &RealField) -> f64 {
    let grid = f.grid();
    grid.cell_volume()
        * f.values()
            .iter()
            .enumerate()
            .map(|(p, v)| grid.radius_sq(p) * v)
            .sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormSample {
    pub time: f64,
    pub name: String,
    pub value: f64,
}

/// Per-time functionals together with their suprema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub samples: Vec<NormSample>,
    pub suprema: BTreeMap<String, f64>,
    pub grid: Grid,
    pub time_count: usize,
    pub r: Option<f64>,
    pub alpha: Option<f64>,
}

impl NormReport {
    pub fn new(grid: Grid, time_count: usize) -> Self {
        Self {
            samples: Vec::new(),
            suprema: BTreeMap::new(),
            grid,
            time_count,
            r: None,
            alpha: None,
        }
    }

    pub fn push(&mut self, time: f64, name: &str, value: f64) {
        let sup = self.suprema.entry(name.to_string()).or_insert(0.0);
        *sup = sup.max(value);
        self.samples.push(NormSample {
            time,
            name: name.to_string(),
            value,
        });
    }

    pub fn values(&self, name: &str) -> Vec<f64> {
        self.samples
            .iter()
            .filter(|s| s.name == name)
            .map(|s| s.value)
            .collect()
    }

    pub fn sup(&self, name: &str) -> Option<f64> {
        self.suprema.get(name).copied()
    }

    /// `time,name,value` rows under a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,name,value\n");
        for s in &self.samples {
            let _ = writeln!(out, "{},{},{}", s.time, s.name, s.value);
        }
        out
    }
}

/// Quotients `|u(t) - u(t')|_{L^{r,inf}} / ((t - t')^{1/2} t'^{-3/2 + 1/r})`
/// for consecutive stored pairs with `t' > 0`.
pub fn time_holder_quotient(traj: &Trajectory, r: f64) -> Result<NormReport> {
    if !(r > 1.0 && r < 2.0) {
        return Err(Error::InvalidArgument(format!(
            "Hoelder exponent r must lie in (1, 2), got {r}"
        )));
    }
    if traj.len() < 3 {
        return Err(Error::InvalidArgument(
            "time Hoelder quotient needs at least three times".into(),
        ));
    }
    let mut report = NormReport::new(*traj.grid(), traj.len());
    report.r = Some(r);
    let cv = traj.grid().cell_volume();
    let times = traj.times();
    for n in 1..times.len() {
        let (t0, t1) = (times[n - 1], times[n]);
        if t0 <= 0.0 {
            continue;
        }
        let diff: Vec<f64> = traj.frames()[n]
            .values()
            .iter()
            .zip(traj.frames()[n - 1].values())
            .map(|(a, b)| a - b)
            .collect();
        let num = weak_lorentz_values(&diff, cv, r);
        let den = (t1 - t0).sqrt() * t0.powf(-1.5 + 1.0 / r);
        report.push(t1, "holder_quotient", num / den);
    }
    Ok(report)
}

/// The standard per-time diagnostics of a trajectory: mass, `L^1`, `L^inf`,
/// second moment, `L^{r,inf}`, `t |u|_inf`, `sup |x|^2 |u|`, and the
/// running X-norm weight maximum.
pub fn norm_report(traj: &Trajectory, r: f64, alpha: f64) -> Result<NormReport> {
    let mut report = NormReport::new(*traj.grid(), traj.len());
    report.r = Some(r);
    report.alpha = Some(alpha);
    for (&t, f) in traj.times().iter().zip(traj.frames()) {
        let grid = f.grid();
        let linf = f.max_abs();
        let far = f
            .values()
            .iter()
            .enumerate()
            .map(|(p, v)| grid.radius_sq(p) * v.abs())
            .fold(0.0, f64::max);
        report.push(t, "mass", mass(f));
        report.push(t, "l1", lp_norm(f, 1.0)?);
        report.push(t, "linf", linf);
        report.push(t, "second_moment", second_moment(f));
        report.push(t, "weak_lorentz", weak_lorentz_norm(f, r)?);
        report.push(t, "t_linf", t * linf);
        report.push(t, "x2_abs_max", far);
        if t > 0.0 {
            report.push(
                t,
                "x_weighted",
                x_norm_frames(&[t], std::slice::from_ref(f)),
            );
        }
    }
    report.suprema.insert("x_norm".into(), x_norm(traj));
    report
        .suprema
        .insert("y_alpha".into(), y_alpha_norm(traj, alpha)?);
    if traj.len() >= 3 {
        let holder = time_holder_quotient(traj, r.clamp(1.001, 1.999))?;
        for s in holder.samples {
            report.push(s.time, &s.name, s.value);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::ModelParams;
    use crate::trajectory::TrajectoryMeta;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn heat_kernel(grid: Grid, t: f64) -> RealField {
        RealField::from_fn(grid, t, |x| {
            (-(x[0] * x[0] + x[1] * x[1]) / (4.0 * t)).exp() / (4.0 * PI * t)
        })
        .unwrap()
    }

    #[test]
    fn x_norm_of_heat_kernel_family() {
        // (t + r^2) g_t(r) peaks at r^2 = 3t with value e^{-3/4}/pi; dense scan oracle
        let oracle = (0..=300_000)
            .map(|i| {
                let s = i as f64 * 1e-4;
                (1.0 + s) * (-s / 4.0).exp() / (4.0 * PI)
            })
            .fold(0.0, f64::max);
        assert_relative_eq!(oracle, (-0.75f64).exp() / PI, max_relative = 1e-8);

        let grid = Grid::new(2, 32.0, 256).unwrap();
        let times = [0.0, 0.5, 1.0, 2.0];
        let frames: Vec<RealField> = times
            .iter()
            .map(|&t| {
                if t == 0.0 {
                    RealField::zeros(grid, 0.0)
                } else {
                    heat_kernel(grid, t)
                }
            })
            .collect();
        let traj = Trajectory::new(
            ModelParams::parabolic_elliptic(),
            times.to_vec(),
            frames,
            TrajectoryMeta::default(),
        )
        .unwrap();
        let x = x_norm(&traj);
        assert_relative_eq!(x, oracle, max_relative = 2e-3);
        assert!(x <= oracle * (1.0 + 1e-12));
        assert_relative_eq!(x_norm(&traj.scaled(2.0)), 2.0 * x, max_relative = 1e-14);
        assert_eq!(x_norm(&traj.scaled(0.0)), 0.0);
    }

    #[test]
    fn e_norm_of_scaled_heat_kernel() {
        let grid = Grid::new(2, 32.0, 128).unwrap();
        let (m, t0) = (2.0, 0.5);
        let u0 = heat_kernel(grid, t0).scaled(m);
        let samples = default_e_samples(&grid);
        let got = e_norm(&u0, &samples).unwrap();
        // oracle at each sampled t: max over s of (t + s) M g_{t + t0}(sqrt(s))
        let oracle = samples
            .iter()
            .map(|&t| {
                let tt = t + t0;
                (0..=20_000)
                    .map(|i| {
                        let s = i as f64 * 1e-3 * tt;
                        (t + s) * m * (-s / (4.0 * tt)).exp() / (4.0 * PI * tt)
                    })
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        assert_relative_eq!(got, oracle, max_relative = 5e-3);
        // close to the supremum M e^{-3/4}/pi attained as t -> infinity
        assert_relative_eq!(got, m * (-0.75f64).exp() / PI, max_relative = 0.05);
        assert_eq!(e_norm(&RealField::zeros(grid, 0.0), &samples).unwrap(), 0.0);
        assert!(e_norm(&u0, &[0.0]).is_err());
    }

    #[test]
    fn y_alpha_examples() {
        let grid = Grid::new(2, 32.0, 128).unwrap();
        // unit spike: u_hat = 1 at t = 0
        let mut vals = vec![0.0; grid.len()];
        vals[64 * 128 + 64] = 1.0 / grid.cell_volume();
        let spike = RealField::new(grid, vals, 0.0).unwrap();
        let times = vec![0.0, 0.3, 1.0, 2.5];
        let traj =
            Trajectory::heat_flow(&spike, ModelParams::parabolic_elliptic(), &times).unwrap();
        let alpha = 1.0001;
        let oracle = (0..=200_000)
            .map(|i| {
                let s = i as f64 * 1e-5;
                (1.0 + s).powf(alpha) * (-s * s).exp()
            })
            .fold(0.0, f64::max);
        let s_star = (3f64.sqrt() - 1.0) / 2.0;
        assert_relative_eq!(
            (1.0 + s_star) * (-s_star * s_star).exp(),
            1.1948,
            epsilon = 1e-4
        );
        let got = y_alpha_norm(&traj, alpha).unwrap();
        assert_relative_eq!(got, oracle, max_relative = 2e-3);

        let datum_only = Trajectory::new(
            ModelParams::parabolic_elliptic(),
            vec![0.0],
            vec![spike],
            TrajectoryMeta::default(),
        )
        .unwrap();
        assert_relative_eq!(
            y_alpha_norm(&datum_only, 1.5).unwrap(),
            1.0,
            max_relative = 1e-12
        );
        assert_eq!(y_alpha_norm(&traj.scaled(0.0), 1.5).unwrap(), 0.0);
        assert!(y_alpha_norm(&traj, 1.0).is_err());
        assert!(y_alpha_norm(&traj, 2.0).is_err());
    }

    #[test]
    fn weak_lorentz_examples() {
        let grid = Grid::new(2, 8.0, 512).unwrap();
        let disk = RealField::from_fn(grid, 0.0, |x| {
            if x[0] * x[0] + x[1] * x[1] < 1.0 {
                1.0
            } else {
                0.0
            }
        })
        .unwrap();
        let count = disk.values().iter().filter(|&&v| v > 0.0).count() as f64;
        for r in [1.5, 2.0, 4.0] {
            let got = weak_lorentz_norm(&disk, r).unwrap();
            assert_relative_eq!(
                got,
                (count * grid.cell_volume()).powf(1.0 / r),
                max_relative = 1e-14
            );
            assert_relative_eq!(got, PI.powf(1.0 / r), max_relative = 1e-2);
            assert_relative_eq!(
                weak_lorentz_norm(&disk.scaled(2.0), r).unwrap(),
                2.0 * got,
                max_relative = 1e-14
            );
        }
        assert!(weak_lorentz_norm(&disk, 1.0).is_err());
    }

    #[test]
    fn weak_lorentz_of_heat_kernel() {
        let t = 0.5;
        let grid = Grid::new(2, 16.0, 512).unwrap();
        let g = heat_kernel(grid, t);
        // brute force over level sets of the continuous kernel: |{g_t > l}| = 4 pi t ln(1/(4 pi t l))
        let peak = 1.0 / (4.0 * PI * t);
        let oracle = (1..100_000)
            .map(|i| {
                let l = peak * i as f64 / 100_000.0;
                l * (4.0 * PI * t * (peak / l).ln()).sqrt()
            })
            .fold(0.0, f64::max);
        assert_relative_eq!(
            oracle,
            1.0 / (8.0 * PI * std::f64::consts::E * t).sqrt(),
            max_relative = 1e-6
        );
        assert_relative_eq!(
            weak_lorentz_norm(&g, 2.0).unwrap(),
            oracle,
            max_relative = 1e-2
        );
    }

    #[test]
    fn moments_and_lp() {
        let grid = Grid::new(2, 32.0, 256).unwrap();
        let t = 0.7;
        let g = heat_kernel(grid, t);
        assert_relative_eq!(mass(&g), 1.0, max_relative = 1e-10);
        assert_relative_eq!(second_moment(&g), 4.0 * t, max_relative = 1e-9);
        assert_relative_eq!(
            lp_norm(&g, f64::INFINITY).unwrap(),
            1.0 / (4.0 * PI * t),
            max_relative = 1e-12
        );
        assert_relative_eq!(lp_norm(&g, 1.0).unwrap(), 1.0, max_relative = 1e-10);
        // |g_t|_2^2 = 1/(8 pi t)
        assert_relative_eq!(
            lp_norm(&g, 2.0).unwrap(),
            (1.0 / (8.0 * PI * t)).sqrt(),
            max_relative = 1e-9
        );
        assert!(lp_norm(&g, 0.5).is_err());
    }

    #[test]
    fn holder_quotient_of_constant_trajectory_is_zero() {
        let grid = Grid::new(2, 8.0, 16).unwrap();
        let f = heat_kernel(grid, 1.0);
        let traj = Trajectory::new(
            ModelParams::parabolic_elliptic(),
            vec![0.0, 0.5, 1.0, 2.0],
            vec![f; 4],
            TrajectoryMeta::default(),
        )
        .unwrap();
        let rep = time_holder_quotient(&traj, 1.5).unwrap();
        assert_eq!(rep.values("holder_quotient"), vec![0.0, 0.0]);
        assert!(time_holder_quotient(&traj, 2.5).is_err());
        let csv = rep.to_csv();
        assert!(csv.starts_with("time,name,value\n1,holder_quotient,0\n"));
    }
}
