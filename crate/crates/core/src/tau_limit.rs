//! Singular limit `tau -> 0`: operator gaps, parameter sweeps and rate fits.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::norms::{lp_norm, x_norm};
use crate::operators::{
    chemical_history, gradient_spectral, inverse_laplacian, ModelParams, VectorField,
};
use crate::solver::picard_solve;
use crate::spectral::RealField;
use crate::trajectory::{quadratic_time_grid, Trajectory};

/// `max_{t > 0} t^{1/2} |W_tau(u)(t) - W_0(u(t))|_inf` over the stored times.
pub fn w_gap(u: &Trajectory, tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tau must be > 0, got {tau}"
        )));
    }
    let spectra = u.spectra();
    let relaxed = chemical_history(&spectra, u.times(), tau);
    let gaps: Vec<f64> = u
        .times()
        .par_iter()
        .zip(spectra.par_iter().zip(relaxed.par_iter()))
        .filter(|(&t, _)| t > 0.0)
        .map(|(&t, (s, phi))| {
            let elliptic = inverse_laplacian(s);
            let diff = phi.map_modes(|p, c| c - elliptic.coeffs()[p]);
            t.sqrt() * VectorField::from_spectral(&gradient_spectral(&diff)).max_norm()
        })
        .collect();
    Ok(gaps.into_iter().fold(0.0, f64::max))
}

/// Default splitting time `eps(tau) = tau^{1/12} / 2` separating the
/// short-time and long-time parts of the operator-gap estimate.
pub fn split_time(tau: f64) -> f64 {
    0.5 * tau.powf(1.0 / 12.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Topology {
    X,
    L1,
    Linf,
}

impl Topology {
    pub const ALL: [Topology; 3] = [Topology::X, Topology::L1, Topology::Linf];
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Topology::X => "X",
            Topology::L1 => "L1",
            Topology::Linf => "Linf",
        })
    }
}

impl std::str::FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "X" | "x" => Ok(Topology::X),
            "L1" | "l1" => Ok(Topology::L1),
            "Linf" | "linf" => Ok(Topology::Linf),
            other => Err(Error::InvalidArgument(format!(
                "unknown topology {other:?}"
            ))),
        }
    }
}

/// Least-squares slope of `ln gap` against `ln tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub stderr: f64,
    pub points: usize,
}

/// Ordinary least squares in log-log coordinates; pairs with a nonpositive
/// entry are dropped and fewer than three survivors give `None`.
pub fn rate_fit(pairs: &[(f64, f64)]) -> Option<RateFit> {
    let pts: Vec<(f64, f64)> = pairs
        .iter()
        .filter(|(t, g)| *t > 0.0 && *g > 0.0 && t.is_finite() && g.is_finite())
        .map(|(t, g)| (t.ln(), g.ln()))
        .collect();
    let n = pts.len();
    if n < 3 {
        return None;
    }
    let nf = n as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let stderr = (ssr / (nf - 2.0) / sxx).sqrt();
    Some(RateFit {
        slope,
        stderr,
        points: n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub times: Vec<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub epsilon_e: f64,
}

impl SweepConfig {
    /// Quadratic time grid with 64 intervals on `[0, t_final]`.
    pub fn new(t_final: f64) -> Self {
        Self {
            times: quadratic_time_grid(t_final, 64),
            tol: 1e-13,
            max_iter: 60,
            epsilon_e: ModelParams::DEFAULT_EPSILON_E,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauOutcome {
    pub tau: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Gap `|u^tau - u|` per requested topology (absent when not converged).
    pub gaps: BTreeMap<Topology, f64>,
    /// `w_gap` of the limit solution; `None` for `tau = 0`.
    pub operator_gap: Option<f64>,
    /// X-norm of `u^tau` itself.
    pub solution_x_norm: Option<f64>,
    pub split_time: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// Strictly decreasing.
    pub taus: Vec<f64>,
    pub topologies: Vec<Topology>,
    pub outcomes: Vec<TauOutcome>,
    pub limit_x_norm: f64,
    pub fits: BTreeMap<Topology, Option<RateFit>>,
    pub operator_fit: Option<RateFit>,
}

impl SweepResult {
    pub fn gaps(&self, topology: Topology) -> Vec<f64> {
        self.outcomes
            .iter()
            .map(|o| o.gaps.get(&topology).copied().unwrap_or(f64::NAN))
            .collect()
    }

    pub fn operator_gaps(&self) -> Vec<f64> {
        self.outcomes
            .iter()
            .map(|o| o.operator_gap.unwrap_or(f64::NAN))
            .collect()
    }

    /// `tau,topology,gap` rows, one per (tau, topology); `NaN` marks a
    /// non-converged solve.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("tau,topology,gap\n");
        for o in &self.outcomes {
            for t in &self.topologies {
                let g = o.gaps.get(t).copied().unwrap_or(f64::NAN);
                let _ = writeln!(out, "{},{},{}", o.tau, t, g);
            }
        }
        out
    }
}

fn gap(diff: &Trajectory, topology: Topology) -> f64 {
    let per_time = |f: &RealField| match topology {
        Topology::L1 => lp_norm(f, 1.0).expect("p = 1"),
        Topology::Linf => f.max_abs(),
        Topology::X => unreachable!(),
    };
    match topology {
        Topology::X => x_norm(diff),
        _ => diff.frames().iter().map(per_time).fold(0.0, f64::max),
    }
}

/// Solves the elliptic model once and the relaxed model for every `tau`,
/// then measures `|u^tau - u|` in each requested topology.
///
/// Failing relaxed solves are recorded rather than propagated; the limit
/// solve itself must converge.
pub fn tau_sweep(
    u0: &RealField,
    taus: &[f64],
    topologies: &[Topology],
    config: &SweepConfig,
) -> Result<SweepResult> {
    if taus.is_empty() {
        return Err(Error::InvalidArgument("no tau values given".into()));
    }
    if let Some(t) = taus.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
        return Err(Error::InvalidArgument(format!(
            "tau values must be >= 0, got {t}"
        )));
    }
    let mut sorted = taus.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument("tau values must be distinct".into()));
    }
    let mut tops = topologies.to_vec();
    tops.dedup();

    let pe_params = ModelParams::new(0.0, config.epsilon_e)?;
    let (limit, _) = picard_solve(u0, pe_params, &config.times, config.tol, config.max_iter)?;

    let outcomes: Vec<TauOutcome> = sorted
        .par_iter()
        .map(|&tau| {
            let mut out = TauOutcome {
                tau,
                converged: false,
                iterations: 0,
                gaps: BTreeMap::new(),
                operator_gap: None,
                solution_x_norm: None,
                split_time: split_time(tau),
                error: None,
            };
            if tau > 0.0 {
                out.operator_gap = w_gap(&limit, tau).ok();
            }
            let params = match ModelParams::new(tau, config.epsilon_e) {
                Ok(p) => p,
                Err(e) => {
                    out.error = Some(e.to_string());
                    return out;
                }
            };
            match picard_solve(u0, params, &config.times, config.tol, config.max_iter) {
                Ok((sol, report)) => {
                    out.converged = true;
                    out.iterations = report.iterations;
                    out.solution_x_norm = Some(x_norm(&sol));
                    let diff = sol.difference(&limit).expect("shared grids");
                    for &t in &tops {
                        out.gaps.insert(t, gap(&diff, t));
                    }
                }
                Err(e) => out.error = Some(e.to_string()),
            }
            out
        })
        .collect();

    let fits = tops
        .iter()
        .map(|&t| {
            let pairs: Vec<(f64, f64)> = outcomes
                .iter()
                .filter_map(|o| o.gaps.get(&t).map(|g| (o.tau, *g)))
                .collect();
            (t, rate_fit(&pairs))
        })
        .collect();
    let op_pairs: Vec<(f64, f64)> = outcomes
        .iter()
        .filter_map(|o| o.operator_gap.map(|g| (o.tau, g)))
        .collect();
    Ok(SweepResult {
        taus: sorted,
        topologies: tops,
        outcomes,
        limit_x_norm: x_norm(&limit),
        fits,
        operator_fit: rate_fit(&op_pairs),
    })
}
