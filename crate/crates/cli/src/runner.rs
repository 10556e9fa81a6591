use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use kslab_core::blowup::{certificate_sequences, check_lower_bound, LowerBoundSetup};
use kslab_core::norms::{default_e_samples, e_norm, norm_report, x_norm, y_alpha_norm};
use kslab_core::solver::{march_solve_with, picard_solve, residual, MarchOptions};
use kslab_core::tau_limit::{tau_sweep, SweepConfig};
use kslab_core::trajectory::quadratic_time_grid;
use kslab_core::{CertificateSummary, Error as CoreError, ModelParams, RealField, Trajectory};
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::{Datum, ExperimentConfig, ExperimentKind, SolverKind};

pub const OUTPUT_FORMAT: u32 = 1;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration rejected: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Core(CoreError),
}

impl From<CoreError> for RunError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidGrid(m)
            | CoreError::InvalidArgument(m)
            | CoreError::Coverage(m)
            | CoreError::Certificate(m) => RunError::Config(m),
            CoreError::Io(e) => RunError::Io(e),
            other => RunError::Core(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Success,
    /// The numerics gave up (no contraction, guard fired); partial output was written.
    NumericalFailure(String),
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub outcome: Outcome,
    pub files: Vec<PathBuf>,
    pub summary: Value,
}

impl RunReport {
    pub fn exit_code(&self) -> u8 {
        match self.outcome {
            Outcome::Success => 0,
            Outcome::NumericalFailure(_) => 2,
        }
    }
}

/// Exit code for a run that could not produce a report.
pub fn error_exit_code(e: &RunError) -> u8 {
    match e {
        RunError::Core(CoreError::NotConverged(_) | CoreError::NonFinite(_)) => 2,
        _ => 1,
    }
}

struct Writer<'a> {
    cfg: &'a ExperimentConfig,
    dir: &'a Path,
    files: Vec<PathBuf>,
}

impl Writer<'_> {
    fn csv(&mut self, name: &str, body: &str) -> Result<(), RunError> {
        self.raw(
            name,
            format!("{}{body}", self.cfg.echo_comment()).as_bytes(),
        )
    }

    fn json(&mut self, name: &str, mut value: Value) -> Result<(), RunError> {
        if let Value::Object(map) = &mut value {
            map.insert("config".into(), serde_json::to_value(self.cfg)?);
            map.insert("versions".into(), versions());
        }
        let mut text = serde_json::to_string_pretty(&value)?;
        text.push('\n');
        self.raw(name, text.as_bytes())
    }

    fn raw(&mut self, name: &str, bytes: &[u8]) -> Result<(), RunError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes)?;
        self.files.push(path);
        Ok(())
    }
}

fn versions() -> Value {
    json!({ "kslab": env!("CARGO_PKG_VERSION"), "output_format": OUTPUT_FORMAT })
}

/// Builds the initial density of a physical-space experiment.
pub fn initial_density(cfg: &ExperimentConfig) -> Result<RealField, RunError> {
    let grid = cfg.grid();
    Ok(match cfg.datum {
        Datum::Gaussian {
            mass,
            width,
            center,
        } => RealField::gaussian(grid, mass, width, center)?,
        Datum::DiracCell { mass } => RealField::dirac_cell(grid, mass),
        Datum::Annulus { .. } => {
            return Err(RunError::Config(
                "annulus datum lives in Fourier space".into(),
            ))
        }
    })
}

/// Runs `cfg`, writing every artifact into `out_dir` (created if needed).
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunReport, RunError> {
    fs::create_dir_all(out_dir)?;
    let mut w = Writer {
        cfg,
        dir: out_dir,
        files: Vec::new(),
    };
    let (outcome, summary) = match cfg.kind {
        ExperimentKind::Simulate | ExperimentKind::Norms => run_evolution(cfg, &mut w)?,
        ExperimentKind::TauSweep => run_sweep(cfg, &mut w)?,
        ExperimentKind::Certificate => run_certificate(cfg, &mut w)?,
        ExperimentKind::BlowupSim => run_blowup(cfg, &mut w)?,
    };
    let mut summary = summary;
    let (status, partial, failure) = match &outcome {
        Outcome::Success => ("ok", false, Value::Null),
        Outcome::NumericalFailure(m) => ("numerical-failure", true, Value::String(m.clone())),
    };
    if let Value::Object(map) = &mut summary {
        map.insert("kind".into(), json!(cfg.kind.as_str()));
        map.insert("status".into(), json!(status));
        map.insert("partial".into(), json!(partial));
        map.insert("failure".into(), failure);
    }
    w.json("summary.json", summary.clone())?;
    Ok(RunReport {
        outcome,
        files: w.files,
        summary,
    })
}

fn run_evolution(cfg: &ExperimentConfig, w: &mut Writer) -> Result<(Outcome, Value), RunError> {
    let u0 = initial_density(cfg)?;
    let params = ModelParams::new(cfg.tau, cfg.epsilon_e)?;
    let mut notes = Vec::new();
    let mut picard = Value::Null;
    let (traj, outcome) = match cfg.solver {
        SolverKind::Heat => (
            Trajectory::heat_flow(
                &u0,
                params,
                &quadratic_time_grid(cfg.t_final, cfg.intervals),
            )?,
            Outcome::Success,
        ),
        SolverKind::Picard => {
            match picard_solve(
                &u0,
                params,
                &quadratic_time_grid(cfg.t_final, cfg.intervals),
                cfg.tol,
                cfg.max_iter,
            ) {
                Ok((traj, report)) => {
                    picard = serde_json::to_value(&report)?;
                    (traj, Outcome::Success)
                }
                Err(CoreError::NotConverged(report)) => {
                    let msg = format!(
                        "Picard iteration did not converge within {} iterations; data likely outside the contraction regime",
                        report.iterations
                    );
                    let summary = json!({ "picard": *report, "notes": [msg.clone()] });
                    return Ok((Outcome::NumericalFailure(msg), summary));
                }
                Err(e) => return Err(e.into()),
            }
        }
        SolverKind::March => {
            let opts = MarchOptions {
                scheme: cfg.scheme,
                ceiling_factor: cfg.ceiling,
                store_every: cfg.store_every,
                ..MarchOptions::new(cfg.step, cfg.t_final)
            };
            let traj = march_solve_with(&u0, params, &opts)?;
            let outcome = match traj.meta.blowup_suspected_at {
                Some(t) => {
                    let msg = format!("blow-up suspected at t = {t}");
                    notes.push(msg.clone());
                    Outcome::NumericalFailure(msg)
                }
                None => Outcome::Success,
            };
            (traj, outcome)
        }
    };

    let masses = traj.masses();
    let m0 = masses[0];
    let drift =
        masses.iter().map(|m| (m - m0).abs()).fold(0.0, f64::max) / m0.abs().max(f64::MIN_POSITIVE);
    let report = norm_report(&traj, cfg.r, cfg.alpha)?;
    w.csv("norms.csv", &report.to_csv())?;

    let mut summary = json!({
        "solver": cfg.solver,
        "final_time": traj.times().last().copied(),
        "frames": traj.len(),
        "mass_initial": m0,
        "mass_drift_relative": drift,
        "x_norm": x_norm(&traj),
        "suprema": report.suprema,
        "blowup_suspected_at": traj.meta.blowup_suspected_at,
        "picard": picard,
        "notes": notes,
    });
    if cfg.kind == ExperimentKind::Simulate {
        let path = w.dir.join("trajectory.bin");
        let mut file = BufWriter::new(fs::File::create(&path)?);
        traj.write_binary(&mut file)?;
        file.flush()?;
        w.files.push(path);
        summary["residual_x_norm"] = json!(residual(&traj)?);
    } else {
        summary["e_norm"] = json!(e_norm(&u0, &default_e_samples(u0.grid()))?);
        summary["y_alpha"] = json!(y_alpha_norm(&traj, cfg.alpha)?);
    }
    Ok((outcome, summary))
}

fn run_sweep(cfg: &ExperimentConfig, w: &mut Writer) -> Result<(Outcome, Value), RunError> {
    let u0 = initial_density(cfg)?;
    let sweep_cfg = SweepConfig {
        times: quadratic_time_grid(cfg.t_final, cfg.intervals),
        tol: cfg.tol,
        max_iter: cfg.max_iter,
        epsilon_e: cfg.epsilon_e,
    };
    let res = match tau_sweep(&u0, &cfg.taus, &cfg.topologies, &sweep_cfg) {
        Ok(r) => r,
        Err(CoreError::NotConverged(report)) => {
            let msg = "limit problem did not converge; data likely outside the contraction regime"
                .to_string();
            return Ok((
                Outcome::NumericalFailure(msg.clone()),
                json!({ "picard": *report, "notes": [msg] }),
            ));
        }
        Err(e) => return Err(e.into()),
    };
    w.csv("sweep.csv", &res.to_csv())?;
    let failed: Vec<f64> = res
        .outcomes
        .iter()
        .filter(|o| !o.converged)
        .map(|o| o.tau)
        .collect();
    let notes: Vec<String> = res
        .outcomes
        .iter()
        .filter_map(|o| o.error.as_ref().map(|e| format!("tau = {}: {e}", o.tau)))
        .collect();
    let summary = json!({
        "fits": res.fits,
        "operator_fit": res.operator_fit,
        "operator_gaps": res.operator_gaps(),
        "limit_x_norm": res.limit_x_norm,
        "outcomes": res.outcomes,
        "failed_taus": failed,
        "notes": notes,
    });
    Ok((Outcome::Success, summary))
}

fn setup(cfg: &ExperimentConfig) -> LowerBoundSetup {
    let amplitude = match cfg.datum {
        Datum::Annulus { amplitude } => amplitude,
        _ => unreachable!("validated spectral datum"),
    };
    LowerBoundSetup {
        delta: cfg.delta,
        tau: cfg.tau,
        amplitude,
        k_max: cfg.k_max,
        step: cfg.step,
        probe_times: cfg.probe_times.clone(),
        probe_modes: cfg.probe_modes,
    }
}

fn certificate_json(
    summary: &CertificateSummary,
    recursion_discrepancy: f64,
) -> Result<Value, RunError> {
    let mut v = serde_json::to_value(summary)?;
    v["recursion_discrepancy"] = json!(recursion_discrepancy);
    Ok(v)
}

fn run_certificate(cfg: &ExperimentConfig, w: &mut Writer) -> Result<(Outcome, Value), RunError> {
    if cfg.verify {
        return run_blowup(cfg, w);
    }
    let s = setup(cfg);
    let cert = certificate_sequences(s.delta, s.tau, s.amplitude, s.k_max)?;
    let summary = CertificateSummary::new(&cert, Vec::new());
    w.json(
        "certificate.json",
        certificate_json(&summary, cert.recursion_discrepancy)?,
    )?;
    let out = json!({
        "threshold_met": cert.threshold_met,
        "t_star": cert.t_star,
        "log2_beta_k": cert.log2_beta_k,
        "verified": false,
    });
    Ok((Outcome::Success, out))
}

fn run_blowup(cfg: &ExperimentConfig, w: &mut Writer) -> Result<(Outcome, Value), RunError> {
    let check = match check_lower_bound(&cfg.grid(), &setup(cfg)) {
        Ok(c) => c,
        Err(CoreError::NonFinite(_)) => {
            let msg = "Fourier simulation overflowed before t*".to_string();
            return Ok((
                Outcome::NumericalFailure(msg.clone()),
                json!({ "notes": [msg] }),
            ));
        }
        Err(e) => return Err(e.into()),
    };
    let cert = &check.certificate;
    w.json(
        "certificate.json",
        certificate_json(&check.summary(), cert.recursion_discrepancy)?,
    )?;
    w.csv("margins.csv", &check.margins_csv())?;
    w.csv("blowup.csv", &check.trajectory.monitor_csv())?;
    let mut probes =
        String::from("time,xi1,xi2,stored_re,stored_im,duhamel_re,duhamel_im,relative_error\n");
    for p in &check.probes {
        probes.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            p.time,
            p.xi[0],
            p.xi[1],
            p.stored[0],
            p.stored[1],
            p.duhamel[0],
            p.duhamel[1],
            p.relative_error
        ));
    }
    w.csv("probes.csv", &probes)?;
    let all_hold = check.margins.iter().all(|m| m.covered && m.holds(1e-6));
    let out = json!({
        "threshold_met": cert.threshold_met,
        "verified": true,
        "all_margins_hold": all_hold,
        "annulus_sups": check.annulus_sups,
        "growth": check.growth(),
        "positivity_defect": check.positivity_defect,
        "worst_probe": check.worst_probe(),
        "steps": check.trajectory.times.len() - 1,
    });
    Ok((Outcome::Success, out))
}
