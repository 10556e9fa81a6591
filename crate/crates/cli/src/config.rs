//! Flat `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use kslab_core::solver::MarchScheme;
use kslab_core::{Grid, Topology};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("kind required")]
    MissingKind,
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Simulate,
    TauSweep,
    Certificate,
    BlowupSim,
    Norms,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::TauSweep => "tau-sweep",
            ExperimentKind::Certificate => "certificate",
            ExperimentKind::BlowupSim => "blowup-sim",
            ExperimentKind::Norms => "norms",
        }
    }

    fn is_spectral(self) -> bool {
        matches!(
            self,
            ExperimentKind::Certificate | ExperimentKind::BlowupSim
        )
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "simulate" => ExperimentKind::Simulate,
            "tau-sweep" => ExperimentKind::TauSweep,
            "certificate" => ExperimentKind::Certificate,
            "blowup-sim" => ExperimentKind::BlowupSim,
            "norms" => ExperimentKind::Norms,
            other => return Err(format!("unknown experiment kind {other:?}")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Datum {
    Gaussian {
        mass: f64,
        width: f64,
        center: [f64; 2],
    },
    DiracCell {
        mass: f64,
    },
    Annulus {
        amplitude: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    /// Exponential time marching.
    March,
    /// Whole-trajectory fixed point.
    Picard,
    /// Free heat flow of the datum.
    Heat,
}

impl SolverKind {
    fn as_str(self) -> &'static str {
        match self {
            SolverKind::March => "march",
            SolverKind::Picard => "picard",
            SolverKind::Heat => "heat",
        }
    }
}

/// A validated experiment description.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub dim: usize,
    pub side: f64,
    pub points: usize,
    pub tau: f64,
    pub epsilon_e: f64,
    pub datum: Datum,
    pub solver: SolverKind,
    pub tol: f64,
    pub max_iter: usize,
    pub step: f64,
    pub t_final: f64,
    pub intervals: usize,
    pub scheme: MarchScheme,
    pub ceiling: f64,
    pub store_every: usize,
    pub taus: Vec<f64>,
    pub topologies: Vec<Topology>,
    pub r: f64,
    pub alpha: f64,
    pub delta: f64,
    pub k_max: usize,
    pub verify: bool,
    pub probe_times: Vec<f64>,
    pub probe_modes: usize,
    pub out: Option<String>,
}

const KEYS: &[&str] = &[
    "kind",
    "dim",
    "L",
    "N",
    "tau",
    "epsilon_e",
    "datum",
    "mass",
    "width",
    "center",
    "A",
    "solver",
    "tol",
    "max_iter",
    "step",
    "T",
    "intervals",
    "scheme",
    "ceiling",
    "store_every",
    "taus",
    "topologies",
    "r",
    "alpha",
    "delta",
    "K",
    "verify",
    "probe_times",
    "probe_modes",
    "out",
];

#[derive(Default)]
struct Raw {
    values: BTreeMap<&'static str, (usize, String)>,
}

fn line_err(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError::Line {
        line,
        message: message.into(),
    }
}

impl Raw {
    fn line(&self, key: &str) -> usize {
        self.values.get(key).map(|v| v.0).unwrap_or(0)
    }

    fn parse<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError> {
        match self.values.get(key) {
            None => Ok(default),
            Some((line, text)) => text
                .parse()
                .map_err(|_| line_err(*line, format!("malformed value {text:?} for {key}"))),
        }
    }

    fn real(
        &self,
        key: &str,
        default: f64,
        ok: impl Fn(f64) -> bool,
        range: &str,
    ) -> Result<f64, ConfigError> {
        let v: f64 = self.parse(key, default)?;
        if !v.is_finite() || !ok(v) {
            return Err(line_err(
                self.line(key),
                format!("{key} = {v} out of range ({range})"),
            ));
        }
        Ok(v)
    }

    fn count(&self, key: &str, default: usize, min: usize) -> Result<usize, ConfigError> {
        let v: usize = self.parse(key, default)?;
        if v < min {
            return Err(line_err(
                self.line(key),
                format!("{key} = {v} out of range (>= {min})"),
            ));
        }
        Ok(v)
    }

    fn list<T: FromStr>(&self, key: &str, default: Vec<T>) -> Result<Vec<T>, ConfigError> {
        match self.values.get(key) {
            None => Ok(default),
            Some((line, text)) => text
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| line_err(*line, format!("malformed entry {s:?} in {key}")))
                })
                .collect(),
        }
    }

    fn has(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }
}

/// Parses a configuration that must name its own `kind`.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    parse_config_with(text, None)
}

/// Parses a configuration; `kind` supplies the experiment kind when the
/// text has none and must agree with it otherwise.
pub fn parse_config_with(
    text: &str,
    kind: Option<ExperimentKind>,
) -> Result<ExperimentConfig, ConfigError> {
    let mut raw = Raw::default();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| line_err(n, format!("expected key = value, got {content:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        let key = *KEYS
            .iter()
            .find(|k| **k == key)
            .ok_or_else(|| line_err(n, format!("unknown key {key:?}")))?;
        if value.is_empty() {
            return Err(line_err(n, format!("missing value for {key}")));
        }
        if raw.values.insert(key, (n, value.to_string())).is_some() {
            return Err(line_err(n, format!("duplicate key {key}")));
        }
        // range checks that do not depend on other keys fail at their own line
        match key {
            "tau" | "delta" | "A" | "mass" | "width" | "step" | "T" | "epsilon_e" | "tol" | "L"
            | "r" | "alpha" | "ceiling" => {
                let v: f64 = raw.parse(key, 0.0)?;
                let ok = match key {
                    "tau" => v >= 0.0,
                    "mass" => v.is_finite(),
                    "r" => v > 1.0,
                    "alpha" => v > 1.0 && v < 2.0,
                    "ceiling" => v > 1.0,
                    _ => v > 0.0,
                };
                if !ok || !v.is_finite() {
                    return Err(line_err(n, format!("{key} = {v} out of range")));
                }
            }
            _ => {}
        }
    }

    let stated: Option<ExperimentKind> = match raw.values.get("kind") {
        None => None,
        Some((line, text)) => Some(text.parse().map_err(|e: String| line_err(*line, e))?),
    };
    let kind = match (stated, kind) {
        (Some(a), Some(b)) if a != b => {
            return Err(line_err(
                raw.line("kind"),
                format!("config is for {a} but {b} was requested"),
            ))
        }
        (Some(a), _) | (None, Some(a)) => a,
        (None, None) => return Err(ConfigError::MissingKind),
    };
    build(kind, &raw)
}

fn build(kind: ExperimentKind, raw: &Raw) -> Result<ExperimentConfig, ConfigError> {
    let spectral = kind.is_spectral();
    let dim = raw.count("dim", if spectral { 1 } else { 2 }, 1)?;
    if dim > 2 {
        return Err(line_err(
            raw.line("dim"),
            format!("dim = {dim} out of range (1 or 2)"),
        ));
    }
    let side = raw.real(
        "L",
        if spectral { 62.0 * PI } else { 32.0 },
        |v| v > 0.0,
        "> 0",
    )?;
    let points = raw.count("N", if spectral { 512 } else { 128 }, 4)?;
    Grid::new(dim, side, points)
        .map_err(|e| line_err(raw.line("N").max(raw.line("L")), e.to_string()))?;

    let tau = raw.real(
        "tau",
        if spectral { 1.0 } else { 0.0 },
        |v| v >= 0.0,
        ">= 0",
    )?;
    let amplitude = raw.real("A", 256.0, |v| v > 0.0, "> 0")?;
    let datum_name: String = raw.parse(
        "datum",
        if spectral {
            "annulus".into()
        } else {
            "gaussian".into()
        },
    )?;
    let datum = match datum_name.as_str() {
        "gaussian" => {
            let center: Vec<f64> = raw.list("center", vec![0.0, 0.0])?;
            if center.len() != 2 || center.iter().any(|c| !c.is_finite()) {
                return Err(line_err(
                    raw.line("center"),
                    "center needs two finite coordinates",
                ));
            }
            Datum::Gaussian {
                mass: raw.real("mass", PI / 10.0, |_| true, "finite")?,
                width: raw.real("width", 1.0, |v| v > 0.0, "> 0")?,
                center: [center[0], center[1]],
            }
        }
        "dirac-cell" => Datum::DiracCell {
            mass: raw.real("mass", 1.0, |_| true, "finite")?,
        },
        "annulus" => Datum::Annulus { amplitude },
        other => {
            return Err(line_err(
                raw.line("datum"),
                format!("unknown datum {other:?}"),
            ))
        }
    };
    if spectral != matches!(datum, Datum::Annulus { .. }) {
        return Err(line_err(
            raw.line("datum"),
            format!(
                "{kind} needs {} datum",
                if spectral {
                    "the annulus"
                } else {
                    "a physical-space"
                }
            ),
        ));
    }

    let solver = match raw.parse::<String>("solver", "march".into())?.as_str() {
        "march" => SolverKind::March,
        "picard" => SolverKind::Picard,
        "heat" => SolverKind::Heat,
        other => {
            return Err(line_err(
                raw.line("solver"),
                format!("unknown solver {other:?}"),
            ))
        }
    };
    let scheme = match raw.parse::<String>("scheme", "etd2".into())?.as_str() {
        "etd2" => MarchScheme::Etd2,
        "euler" => MarchScheme::ExponentialEuler,
        other => {
            return Err(line_err(
                raw.line("scheme"),
                format!("unknown scheme {other:?}"),
            ))
        }
    };
    let step = raw.real(
        "step",
        if spectral { 1.0 / 2048.0 } else { 1.0 / 256.0 },
        |v| v > 0.0,
        "> 0",
    )?;
    let t_final = raw.real("T", 1.0, |v| v > 0.0, "> 0")?;
    if !spectral && t_final < step {
        return Err(line_err(
            raw.line("T"),
            format!("T = {t_final} shorter than step = {step}"),
        ));
    }

    let taus: Vec<f64> = raw.list("taus", vec![1e-1, 3e-2, 1e-2, 3e-3, 1e-3])?;
    if let Some(t) = taus.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
        return Err(line_err(
            raw.line("taus"),
            format!("tau value {t} out of range (>= 0)"),
        ));
    }
    let mut sorted = taus.clone();
    sorted.sort_by(f64::total_cmp);
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(line_err(raw.line("taus"), "tau values must be distinct"));
    }
    let topologies: Vec<Topology> = raw.list("topologies", Topology::ALL.to_vec())?;

    let delta = raw.real("delta", 1.0, |v| v > 0.0, "> 0")?;
    let k_max = raw.count("K", 3, 1)?;
    if k_max > 40 {
        return Err(line_err(
            raw.line("K"),
            format!("K = {k_max} out of range (<= 40)"),
        ));
    }
    let probe_times: Vec<f64> = raw.list("probe_times", vec![0.25, 0.5, 0.75])?;
    if probe_times.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(line_err(raw.line("probe_times"), "probe times must be > 0"));
    }

    let cfg = ExperimentConfig {
        kind,
        dim,
        side,
        points,
        tau,
        epsilon_e: raw.real("epsilon_e", 0.1, |v| v > 0.0, "> 0")?,
        datum,
        solver,
        tol: raw.real("tol", 1e-13, |v| v > 0.0, "> 0")?,
        max_iter: raw.count("max_iter", 60, 1)?,
        step,
        t_final,
        intervals: raw.count("intervals", 64, 1)?,
        scheme,
        ceiling: raw.real("ceiling", 1e4, |v| v > 1.0, "> 1")?,
        store_every: raw.count("store_every", 1, 1)?,
        taus,
        topologies,
        r: raw.real("r", 1.5, |v| v > 1.0, "> 1")?,
        alpha: raw.real("alpha", 1.5, |v| v > 1.0 && v < 2.0, "in (1, 2)")?,
        delta,
        k_max,
        verify: kind == ExperimentKind::BlowupSim || raw.parse("verify", false)?,
        probe_times,
        probe_modes: raw.count("probe_modes", 10, 1)?,
        out: raw.has("out").then(|| raw.values["out"].1.clone()),
    };
    if spectral {
        if !(tau > 0.0) {
            return Err(line_err(raw.line("tau"), format!("{kind} needs tau > 0")));
        }
        if 3.0 * delta * tau < 1.0 {
            return Err(ConfigError::Invalid(format!(
                "{kind} needs 3 delta tau >= 1, got {}",
                3.0 * delta * tau
            )));
        }
    }
    Ok(cfg)
}

fn join(v: &[f64]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

impl ExperimentConfig {
    pub fn grid(&self) -> Grid {
        Grid::new(self.dim, self.side, self.points).expect("validated grid")
    }

    /// Canonical `key = value` listing; parsing it gives back `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("kind", self.kind.to_string());
        kv("dim", self.dim.to_string());
        kv("L", self.side.to_string());
        kv("N", self.points.to_string());
        kv("tau", self.tau.to_string());
        kv("epsilon_e", self.epsilon_e.to_string());
        match &self.datum {
            Datum::Gaussian {
                mass,
                width,
                center,
            } => {
                kv("datum", "gaussian".into());
                kv("mass", mass.to_string());
                kv("width", width.to_string());
                kv("center", join(center));
            }
            Datum::DiracCell { mass } => {
                kv("datum", "dirac-cell".into());
                kv("mass", mass.to_string());
            }
            Datum::Annulus { .. } => kv("datum", "annulus".into()),
        }
        if let Datum::Annulus { amplitude } = self.datum {
            kv("A", amplitude.to_string());
        }
        kv("solver", self.solver.as_str().into());
        kv("tol", self.tol.to_string());
        kv("max_iter", self.max_iter.to_string());
        kv("step", self.step.to_string());
        kv("T", self.t_final.to_string());
        kv("intervals", self.intervals.to_string());
        kv(
            "scheme",
            match self.scheme {
                MarchScheme::Etd2 => "etd2".into(),
                MarchScheme::ExponentialEuler => "euler".into(),
            },
        );
        kv("ceiling", self.ceiling.to_string());
        kv("store_every", self.store_every.to_string());
        kv("taus", join(&self.taus));
        kv(
            "topologies",
            self.topologies
                .iter()
                .map(|t| t.to_string())
                .collect::<Vec<_>>()
                .join(", "),
        );
        kv("r", self.r.to_string());
        kv("alpha", self.alpha.to_string());
        kv("delta", self.delta.to_string());
        kv("K", self.k_max.to_string());
        kv("verify", self.verify.to_string());
        kv("probe_times", join(&self.probe_times));
        kv("probe_modes", self.probe_modes.to_string());
        if let Some(out) = &self.out {
            kv("out", out.clone());
        }
        s
    }

    /// The canonical listing as `#` comment lines for CSV headers.
    pub fn echo_comment(&self) -> String {
        self.to_text().lines().map(|l| format!("# {l}\n")).collect()
    }
}
