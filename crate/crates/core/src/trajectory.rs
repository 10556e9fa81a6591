use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::ModelParams;
use crate::spectral::{
    forward_transform, read_f64s, read_header, write_header, Grid, RealField, SpectralField,
};

/// Provenance attached to a computed trajectory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub solver: String,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    /// Set by the marching solver when its blow-up guard fired.
    pub blowup_suspected_at: Option<f64>,
}

/// A discrete mild solution: density frames on a strictly increasing time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    grid: Grid,
    params: ModelParams,
    times: Vec<f64>,
    frames: Vec<RealField>,
    chemical: Option<Vec<RealField>>,
    pub meta: TrajectoryMeta,
}

pub(crate) fn check_times(times: &[f64]) -> Result<()> {
    match times.first() {
        None => return Err(Error::InvalidArgument("time grid is empty".into())),
        Some(&t0) if t0 != 0.0 => {
            return Err(Error::InvalidArgument(format!(
                "time grid must start at 0, got {t0}"
            )))
        }
        _ => {}
    }
    if let Some(w) = times
        .windows(2)
        .find(|w| !(w[1] > w[0]) || !w[1].is_finite())
    {
        return Err(Error::InvalidArgument(format!(
            "time grid must be strictly increasing ({} then {})",
            w[0], w[1]
        )));
    }
    Ok(())
}

impl Trajectory {
    pub fn new(
        params: ModelParams,
        times: Vec<f64>,
        frames: Vec<RealField>,
        meta: TrajectoryMeta,
    ) -> Result<Self> {
        check_times(&times)?;
        if frames.len() != times.len() {
            return Err(Error::Mismatch(format!(
                "{} frames for {} times",
                frames.len(),
                times.len()
            )));
        }
        let grid = *frames[0].grid();
        if frames.iter().any(|f| *f.grid() != grid) {
            return Err(Error::Mismatch("frames live on different grids".into()));
        }
        let frames = frames
            .into_iter()
            .zip(&times)
            .map(|(f, &t)| f.with_time(t))
            .collect();
        Ok(Self {
            grid,
            params,
            times,
            frames,
            chemical: None,
            meta,
        })
    }

    pub fn with_chemical(mut self, chemical: Vec<RealField>) -> Result<Self> {
        if chemical.len() != self.times.len() {
            return Err(Error::Mismatch(
                "chemical frame count differs from time count".into(),
            ));
        }
        self.chemical = Some(chemical);
        Ok(self)
    }

    /// The trajectory `t -> e^{t Delta} u0` sampled on `times`.
    pub fn heat_flow(u0: &RealField, params: ModelParams, times: &[f64]) -> Result<Self> {
        check_times(times)?;
        let spec = forward_transform(u0);
        let frames = times
            .iter()
            .map(|&t| {
                crate::operators::heat_propagate(&spec.clone().with_time(0.0), t)
                    .map(|s| crate::spectral::inverse_transform(&s))
            })
            .collect::<Result<Vec<_>>>()?;
        let meta = TrajectoryMeta {
            solver: "heat".into(),
            ..Default::default()
        };
        Self::new(params, times.to_vec(), frames, meta)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn frames(&self) -> &[RealField] {
        &self.frames
    }

    pub fn chemical(&self) -> Option<&[RealField]> {
        self.chemical.as_deref()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn initial(&self) -> &RealField {
        &self.frames[0]
    }

    pub fn last(&self) -> &RealField {
        self.frames.last().expect("nonempty")
    }

    pub fn spectra(&self) -> Vec<SpectralField> {
        self.frames.iter().map(forward_transform).collect()
    }

    pub fn masses(&self) -> Vec<f64> {
        let cv = self.grid.cell_volume();
        self.frames
            .iter()
            .map(|f| cv * f.values().iter().sum::<f64>())
            .collect()
    }

    /// Pointwise `self - other` on a shared time grid.
    pub fn difference(&self, other: &Trajectory) -> Result<Trajectory> {
        self.check_compatible(other)?;
        let frames = self
            .frames
            .iter()
            .zip(&other.frames)
            .map(|(a, b)| a.axpy(-1.0, b))
            .collect::<Result<Vec<_>>>()?;
        let meta = TrajectoryMeta {
            solver: "difference".into(),
            ..Default::default()
        };
        Trajectory::new(self.params, self.times.clone(), frames, meta)
    }

    pub fn scaled(&self, a: f64) -> Trajectory {
        let mut out = self.clone();
        out.frames = self.frames.iter().map(|f| f.scaled(a)).collect();
        out.chemical = None;
        out
    }

    pub(crate) fn check_compatible(&self, other: &Trajectory) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::Mismatch(
                "trajectories live on different grids".into(),
            ));
        }
        if self.times != other.times {
            return Err(Error::Mismatch(
                "trajectories use different time grids".into(),
            ));
        }
        Ok(())
    }

    /// Binary layout: frame header (time tag = final time), `u64` frame count,
    /// the time array, then each frame's values, all little-endian.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        write_header(&mut w, &self.grid, *self.times.last().expect("nonempty"))?;
        w.write_all(&(self.times.len() as u64).to_le_bytes())?;
        for t in &self.times {
            w.write_all(&t.to_le_bytes())?;
        }
        for f in &self.frames {
            for v in f.values() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R, params: ModelParams) -> Result<Self> {
        let (grid, _) = read_header(&mut r)?;
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let count = u64::from_le_bytes(b8) as usize;
        let times = read_f64s(&mut r, count)?;
        let frames = times
            .iter()
            .map(|&t| RealField::new(grid, read_f64s(&mut r, grid.len())?, t))
            .collect::<Result<Vec<_>>>()?;
        let meta = TrajectoryMeta {
            solver: "file".into(),
            ..Default::default()
        };
        Self::new(params, times, frames, meta)
    }
}

/// `T (n / n_max)^2` for `n = 0..=n_max`, dense near the origin.
pub fn quadratic_time_grid(t_final: f64, n_max: usize) -> Vec<f64> {
    (0..=n_max)
        .map(|n| t_final * (n as f64 / n_max as f64).powi(2))
        .collect()
}

pub fn uniform_time_grid(t_final: f64, steps: usize) -> Vec<f64> {
    (0..=steps)
        .map(|n| t_final * n as f64 / steps as f64)
        .collect()
}
