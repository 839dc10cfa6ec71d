//! Homeostatic astrocyte units.
//!
//! Each unit watches a contiguous group of hidden neurons. At the end of an
//! astrocytic window it reads their firing rates and rescales every afferent
//! (input -> hidden) weight of each monitored neuron by
//!
//! ```text
//! factor_i = 1 + eta * (r_target - rate_i) / r_target
//! w[:, i]  = clip(w[:, i] * factor_i, w_min, w_max)
//! ```
//!
//! so silent neurons are pushed up by at most `1 + eta` per window and
//! overfiring ones are pushed down. The hidden -> output matrix is left to
//! the readout.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{SynapseMatrix, WindowResult};

#[derive(Debug, Error, PartialEq)]
pub enum AstroError {
    #[error("group size must be at least 1")]
    ZeroGroupSize,
    #[error("target rate must be positive, got {0}")]
    BadTargetRate(f64),
    #[error("gain must be non-negative, got {0}")]
    BadGain(f64),
    #[error("window must be positive, got {0} ms")]
    BadWindow(f64),
    #[error("low-pass coefficient must lie in [0, 1], got {0}")]
    BadLambda(f64),
    #[error("rates cover {got} neurons but unit monitors up to index {needed}")]
    RatesTooShort { needed: usize, got: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AstroParams {
    pub enabled: bool,
    /// Gain.
    pub eta: f64,
    pub target_rate_hz: f64,
    pub window_ms: f64,
    pub group_size: usize,
    /// Low-pass coefficient for the activation trace.
    pub lambda: f64,
}

impl Default for AstroParams {
    fn default() -> Self {
        Self {
            enabled: true,
            eta: 0.25,
            target_rate_hz: 20.0,
            window_ms: 100.0,
            group_size: 16,
            lambda: 0.1,
        }
    }
}

impl AstroParams {
    pub fn validate(&self) -> Result<(), AstroError> {
        if self.group_size == 0 {
            return Err(AstroError::ZeroGroupSize);
        }
        if !(self.target_rate_hz > 0.0 && self.target_rate_hz.is_finite()) {
            return Err(AstroError::BadTargetRate(self.target_rate_hz));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(AstroError::BadGain(self.eta));
        }
        if !(self.window_ms > 0.0 && self.window_ms.is_finite()) {
            return Err(AstroError::BadWindow(self.window_ms));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(AstroError::BadLambda(self.lambda));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AstrocyteUnit {
    pub id: usize,
    pub monitored: Range<usize>,
    pub target_rate_hz: f64,
    pub gain: f64,
    pub window_ms: f64,
    /// Low-pass trace of the group's mean rate (Hz).
    pub activation: f64,
}

/// Outcome of one unit's update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitUpdate {
    pub mean_rate_hz: f64,
    pub mean_scale: f64,
}

/// Rescales the afferent weights of every neuron `unit` monitors.
pub fn astro_update(unit: &AstrocyteUnit, rates: &[f64], w: &mut SynapseMatrix) -> Result<UnitUpdate, AstroError> {
    if !(unit.target_rate_hz > 0.0) {
        return Err(AstroError::BadTargetRate(unit.target_rate_hz));
    }
    if rates.len() < unit.monitored.end {
        return Err(AstroError::RatesTooShort {
            needed: unit.monitored.end,
            got: rates.len(),
        });
    }
    let mut scale_sum = 0.0;
    let mut rate_sum = 0.0;
    for i in unit.monitored.clone() {
        let factor = 1.0 + unit.gain * (unit.target_rate_hz - rates[i]) / unit.target_rate_hz;
        if factor != 1.0 {
            w.scale_afferent(i, factor);
        }
        scale_sum += factor;
        rate_sum += rates[i];
    }
    let n = unit.monitored.len().max(1) as f64;
    Ok(UnitUpdate {
        mean_rate_hz: rate_sum / n,
        mean_scale: scale_sum / n,
    })
}

/// One row of per-window astrocyte telemetry.
#[derive(Clone, Debug, PartialEq)]
pub struct AstroTelemetry {
    pub window: usize,
    pub unit: usize,
    pub mean_rate_hz: f64,
    pub activation: f64,
    pub mean_scale: f64,
}

impl AstroTelemetry {
    pub fn csv_header() -> &'static str {
        "window,unit,mean_rate_hz,activation,mean_scale"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.9}",
            self.window, self.unit, self.mean_rate_hz, self.activation, self.mean_scale
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AstroPopulation {
    pub units: Vec<AstrocyteUnit>,
    /// Hidden neuron index -> unit index.
    pub coverage: Vec<usize>,
    pub lambda: f64,
}

/// Partitions `n_hidden` neurons into contiguous groups of `params.group_size`
/// (the last group may be smaller).
pub fn attach_astrocytes(n_hidden: usize, params: &AstroParams) -> Result<AstroPopulation, AstroError> {
    params.validate()?;
    let units: Vec<AstrocyteUnit> = (0..n_hidden)
        .step_by(params.group_size)
        .enumerate()
        .map(|(id, start)| AstrocyteUnit {
            id,
            monitored: start..(start + params.group_size).min(n_hidden),
            target_rate_hz: params.target_rate_hz,
            gain: params.eta,
            window_ms: params.window_ms,
            activation: 0.0,
        })
        .collect();
    let mut coverage = vec![0; n_hidden];
    for u in &units {
        coverage[u.monitored.clone()].fill(u.id);
    }
    Ok(AstroPopulation {
        units,
        coverage,
        lambda: params.lambda,
    })
}

impl AstroPopulation {
    /// Reads per-neuron rates from a window and advances each unit's
    /// activation trace: `A <- (1 - lambda) A + lambda * mean(group rates)`.
    pub fn observe_rates(&mut self, window: &WindowResult) -> Result<Vec<f64>, AstroError> {
        if !(window.duration_ms > 0.0) {
            return Err(AstroError::BadWindow(window.duration_ms));
        }
        let seconds = window.duration_ms / 1000.0;
        let rates: Vec<f64> = window.hidden_counts.iter().map(|&c| c as f64 / seconds).collect();
        if rates.len() < self.coverage.len() {
            return Err(AstroError::RatesTooShort {
                needed: self.coverage.len(),
                got: rates.len(),
            });
        }
        for u in &mut self.units {
            let mean = rates[u.monitored.clone()].iter().sum::<f64>() / u.monitored.len() as f64;
            u.activation = (1.0 - self.lambda) * u.activation + self.lambda * mean;
        }
        Ok(rates)
    }

    /// Applies one round of updates to `w` and returns per-unit results.
    pub fn update_all(&self, rates: &[f64], w: &mut SynapseMatrix) -> Result<Vec<UnitUpdate>, AstroError> {
        self.units.iter().map(|u| astro_update(u, rates, w)).collect()
    }

    /// Pushes swappable parameters into every unit. Group layout is fixed.
    pub fn retune(&mut self, params: &AstroParams) {
        self.lambda = params.lambda;
        for u in &mut self.units {
            u.gain = params.eta;
            u.target_rate_hz = params.target_rate_hz;
            u.window_ms = params.window_ms;
        }
    }
}
