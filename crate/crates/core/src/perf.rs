//! Throughput and latency accounting.
//!
//! ```text
//! operational_latency = inference_time / loader_iterations
//! throughput          = macs / operational_latency
//! ```
//!
//! MACs are dense feedforward multiply-accumulates per step, so the closed
//! form in [`count_macs`] matches the network's live counter exactly.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::network::NetworkConfig;

#[derive(Debug, Error, PartialEq)]
pub enum PerfError {
    #[error("step count must be positive")]
    ZeroSteps,
    #[error("loader iterations must be positive")]
    ZeroIterations,
    #[error("inference time must be positive and finite, got {0} s")]
    BadInferenceTime(f64),
    #[error("operational latency must be positive and finite, got {0} s")]
    BadLatency(f64),
    #[error("comparison needs at least one report")]
    NoReports,
    #[error("duplicate report name `{0}`")]
    DuplicateName(String),
}

/// MACs for a chain of fully connected layers over `num_steps` steps.
pub fn count_macs_for_layers(layers: &[usize], num_steps: u64) -> Result<u64, PerfError> {
    if num_steps == 0 {
        return Err(PerfError::ZeroSteps);
    }
    let per_step: u64 = layers.windows(2).map(|w| (w[0] * w[1]) as u64).sum();
    Ok(per_step * num_steps)
}

pub fn count_macs(config: &NetworkConfig, num_steps: u64) -> Result<u64, PerfError> {
    count_macs_for_layers(&[config.n_input, config.n_hidden, config.n_output], num_steps)
}

pub fn operational_latency(inference_time_s: f64, loader_iterations: u64) -> Result<f64, PerfError> {
    if loader_iterations == 0 {
        return Err(PerfError::ZeroIterations);
    }
    if !(inference_time_s > 0.0 && inference_time_s.is_finite()) {
        return Err(PerfError::BadInferenceTime(inference_time_s));
    }
    Ok(inference_time_s / loader_iterations as f64)
}

/// Operations per second.
pub fn throughput(mac_count: f64, operational_latency_s: f64) -> Result<f64, PerfError> {
    if !(operational_latency_s > 0.0 && operational_latency_s.is_finite()) {
        return Err(PerfError::BadLatency(operational_latency_s));
    }
    Ok(mac_count / operational_latency_s)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PerfReport {
    pub mac_count: f64,
    pub inference_time_s: f64,
    pub loader_iterations: u64,
    pub operational_latency_s: f64,
    pub throughput_ops_per_s: f64,
}

impl PerfReport {
    /// `mac_count` is the work of one loader iteration.
    pub fn new(mac_count: f64, inference_time_s: f64, loader_iterations: u64) -> Result<Self, PerfError> {
        let latency = operational_latency(inference_time_s, loader_iterations)?;
        Ok(Self {
            mac_count,
            inference_time_s,
            loader_iterations,
            operational_latency_s: latency,
            throughput_ops_per_s: throughput(mac_count, latency)?,
        })
    }

    /// A row built from a quoted MAC count and per-iteration latency.
    pub fn from_latency(mac_count: f64, latency_s: f64) -> Result<Self, PerfError> {
        Self::new(mac_count, latency_s, 1)
    }
}

/// Aligned text table and CSV with columns
/// `name, MACs (G), latency (ms), throughput (GOP/s)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Comparison {
    pub text: String,
    pub csv: String,
}

pub fn emit_comparison(reports: &[(String, PerfReport)]) -> Result<Comparison, PerfError> {
    if reports.is_empty() {
        return Err(PerfError::NoReports);
    }
    let mut seen = HashSet::new();
    for (name, _) in reports {
        if !seen.insert(name.as_str()) {
            return Err(PerfError::DuplicateName(name.clone()));
        }
    }

    let rows: Vec<[String; 4]> = reports
        .iter()
        .map(|(name, r)| {
            [
                name.clone(),
                format!("{:.3}", r.mac_count / 1e9),
                format!("{:.3}", r.operational_latency_s * 1e3),
                format!("{:.1}", r.throughput_ops_per_s / 1e9),
            ]
        })
        .collect();
    let header = ["name", "MACs (G)", "latency (ms)", "throughput (GOP/s)"];

    let mut csv = String::from("name,macs_g,latency_ms,throughput_gops\n");
    for row in &rows {
        csv.push_str(&row.join(","));
        csv.push('\n');
    }

    let mut widths = header.map(str::len);
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut text = String::new();
    let line = |cells: [&str; 4], text: &mut String| {
        let _ = writeln!(
            text,
            "{:<w0$}  {:>w1$}  {:>w2$}  {:>w3$}",
            cells[0],
            cells[1],
            cells[2],
            cells[3],
            w0 = widths[0],
            w1 = widths[1],
            w2 = widths[2],
            w3 = widths[3]
        );
    };
    line(header, &mut text);
    for row in &rows {
        line([&row[0], &row[1], &row[2], &row[3]], &mut text);
    }
    Ok(Comparison { text, csv })
}
