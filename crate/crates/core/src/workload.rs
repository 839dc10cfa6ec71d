//! The reference experiment: a 512-128-40 network driven by the synthetic
//! quadrant workload over a 160x80 crop of the sensor, downsampled 5x to a
//! 32x16 channel grid.

use serde::{Deserialize, Serialize};

use crate::astro::AstroParams;
use crate::events::{
    encode_raster, PolarityMode, QuadrantWorkload, RasterError, RasterSpec, Roi, SpikeRaster, Workload,
};
use crate::network::NetworkConfig;
use crate::sim::SimConfig;

pub const REFERENCE_ROI: Roi = Roi {
    x0: 40,
    y0: 50,
    width: 160,
    height: 80,
};
pub const REFERENCE_DOWNSAMPLE: u16 = 5;
/// Horizon of the reference fault campaign.
pub const REFERENCE_DURATION_MS: f64 = 30_000.0;
pub const REFERENCE_SEED: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub events: QuadrantWorkload,
    pub raster: RasterSpec,
}

impl WorkloadSpec {
    /// Sparse quadrant activity: each input event recruits a small volley of
    /// hidden spikes. Without astrocytes the hidden layer idles at a few Hz
    /// and the output integrates those volleys near threshold, so every
    /// hidden neuron matters; with astrocytes the hidden layer is driven to
    /// its target rate and the output fires robustly on each volley.
    pub fn reference(seed: u64, duration_ms: f64) -> Self {
        let duration_us = (duration_ms * 1000.0).round() as u64;
        Self {
            events: QuadrantWorkload {
                seed,
                duration_us,
                sample_us: 100_000,
                active_rate_hz: 0.03,
                background_rate_hz: 0.0,
                roi: REFERENCE_ROI,
            },
            raster: RasterSpec {
                downsample: REFERENCE_DOWNSAMPLE,
                bin_width_us: 1000,
                window_us: duration_us,
                roi: REFERENCE_ROI,
                polarity: PolarityMode::Folded,
            },
        }
    }

    pub fn build(&self) -> Result<(Workload, SpikeRaster), RasterError> {
        let workload = self.events.generate();
        let raster = encode_raster(&workload.events, &self.raster)?;
        Ok((workload, raster))
    }
}

pub fn reference_config(seed: u64) -> SimConfig {
    let mut network = NetworkConfig::reference(seed);
    network.init.input_scale = 0.4;
    network.init.output_scale = 0.3;
    SimConfig {
        network,
        astro: AstroParams::default(),
    }
}
