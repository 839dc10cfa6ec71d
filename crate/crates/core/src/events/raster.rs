//! Time-binned spike rasters built from event streams.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Event, Polarity, SENSOR_HEIGHT, SENSOR_WIDTH};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RasterError {
    #[error("bin width must be positive")]
    ZeroBinWidth,
    #[error("downsample factor must be positive")]
    ZeroDownsample,
    #[error("window must be positive")]
    ZeroWindow,
    #[error("region of interest {0:?} is empty or exceeds the sensor")]
    BadRoi(Roi),
    #[error("event at {t_us} us lies outside the window [0, {window_us}) us")]
    OutsideWindow { t_us: u64, window_us: u64 },
}

/// How event polarity maps onto channel counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolarityMode {
    /// ON and OFF both add +1.
    #[default]
    Folded,
    /// ON adds +1, OFF adds -1.
    Signed,
}

/// Rectangular crop of the sensor, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub x0: u16,
    pub y0: u16,
    pub width: u16,
    pub height: u16,
}

impl Roi {
    pub const FULL_SENSOR: Roi = Roi {
        x0: 0,
        y0: 0,
        width: SENSOR_WIDTH,
        height: SENSOR_HEIGHT,
    };

    pub fn is_valid(&self) -> bool {
        self.width > 0
            && self.height > 0
            && self.x0 as u32 + self.width as u32 <= SENSOR_WIDTH as u32
            && self.y0 as u32 + self.height as u32 <= SENSOR_HEIGHT as u32
    }

    pub fn contains(&self, x: u16, y: u16) -> bool {
        x >= self.x0 && y >= self.y0 && x - self.x0 < self.width && y - self.y0 < self.height
    }
}

impl Default for Roi {
    fn default() -> Self {
        Roi::FULL_SENSOR
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RasterSpec {
    pub downsample: u16,
    pub bin_width_us: u64,
    pub window_us: u64,
    pub roi: Roi,
    pub polarity: PolarityMode,
}

impl RasterSpec {
    pub fn new(downsample: u16, bin_width_us: u64, window_us: u64) -> Self {
        Self {
            downsample,
            bin_width_us,
            window_us,
            roi: Roi::FULL_SENSOR,
            polarity: PolarityMode::Folded,
        }
    }

    pub fn grid(&self) -> (usize, usize) {
        let ds = self.downsample.max(1) as usize;
        (
            (self.roi.width as usize).div_ceil(ds),
            (self.roi.height as usize).div_ceil(ds),
        )
    }

    pub fn channel_count(&self) -> usize {
        let (c, r) = self.grid();
        c * r
    }

    /// Channel `(col, row)` for a pixel, or `None` outside the ROI.
    pub fn channel_of(&self, x: u16, y: u16) -> Option<(usize, usize)> {
        if !self.roi.contains(x, y) {
            return None;
        }
        let ds = self.downsample as usize;
        Some(((x - self.roi.x0) as usize / ds, (y - self.roi.y0) as usize / ds))
    }

    fn validate(&self) -> Result<(), RasterError> {
        if self.bin_width_us == 0 {
            return Err(RasterError::ZeroBinWidth);
        }
        if self.downsample == 0 {
            return Err(RasterError::ZeroDownsample);
        }
        if self.window_us == 0 {
            return Err(RasterError::ZeroWindow);
        }
        if !self.roi.is_valid() {
            return Err(RasterError::BadRoi(self.roi));
        }
        Ok(())
    }
}

/// Bins x channels count matrix, row-major by bin. Channel index is
/// `row * cols + col`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpikeRaster {
    pub bin_width_us: u64,
    pub cols: usize,
    pub rows: usize,
    bins: usize,
    counts: Vec<i32>,
    /// Events that fell outside the region of interest.
    pub dropped: usize,
}

impl SpikeRaster {
    pub fn zeros(bin_width_us: u64, cols: usize, rows: usize, bins: usize) -> Self {
        Self {
            bin_width_us,
            cols,
            rows,
            bins,
            counts: vec![0; bins * cols * rows],
            dropped: 0,
        }
    }

    /// Builds a raster from a flat bins x channels matrix.
    pub fn from_counts(bin_width_us: u64, cols: usize, rows: usize, counts: Vec<i32>) -> Self {
        let channels = cols * rows;
        assert!(channels > 0 && counts.len().is_multiple_of(channels));
        Self {
            bin_width_us,
            cols,
            rows,
            bins: counts.len() / channels,
            counts,
            dropped: 0,
        }
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn channels(&self) -> usize {
        self.cols * self.rows
    }

    pub fn duration_us(&self) -> u64 {
        self.bins as u64 * self.bin_width_us
    }

    pub fn bin(&self, b: usize) -> &[i32] {
        let n = self.channels();
        &self.counts[b * n..(b + 1) * n]
    }

    pub fn bin_mut(&mut self, b: usize) -> &mut [i32] {
        let n = self.channels();
        &mut self.counts[b * n..(b + 1) * n]
    }

    pub fn count(&self, bin: usize, channel: usize) -> i32 {
        self.counts[bin * self.channels() + channel]
    }

    pub fn counts(&self) -> &[i32] {
        &self.counts
    }

    pub fn total(&self) -> i64 {
        self.counts.iter().map(|&c| c as i64).sum()
    }

    /// Sum of absolute counts; equals the encoded event count in either
    /// polarity mode.
    pub fn total_abs(&self) -> u64 {
        self.counts.iter().map(|&c| c.unsigned_abs() as u64).sum()
    }

    /// Copy of bins `start..end`.
    pub fn slice_bins(&self, start: usize, end: usize) -> SpikeRaster {
        let n = self.channels();
        SpikeRaster {
            bin_width_us: self.bin_width_us,
            cols: self.cols,
            rows: self.rows,
            bins: end - start,
            counts: self.counts[start * n..end * n].to_vec(),
            dropped: 0,
        }
    }

    /// CSV with one row per bin: `bin,t_start_us,c0,c1,...`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin,t_start_us");
        for c in 0..self.channels() {
            out.push_str(&format!(",c{c}"));
        }
        out.push('\n');
        for b in 0..self.bins {
            out.push_str(&format!("{b},{}", b as u64 * self.bin_width_us));
            for v in self.bin(b) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    /// Sparse CSV listing only non-zero cells: `bin,channel,count`.
    pub fn to_sparse_csv(&self) -> String {
        let mut out = String::from("bin,channel,count\n");
        for b in 0..self.bins {
            for (c, &v) in self.bin(b).iter().enumerate() {
                if v != 0 {
                    out.push_str(&format!("{b},{c},{v}\n"));
                }
            }
        }
        out
    }
}

pub fn encode_raster(events: &[Event], spec: &RasterSpec) -> Result<SpikeRaster, RasterError> {
    spec.validate()?;
    let (cols, rows) = spec.grid();
    let bins = spec.window_us.div_ceil(spec.bin_width_us) as usize;
    let mut raster = SpikeRaster::zeros(spec.bin_width_us, cols, rows, bins);
    for e in events {
        if e.t_us >= spec.window_us {
            return Err(RasterError::OutsideWindow {
                t_us: e.t_us,
                window_us: spec.window_us,
            });
        }
        let Some((col, row)) = spec.channel_of(e.x, e.y) else {
            raster.dropped += 1;
            continue;
        };
        let bin = (e.t_us / spec.bin_width_us) as usize;
        let delta = match (spec.polarity, e.polarity) {
            (PolarityMode::Signed, Polarity::Off) => -1,
            _ => 1,
        };
        raster.bin_mut(bin)[row * cols + col] += delta;
    }
    Ok(raster)
}
