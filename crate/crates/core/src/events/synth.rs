//! Seeded synthetic event workload: per sample window, event activity is
//! concentrated in one quadrant of the region of interest.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::{Event, Polarity, Roi};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Quadrant {
    TopLeft = 0,
    TopRight = 1,
    BottomLeft = 2,
    BottomRight = 3,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [
        Quadrant::TopLeft,
        Quadrant::TopRight,
        Quadrant::BottomLeft,
        Quadrant::BottomRight,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Pixel rectangle of this quadrant inside `roi`.
    pub fn rect(self, roi: &Roi) -> Roi {
        let hw = roi.width / 2;
        let hh = roi.height / 2;
        let (right, bottom) = match self {
            Quadrant::TopLeft => (false, false),
            Quadrant::TopRight => (true, false),
            Quadrant::BottomLeft => (false, true),
            Quadrant::BottomRight => (true, true),
        };
        Roi {
            x0: roi.x0 + if right { hw } else { 0 },
            y0: roi.y0 + if bottom { hh } else { 0 },
            width: if right { roi.width - hw } else { hw },
            height: if bottom { roi.height - hh } else { hh },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadrantWorkload {
    pub seed: u64,
    pub duration_us: u64,
    pub sample_us: u64,
    /// Per-pixel event rate inside the active quadrant.
    pub active_rate_hz: f64,
    /// Per-pixel event rate elsewhere in the ROI.
    pub background_rate_hz: f64,
    pub roi: Roi,
}

/// Generated events plus one label per sample window.
#[derive(Clone, Debug, PartialEq)]
pub struct Workload {
    pub events: Vec<Event>,
    pub labels: Vec<Quadrant>,
    pub sample_us: u64,
    pub duration_us: u64,
}

impl QuadrantWorkload {
    pub fn generate(&self) -> Workload {
        assert!(self.sample_us > 0 && self.duration_us > 0);
        assert!(self.roi.is_valid() && self.roi.width >= 2 && self.roi.height >= 2);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let samples = self.duration_us.div_ceil(self.sample_us);
        let roi_pixels = self.roi.width as f64 * self.roi.height as f64;

        let mut events = Vec::new();
        let mut labels = Vec::with_capacity(samples as usize);
        for s in 0..samples {
            let quadrant = Quadrant::ALL[rng.random_range(0..4)];
            labels.push(quadrant);
            let active = quadrant.rect(&self.roi);
            let active_pixels = active.width as f64 * active.height as f64;
            let active_rate = active_pixels * self.active_rate_hz;
            let background_rate = (roi_pixels - active_pixels) * self.background_rate_hz;
            let total_rate_per_us = (active_rate + background_rate) * 1e-6;
            if total_rate_per_us <= 0.0 {
                continue;
            }
            let p_active = active_rate / (active_rate + background_rate);
            let gap = Exp::new(total_rate_per_us).expect("positive rate");

            let start = s * self.sample_us;
            let end = ((s + 1) * self.sample_us).min(self.duration_us);
            let mut t = start as f64;
            loop {
                t += gap.sample(&mut rng);
                if t >= end as f64 {
                    break;
                }
                let (x, y) = if rng.random_bool(p_active) {
                    (
                        active.x0 + rng.random_range(0..active.width),
                        active.y0 + rng.random_range(0..active.height),
                    )
                } else {
                    // rejection-sample a background pixel
                    loop {
                        let x = self.roi.x0 + rng.random_range(0..self.roi.width);
                        let y = self.roi.y0 + rng.random_range(0..self.roi.height);
                        if !active.contains(x, y) {
                            break (x, y);
                        }
                    }
                };
                let polarity = Polarity::from_bit(rng.random::<bool>() as u64);
                events.push(Event {
                    t_us: (t as u64).min(end - 1),
                    x,
                    y,
                    polarity,
                });
            }
        }
        Workload {
            events,
            labels,
            sample_us: self.sample_us,
            duration_us: self.duration_us,
        }
    }
}
