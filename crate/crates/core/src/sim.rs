//! Simulation driver: steps a [`Network`] over a raster, closes astrocytic
//! windows, applies astrocyte updates and scheduled faults, and records
//! everything needed for reports.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::astro::{attach_astrocytes, AstroError, AstroParams, AstroPopulation, AstroTelemetry};
use crate::events::SpikeRaster;
use crate::faults::{self, FaultSpec};
use crate::network::{Layer, Network, NetworkConfig, NetworkError, NeuronParams, Projection, StepSpikes, WindowResult};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Astro(#[from] AstroError),
    #[error("astrocyte group size is fixed for the lifetime of a run")]
    GroupSizeFixed,
    #[error("astrocyte window of {window_ms} ms is shorter than one step of {dt_ms} ms")]
    WindowTooShort { window_ms: f64, dt_ms: f64 },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub network: NetworkConfig,
    pub astro: AstroParams,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.network.validate()?;
        self.astro.validate()?;
        self.live().window_steps(self.network.dt_ms)?;
        Ok(())
    }

    pub fn live(&self) -> LiveParams {
        LiveParams {
            astro: self.astro,
            hidden: self.network.hidden,
            output: self.network.output,
        }
    }

    /// This config with its swappable parameters replaced by `live`.
    pub fn with_live(&self, live: &LiveParams) -> Self {
        let mut c = self.clone();
        c.astro = live.astro;
        c.network.hidden = live.hidden;
        c.network.output = live.output;
        c
    }

    pub fn with_astro_enabled(&self, enabled: bool) -> Self {
        let mut c = self.clone();
        c.astro.enabled = enabled;
        c
    }
}

/// Parameters that may change while a simulation runs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiveParams {
    pub astro: AstroParams,
    pub hidden: NeuronParams,
    pub output: NeuronParams,
}

impl LiveParams {
    /// Canonical `key=value` lines, sorted by key.
    pub fn canonical(&self) -> String {
        let a = &self.astro;
        let mut lines = vec![
            format!("astro.enabled={}", a.enabled),
            format!("astro.eta={:?}", a.eta),
            format!("astro.group_size={}", a.group_size),
            format!("astro.lambda={:?}", a.lambda),
            format!("astro.target_rate_hz={:?}", a.target_rate_hz),
            format!("astro.window_ms={:?}", a.window_ms),
        ];
        for (name, p) in [("hidden", &self.hidden), ("output", &self.output)] {
            lines.push(format!("network.{name}.refractory_steps={}", p.refractory_steps));
            lines.push(format!("network.{name}.tau_mem_ms={:?}", p.tau_mem_ms));
            lines.push(format!("network.{name}.v_reset={:?}", p.v_reset));
            lines.push(format!("network.{name}.v_th={:?}", p.v_th));
        }
        lines.sort();
        lines.join("\n")
    }

    /// Short stable digest of [`LiveParams::canonical`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn window_steps(&self, dt_ms: f64) -> Result<usize, SimError> {
        let steps = (self.astro.window_ms / dt_ms).round();
        if steps < 1.0 {
            return Err(SimError::WindowTooShort {
                window_ms: self.astro.window_ms,
                dt_ms,
            });
        }
        Ok(steps as usize)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowRecord {
    pub index: usize,
    pub start_step: u64,
    pub result: WindowResult,
    /// Digest of the live parameters the whole window ran under.
    pub config_hash: String,
    pub astro_applied: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimRecord {
    pub windows: Vec<WindowRecord>,
    pub telemetry: Vec<AstroTelemetry>,
    /// `(step, output neuron)` for every output spike.
    pub output_spikes: Vec<(u64, u32)>,
    /// Wall time of each astrocyte update round, in nanoseconds.
    pub astro_update_ns: Vec<u64>,
}

impl SimRecord {
    /// Per-output-neuron spike counts over steps `>= from_step`.
    pub fn output_counts_from(&self, n_output: usize, from_step: u64) -> Vec<u64> {
        let mut counts = vec![0; n_output];
        for &(step, k) in &self.output_spikes {
            if step >= from_step {
                counts[k as usize] += 1;
            }
        }
        counts
    }

    pub fn hidden_totals(&self, n_hidden: usize) -> Vec<u64> {
        let mut totals = vec![0; n_hidden];
        for w in &self.windows {
            for (t, &c) in totals.iter_mut().zip(&w.result.hidden_counts) {
                *t += c as u64;
            }
        }
        totals
    }

    pub fn windows_csv(&self) -> String {
        let mut out = format!("{},start_step,config_hash,astro_applied\n", WindowResult::csv_header());
        for w in &self.windows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                w.result.csv_row(w.index),
                w.start_step,
                w.config_hash,
                w.astro_applied
            ));
        }
        out
    }

    pub fn telemetry_csv(&self) -> String {
        let mut out = format!("{}\n", AstroTelemetry::csv_header());
        for t in &self.telemetry {
            out.push_str(&t.csv_row());
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct Simulation {
    network: Network,
    astro: AstroPopulation,
    live: LiveParams,
    live_hash: String,
    window_steps: usize,
    current: WindowResult,
    current_start: u64,
    pending_faults: Vec<(u64, FaultSpec)>,
    record: SimRecord,
    spikes: StepSpikes,
}

impl Simulation {
    pub fn new(config: &SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        let network = Network::instantiate(&config.network)?;
        Self::from_network(network, config.astro)
    }

    /// Wraps an already-instantiated network; its current neuron params are
    /// the initial live params.
    pub fn from_network(network: Network, astro: AstroParams) -> Result<Self, SimError> {
        let cfg = network.config();
        let live = LiveParams {
            astro,
            hidden: cfg.hidden,
            output: cfg.output,
        };
        let population = attach_astrocytes(cfg.n_hidden, &astro)?;
        let window_steps = live.window_steps(cfg.dt_ms)?;
        Ok(Self {
            current: WindowResult::empty(cfg.n_hidden, cfg.n_output),
            network,
            astro: population,
            live_hash: live.hash(),
            live,
            window_steps,
            current_start: 0,
            pending_faults: Vec::new(),
            record: SimRecord::default(),
            spikes: StepSpikes::default(),
        })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn astrocytes(&self) -> &AstroPopulation {
        &self.astro
    }

    pub fn live(&self) -> &LiveParams {
        &self.live
    }

    pub fn record(&self) -> &SimRecord {
        &self.record
    }

    /// Hidden and output spikes of the most recent step.
    pub fn last_spikes(&self) -> &StepSpikes {
        &self.spikes
    }

    pub fn into_record(self) -> SimRecord {
        self.record
    }

    /// Registers a fault to be injected before the first step at or after
    /// `spec.onset_ms`.
    pub fn schedule_fault(&mut self, spec: FaultSpec) -> Result<(), SimError> {
        faults::validate_target(self.network.config(), &spec.fault)?;
        let dt = self.network.config().dt_ms;
        let step = (spec.onset_ms / dt - 1e-9).ceil().max(0.0) as u64;
        let pos = self.pending_faults.partition_point(|(s, _)| *s <= step);
        self.pending_faults.insert(pos, (step, spec));
        Ok(())
    }

    /// Advances one raster bin.
    pub fn step_bin(&mut self, input: &[i32]) -> Result<(), SimError> {
        let now = self.network.step_count();
        while let Some((onset, _)) = self.pending_faults.first() {
            if *onset > now {
                break;
            }
            let (_, spec) = self.pending_faults.remove(0);
            faults::inject(&mut self.network, &spec)?;
        }

        self.network.step_into(input, &mut self.spikes)?;
        self.current.input_spikes += input.iter().map(|k| k.unsigned_abs() as u64).sum::<u64>();
        for &j in &self.spikes.hidden {
            self.current.hidden_counts[j as usize] += 1;
        }
        for &k in &self.spikes.output {
            self.current.output_counts[k as usize] += 1;
            self.record.output_spikes.push((now, k));
        }
        self.current.bins += 1;
        if self.current.bins >= self.window_steps {
            self.end_window()?;
        }
        Ok(())
    }

    /// Closes the current window (if it has any steps) and runs one round
    /// of astrocyte updates when enabled.
    pub fn end_window(&mut self) -> Result<(), SimError> {
        if self.current.bins == 0 {
            return Ok(());
        }
        let cfg = self.network.config();
        let mut result = std::mem::replace(&mut self.current, WindowResult::empty(cfg.n_hidden, cfg.n_output));
        result.finish(cfg.dt_ms);
        let index = self.record.windows.len();

        let applied = self.live.astro.enabled;
        if applied {
            let started = Instant::now();
            let rates = self.astro.observe_rates(&result)?;
            let updates = self
                .astro
                .update_all(&rates, self.network.synapses_mut(Projection::InputHidden))?;
            self.record.astro_update_ns.push(started.elapsed().as_nanos() as u64);
            for (unit, upd) in self.astro.units.iter().zip(updates) {
                self.record.telemetry.push(AstroTelemetry {
                    window: index,
                    unit: unit.id,
                    mean_rate_hz: upd.mean_rate_hz,
                    activation: unit.activation,
                    mean_scale: upd.mean_scale,
                });
            }
        }

        self.record.windows.push(WindowRecord {
            index,
            start_step: self.current_start,
            result,
            config_hash: self.live_hash.clone(),
            astro_applied: applied,
        });
        self.current_start = self.network.step_count();
        Ok(())
    }

    /// Installs new live parameters. Any open window is closed first, so no
    /// window ever mixes two parameter sets.
    pub fn set_live(&mut self, live: LiveParams) -> Result<(), SimError> {
        live.astro.validate()?;
        live.hidden.validate()?;
        live.output.validate()?;
        let window_steps = live.window_steps(self.network.config().dt_ms)?;
        if live.astro.group_size != self.live.astro.group_size {
            return Err(SimError::GroupSizeFixed);
        }
        self.end_window()?;
        self.network.set_neuron_params(Layer::Hidden, live.hidden)?;
        self.network.set_neuron_params(Layer::Output, live.output)?;
        self.astro.retune(&live.astro);
        self.window_steps = window_steps;
        self.live = live;
        self.live_hash = live.hash();
        Ok(())
    }

    /// Checks that `raster` matches the network's input width and time step.
    pub fn check_raster(&self, raster: &SpikeRaster) -> Result<(), SimError> {
        let cfg = self.network.config();
        if raster.channels() != cfg.n_input {
            return Err(NetworkError::DimensionMismatch {
                expected: cfg.n_input,
                got: raster.channels(),
            }
            .into());
        }
        self.network.check_bin_width(raster.bin_width_us)?;
        Ok(())
    }

    /// Steps bins `range` without closing the trailing partial window.
    pub fn run_bins(&mut self, raster: &SpikeRaster, range: std::ops::Range<usize>) -> Result<(), SimError> {
        self.check_raster(raster)?;
        for b in range {
            self.step_bin(raster.bin(b))?;
        }
        Ok(())
    }

    /// Steps the whole raster and closes the final window.
    pub fn run(&mut self, raster: &SpikeRaster) -> Result<(), SimError> {
        self.run_bins(raster, 0..raster.bins())?;
        self.end_window()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::faults::Fault;

    fn small_config(seed: u64) -> SimConfig {
        let mut network = NetworkConfig::with_sizes(16, 8, 4, seed);
        network.init.input_scale = 0.3;
        SimConfig {
            network,
            astro: AstroParams {
                group_size: 4,
                window_ms: 10.0,
                ..Default::default()
            },
        }
    }

    fn raster(bins: usize, channels: usize) -> SpikeRaster {
        let counts = (0..bins * channels).map(|i| ((i * 7919) % 13 == 0) as i32).collect();
        SpikeRaster::from_counts(1000, channels, 1, counts)
    }

    #[test]
    fn windows_close_on_schedule() {
        let mut sim = Simulation::new(&small_config(1)).unwrap();
        sim.run(&raster(35, 16)).unwrap();
        let bins: Vec<usize> = sim.record().windows.iter().map(|w| w.result.bins).collect();
        assert_eq!(bins, [10, 10, 10, 5]);
        assert_eq!(sim.record().telemetry.len(), 4 * 2);
        assert_eq!(sim.record().astro_update_ns.len(), 4);
    }

    #[test]
    fn disabled_astro_matches_bare_network() {
        let cfg = small_config(9).with_astro_enabled(false);
        let r = raster(40, 16);
        let mut sim = Simulation::new(&cfg).unwrap();
        sim.run(&r).unwrap();
        let mut bare = Network::instantiate(&cfg.network).unwrap();
        for (i, w) in sim.record().windows.iter().enumerate() {
            let expect = bare.run_window(&r, i * 10..(i + 1) * 10).unwrap();
            assert_eq!(w.result, expect);
        }
        assert!(sim.record().telemetry.is_empty());
    }

    #[test]
    fn scheduled_silence_takes_effect_at_onset() {
        let mut cfg = small_config(2);
        cfg.network.init.input_scale = 1.0;
        let mut sim = Simulation::new(&cfg).unwrap();
        sim.schedule_fault(FaultSpec {
            fault: Fault::SilenceNeuron {
                layer: Layer::Hidden,
                index: 3,
            },
            onset_ms: 20.0,
        })
        .unwrap();
        let dense = SpikeRaster::from_counts(1000, 16, 1, vec![1; 40 * 16]);
        sim.run(&dense).unwrap();
        let w = &sim.record().windows;
        assert!(w[0].result.hidden_counts[3] > 0);
        assert_eq!(w[2].result.hidden_counts[3], 0);
        assert_eq!(w[3].result.hidden_counts[3], 0);
    }

    #[test]
    fn live_hash_is_stable_and_sensitive() {
        let a = small_config(0).live();
        let mut b = a;
        assert_eq!(a.hash(), b.hash());
        b.astro.eta = 0.5;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn set_live_closes_open_window() {
        let mut sim = Simulation::new(&small_config(3)).unwrap();
        sim.run_bins(&raster(15, 16), 0..15).unwrap();
        let mut live = *sim.live();
        live.astro.eta = 0.5;
        sim.set_live(live).unwrap();
        let w = &sim.record().windows;
        assert_eq!(w.len(), 2);
        assert_eq!(w[1].result.bins, 5);
        assert_ne!(w[1].config_hash, live.hash());
    }
}
