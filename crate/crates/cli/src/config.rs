//! Experiment configuration: a TOML file whose every key is checked against
//! the schema below, filled with defaults, range-validated and hashed.
//!
//! Keys are addressed by their dotted path (`astro.eta`, `dfx.grid.eta`).
//! Relative paths under `[paths]` resolve against the config file's
//! directory.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use astrosnn::astro::AstroParams;
use astrosnn::dfx::{AdaptiveSchedule, GridAxis, SwapValue};
use astrosnn::events::{PolarityMode, QuadrantWorkload, RasterSpec, Roi};
use astrosnn::faults::{Fault, FaultSpec};
use astrosnn::network::{Layer, NetworkConfig, NeuronParams, Projection, WeightInit};
use astrosnn::sim::SimConfig;
use astrosnn::train::{AdamParams, EarlyStopSpec, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file {path} not found or unreadable: {message}")]
    Missing { path: PathBuf, message: String },
    #[error("config file {path} does not parse: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: String, message: String },
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_owned(),
        message: message.into(),
    }
}

fn ensure(ok: bool, key: &str, message: &str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(invalid(key, message))
    }
}

fn positive(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

fn non_negative(v: f64) -> bool {
    v >= 0.0 && v.is_finite()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub seed: u64,
    pub dt_ms: f64,
    pub duration_ms: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            seed: 1,
            dt_ms: 1.0,
            duration_ms: 30_000.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EventsSection {
    pub downsample: u16,
    /// `[x0, y0, width, height]` in sensor pixels.
    pub roi: [u16; 4],
    pub polarity: PolarityMode,
    /// Synthetic workload: label period.
    pub sample_ms: f64,
    /// Synthetic workload: per-pixel rate inside the active quadrant.
    pub active_rate_hz: f64,
    /// Synthetic workload: per-pixel rate elsewhere in the ROI.
    pub background_rate_hz: f64,
}

impl Default for EventsSection {
    fn default() -> Self {
        Self {
            downsample: 5,
            roi: [40, 50, 160, 80],
            polarity: PolarityMode::Folded,
            sample_ms: 100.0,
            active_rate_hz: 0.03,
            background_rate_hz: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeuronSection {
    pub tau_mem_ms: f64,
    pub v_th: f64,
    pub v_reset: f64,
    pub refractory_steps: u32,
}

impl Default for NeuronSection {
    fn default() -> Self {
        let p = NeuronParams::default();
        Self {
            tau_mem_ms: p.tau_mem_ms,
            v_th: p.v_th,
            v_reset: p.v_reset,
            refractory_steps: p.refractory_steps,
        }
    }
}

impl NeuronSection {
    fn params(&self) -> NeuronParams {
        NeuronParams {
            tau_mem_ms: self.tau_mem_ms,
            v_th: self.v_th,
            v_reset: self.v_reset,
            refractory_steps: self.refractory_steps,
        }
    }

    fn validate(&self, prefix: &str) -> Result<(), ConfigError> {
        ensure(
            positive(self.tau_mem_ms),
            &format!("{prefix}.tau_mem_ms"),
            "must be positive",
        )?;
        ensure(positive(self.v_th), &format!("{prefix}.v_th"), "must be positive")?;
        ensure(
            self.v_reset.is_finite() && self.v_reset < self.v_th,
            &format!("{prefix}.v_reset"),
            "must be finite and below v_th",
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub n_input: usize,
    pub n_hidden: usize,
    pub n_output: usize,
    pub w_min: f64,
    pub w_max: f64,
    pub input_scale: f64,
    pub output_scale: f64,
    pub hidden: NeuronSection,
    pub output: NeuronSection,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            n_input: 512,
            n_hidden: 128,
            n_output: 40,
            w_min: 0.0,
            w_max: 1.0,
            input_scale: 0.4,
            output_scale: 0.3,
            hidden: NeuronSection::default(),
            output: NeuronSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AstroSection {
    pub enabled: bool,
    pub eta: f64,
    pub target_rate_hz: f64,
    pub window_ms: f64,
    pub group_size: usize,
    pub lambda: f64,
}

impl Default for AstroSection {
    fn default() -> Self {
        let a = AstroParams::default();
        Self {
            enabled: a.enabled,
            eta: a.eta,
            target_rate_hz: a.target_rate_hz,
            window_ms: a.window_ms,
            group_size: a.group_size,
            lambda: a.lambda,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    SilenceNeuron,
    StuckAtFire,
    SynapseDrop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultSection {
    pub kind: FaultKind,
    /// Layer for neuron faults.
    pub layer: Layer,
    /// Neuron indices for neuron faults; empty means every neuron of `layer`.
    pub targets: Vec<usize>,
    /// Projection for synapse drops.
    pub projection: Projection,
    /// `[pre, post]` pairs for synapse drops.
    pub synapses: Vec<[usize; 2]>,
    pub onset_ms: f64,
    /// Worker threads for the trial pool; 0 uses every available core.
    pub threads: usize,
}

impl Default for FaultSection {
    fn default() -> Self {
        Self {
            kind: FaultKind::SilenceNeuron,
            layer: Layer::Hidden,
            targets: Vec::new(),
            projection: Projection::InputHidden,
            synapses: Vec::new(),
            onset_ms: 0.0,
            threads: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerfSection {
    pub loader_iterations: u64,
    /// Fixed inference time in seconds; when absent the simulation is timed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inference_time_s: Option<f64>,
    /// Append the quoted CPU and FPGA reference rows to the comparison.
    pub reference_rows: bool,
}

impl Default for PerfSection {
    fn default() -> Self {
        Self {
            loader_iterations: 1,
            inference_time_s: None,
            reference_rows: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_rate_hz: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window_ms: Option<Vec<f64>>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            eta: Some(vec![0.0, 0.25]),
            target_rate_hz: None,
            window_ms: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DfxSection {
    pub boundary_ms: f64,
    pub max_rounds: usize,
    /// Hidden neurons silenced (one per probe trial) to score a grid point.
    pub probe: Vec<usize>,
    pub grid: GridSection,
}

impl Default for DfxSection {
    fn default() -> Self {
        Self {
            boundary_ms: 1000.0,
            max_rounds: 10,
            probe: (0..128).step_by(16).collect(),
            grid: GridSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub patience: usize,
    pub min_delta: f64,
    pub max_epochs: usize,
    pub val_split: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let adam = AdamParams::default();
        let stop = EarlyStopSpec::default();
        Self {
            lr: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            patience: stop.patience,
            min_delta: stop.min_delta,
            max_epochs: 1000,
            val_split: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub out_dir: PathBuf,
    /// Recorded event stream (text or `.ev42`); when absent the synthetic
    /// quadrant workload is generated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub events: Option<PathBuf>,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            events: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub sim: SimSection,
    pub events: EventsSection,
    pub network: NetworkSection,
    pub astro: AstroSection,
    pub fault: FaultSection,
    pub perf: PerfSection,
    pub dfx: DfxSection,
    pub train: TrainSection,
    pub paths: PathsSection,
}

/// Keys that are valid but have no default value.
const OPTIONAL_KEYS: [&str; 4] = [
    "perf.inference_time_s",
    "dfx.grid.target_rate_hz",
    "dfx.grid.window_ms",
    "paths.events",
];

/// Every accepted dotted key, in sorted order.
pub fn known_keys() -> BTreeSet<String> {
    let mut keys: BTreeSet<String> = flatten(&ExperimentConfig::default().to_toml()).into_keys().collect();
    // GridSection's default leaves only `eta` set.
    keys.extend(OPTIONAL_KEYS.iter().map(|k| k.to_string()));
    keys
}

fn flatten(table: &toml::Table) -> BTreeMap<String, toml::Value> {
    fn walk(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, toml::Value>) {
        for (k, v) in table {
            let key = if prefix.is_empty() {
                k.clone()
            } else {
                format!("{prefix}.{k}")
            };
            match v {
                toml::Value::Table(t) => walk(&key, t, out),
                other => {
                    out.insert(key, other.clone());
                }
            }
        }
    }
    let mut out = BTreeMap::new();
    walk("", table, &mut out);
    out
}

/// A table holding just `key = value`, nested along the dotted path.
fn single_key(key: &str, value: &toml::Value) -> toml::Table {
    let mut parts: Vec<&str> = key.split('.').collect();
    let leaf = parts.pop().expect("split yields at least one part");
    let mut table = toml::Table::new();
    table.insert(leaf.to_owned(), value.clone());
    for part in parts.into_iter().rev() {
        let mut outer = toml::Table::new();
        outer.insert(part.to_owned(), toml::Value::Table(table));
        table = outer;
    }
    table
}

impl TryFrom<toml::Table> for ExperimentConfig {
    type Error = toml::de::Error;

    fn try_from(table: toml::Table) -> Result<Self, Self::Error> {
        toml::Value::Table(table).try_into()
    }
}

impl ExperimentConfig {
    /// Reads, checks and defaults a config file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Missing {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        let mut config = Self::from_toml_str(&text).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.to_owned(),
                message,
            },
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.paths.out_dir = base.join(&config.paths.out_dir);
        if let Some(events) = &config.paths.events {
            config.paths.events = Some(base.join(events));
        }
        Ok(config)
    }

    /// Parses config text; relative paths are left as written.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse {
            path: PathBuf::new(),
            message: e.to_string().trim_end().to_owned(),
        })?;
        let known = known_keys();
        let given = flatten(&table);
        for key in given.keys() {
            // A table given where a scalar is expected, or vice versa, shows
            // up as an unknown leaf or a type error below.
            if !known.contains(key) {
                return Err(ConfigError::UnknownKey(key.clone()));
            }
        }
        let config = Self::try_from(table).map_err(|e: toml::de::Error| {
            // Deserialization errors carry no key path; find the first key
            // that fails on its own.
            let key = given
                .iter()
                .find(|(k, v)| Self::try_from(single_key(k, v)).is_err())
                .map(|(k, _)| k.clone())
                .unwrap_or_default();
            ConfigError::Invalid {
                key,
                message: e.message().trim_end().to_owned(),
            }
        })?;
        config.validate()?;
        Ok(config)
    }

    fn to_toml(&self) -> toml::Table {
        toml::Table::try_from(self).expect("config serializes to a TOML table")
    }

    /// Every experiment key with its resolved value, sorted by key. Paths are
    /// left out: they say where a run is stored, not what it computes.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (k, v) in flatten(&self.to_toml()) {
            if k.starts_with("paths.") {
                continue;
            }
            out.push_str(&k);
            out.push('=');
            out.push_str(&v.to_string());
            out.push('\n');
        }
        out
    }

    /// SHA-256 of [`canonical`](Self::canonical), hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.sim;
        ensure(positive(s.dt_ms), "sim.dt_ms", "must be positive")?;
        ensure(
            positive(s.duration_ms) && s.duration_ms >= s.dt_ms,
            "sim.duration_ms",
            "must be positive and at least one step",
        )?;

        let e = &self.events;
        ensure(e.downsample >= 1, "events.downsample", "must be at least 1")?;
        ensure(
            self.roi().is_valid() && e.roi[2] >= 2 && e.roi[3] >= 2,
            "events.roi",
            "must be [x0, y0, width, height] inside the 240x180 sensor, at least 2x2",
        )?;
        ensure(positive(e.sample_ms), "events.sample_ms", "must be positive")?;
        ensure(
            non_negative(e.active_rate_hz),
            "events.active_rate_hz",
            "must be non-negative",
        )?;
        ensure(
            non_negative(e.background_rate_hz),
            "events.background_rate_hz",
            "must be non-negative",
        )?;
        ensure((s.dt_ms * 1000.0).round() >= 1.0, "sim.dt_ms", "must be at least 1 us")?;

        let n = &self.network;
        let channels = self.raster_spec().channel_count();
        if n.n_input != channels {
            return Err(invalid(
                "network.n_input",
                format!("must equal the {channels} channels of events.roi / events.downsample"),
            ));
        }
        ensure(n.n_hidden >= 1, "network.n_hidden", "must be at least 1")?;
        ensure(n.n_output >= 1, "network.n_output", "must be at least 1")?;
        ensure(n.w_min.is_finite(), "network.w_min", "must be finite")?;
        ensure(
            n.w_max.is_finite() && n.w_max > n.w_min,
            "network.w_max",
            "must exceed w_min",
        )?;
        ensure(
            (0.0..=1.0).contains(&n.input_scale),
            "network.input_scale",
            "must lie in [0, 1]",
        )?;
        ensure(
            (0.0..=1.0).contains(&n.output_scale),
            "network.output_scale",
            "must lie in [0, 1]",
        )?;
        n.hidden.validate("network.hidden")?;
        n.output.validate("network.output")?;

        let a = &self.astro;
        ensure(non_negative(a.eta), "astro.eta", "must be non-negative")?;
        ensure(positive(a.target_rate_hz), "astro.target_rate_hz", "must be positive")?;
        ensure(positive(a.window_ms), "astro.window_ms", "must be positive")?;
        ensure(a.group_size >= 1, "astro.group_size", "must be at least 1")?;
        ensure((0.0..=1.0).contains(&a.lambda), "astro.lambda", "must lie in [0, 1]")?;
        self.sim_config()
            .validate()
            .map_err(|e| invalid("astro.window_ms", e.to_string()))?;

        let f = &self.fault;
        ensure(
            non_negative(f.onset_ms) && f.onset_ms < s.duration_ms,
            "fault.onset_ms",
            "must lie in [0, sim.duration_ms)",
        )?;
        let layer_size = match f.layer {
            Layer::Input => n.n_input,
            Layer::Hidden => n.n_hidden,
            Layer::Output => n.n_output,
        };
        match f.kind {
            FaultKind::SilenceNeuron | FaultKind::StuckAtFire => {
                ensure(
                    f.targets.iter().all(|&t| t < layer_size),
                    "fault.targets",
                    "index outside fault.layer",
                )?;
                ensure(
                    !(f.kind == FaultKind::StuckAtFire && f.layer == Layer::Input),
                    "fault.layer",
                    "stuck_at_fire needs the hidden or output layer",
                )?;
            }
            FaultKind::SynapseDrop => {
                ensure(
                    !f.synapses.is_empty(),
                    "fault.synapses",
                    "synapse_drop needs at least one [pre, post] pair",
                )?;
                let (pre, post) = match f.projection {
                    Projection::InputHidden => (n.n_input, n.n_hidden),
                    Projection::HiddenOutput => (n.n_hidden, n.n_output),
                };
                ensure(
                    f.synapses.iter().all(|&[i, j]| i < pre && j < post),
                    "fault.synapses",
                    "pair outside fault.projection",
                )?;
            }
        }

        let p = &self.perf;
        ensure(p.loader_iterations >= 1, "perf.loader_iterations", "must be at least 1")?;
        if let Some(t) = p.inference_time_s {
            ensure(positive(t), "perf.inference_time_s", "must be positive")?;
        }

        let d = &self.dfx;
        ensure(
            positive(d.boundary_ms) && d.boundary_ms >= a.window_ms,
            "dfx.boundary_ms",
            "must be at least astro.window_ms",
        )?;
        ensure(d.max_rounds >= 1, "dfx.max_rounds", "must be at least 1")?;
        ensure(
            !d.probe.is_empty() && d.probe.iter().all(|&j| j < n.n_hidden),
            "dfx.probe",
            "must list hidden neuron indices",
        )?;
        let axes = [
            ("dfx.grid.eta", &d.grid.eta),
            ("dfx.grid.target_rate_hz", &d.grid.target_rate_hz),
            ("dfx.grid.window_ms", &d.grid.window_ms),
        ];
        ensure(
            axes.iter().any(|(_, v)| v.is_some()),
            "dfx.grid",
            "needs at least one axis",
        )?;
        for (key, values) in axes {
            if let Some(values) = values {
                ensure(!values.is_empty(), key, "must not be empty")?;
            }
        }
        self.adaptive_schedule()
            .validate(&self.sim_config())
            .map_err(|e| invalid("dfx.grid", e.to_string()))?;

        let t = &self.train;
        self.train_config()
            .validate()
            .map_err(|e| invalid("train", e.to_string()))?;
        ensure(positive(t.lr), "train.lr", "must be positive")?;
        ensure(t.max_epochs >= 1, "train.max_epochs", "must be at least 1")?;
        ensure(non_negative(t.min_delta), "train.min_delta", "must be non-negative")?;
        ensure(
            t.val_split >= 0.0 && t.val_split < 1.0,
            "train.val_split",
            "must lie in [0, 1)",
        )?;
        Ok(())
    }

    pub fn roi(&self) -> Roi {
        let [x0, y0, width, height] = self.events.roi;
        Roi { x0, y0, width, height }
    }

    pub fn bin_width_us(&self) -> u64 {
        (self.sim.dt_ms * 1000.0).round() as u64
    }

    pub fn duration_us(&self) -> u64 {
        (self.sim.duration_ms * 1000.0).round() as u64
    }

    pub fn raster_spec(&self) -> RasterSpec {
        RasterSpec {
            downsample: self.events.downsample,
            bin_width_us: self.bin_width_us(),
            window_us: self.duration_us(),
            roi: self.roi(),
            polarity: self.events.polarity,
        }
    }

    pub fn synthetic_workload(&self) -> QuadrantWorkload {
        QuadrantWorkload {
            seed: self.sim.seed,
            duration_us: self.duration_us(),
            sample_us: (self.events.sample_ms * 1000.0).round() as u64,
            active_rate_hz: self.events.active_rate_hz,
            background_rate_hz: self.events.background_rate_hz,
            roi: self.roi(),
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        let n = &self.network;
        let a = &self.astro;
        SimConfig {
            network: NetworkConfig {
                n_input: n.n_input,
                n_hidden: n.n_hidden,
                n_output: n.n_output,
                hidden: n.hidden.params(),
                output: n.output.params(),
                w_min: n.w_min,
                w_max: n.w_max,
                init: WeightInit {
                    input_scale: n.input_scale,
                    output_scale: n.output_scale,
                },
                dt_ms: self.sim.dt_ms,
                seed: self.sim.seed,
            },
            astro: AstroParams {
                enabled: a.enabled,
                eta: a.eta,
                target_rate_hz: a.target_rate_hz,
                window_ms: a.window_ms,
                group_size: a.group_size,
                lambda: a.lambda,
            },
        }
    }

    /// Faults of the `faults` campaign, in trial order.
    pub fn fault_specs(&self) -> Vec<FaultSpec> {
        let f = &self.fault;
        let faults: Vec<Fault> = match f.kind {
            FaultKind::SynapseDrop => f
                .synapses
                .iter()
                .map(|&[pre, post]| Fault::SynapseDrop {
                    projection: f.projection,
                    pre,
                    post,
                })
                .collect(),
            kind => {
                let targets: Vec<usize> = if f.targets.is_empty() {
                    let n = &self.network;
                    let size = match f.layer {
                        Layer::Input => n.n_input,
                        Layer::Hidden => n.n_hidden,
                        Layer::Output => n.n_output,
                    };
                    (0..size).collect()
                } else {
                    f.targets.clone()
                };
                targets
                    .into_iter()
                    .map(|index| match kind {
                        FaultKind::SilenceNeuron => Fault::SilenceNeuron { layer: f.layer, index },
                        _ => Fault::StuckAtFire { layer: f.layer, index },
                    })
                    .collect()
            }
        };
        faults
            .into_iter()
            .map(|fault| FaultSpec {
                fault,
                onset_ms: f.onset_ms,
            })
            .collect()
    }

    pub fn adaptive_schedule(&self) -> AdaptiveSchedule {
        let d = &self.dfx;
        let axes = [
            ("astro.eta", &d.grid.eta),
            ("astro.target_rate_hz", &d.grid.target_rate_hz),
            ("astro.window_ms", &d.grid.window_ms),
        ];
        let grid = axes
            .into_iter()
            .filter_map(|(key, values)| {
                values.as_ref().map(|v| GridAxis {
                    key: key.to_owned(),
                    values: v.iter().map(|&x| SwapValue::Real(x)).collect(),
                })
            })
            .collect();
        let probe = d
            .probe
            .iter()
            .map(|&index| {
                FaultSpec::at_start(Fault::SilenceNeuron {
                    layer: Layer::Hidden,
                    index,
                })
            })
            .collect();
        AdaptiveSchedule {
            boundary_ms: d.boundary_ms,
            grid,
            max_rounds: d.max_rounds,
            probe,
            threads: self.fault.threads,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            adam: AdamParams {
                learning_rate: t.lr,
                beta1: t.beta1,
                beta2: t.beta2,
                epsilon: t.epsilon,
            },
            stop: EarlyStopSpec {
                patience: t.patience,
                min_delta: t.min_delta,
            },
            max_epochs: t.max_epochs,
            val_split: t.val_split,
            seed: self.sim.seed,
        }
    }
}
