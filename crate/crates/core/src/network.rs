//! Deterministic three-layer leaky integrate-and-fire network.
//!
//! The input layer is a pass-through of raster channels. Hidden neurons are
//! the astrocyte-monitored layer; output neurons decode hidden spikes.
//! Propagation is same-step feedforward: input counts drive hidden neurons,
//! and hidden spikes of the same step drive the output layer.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::SpikeRaster;

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("invalid layer size: {layer} layer must have at least one neuron")]
    EmptyLayer { layer: Layer },
    #[error("invalid neuron parameters: {0}")]
    BadParams(&'static str),
    #[error("invalid weight bounds [{w_min}, {w_max}] or init scale")]
    BadWeights { w_min: f64, w_max: f64 },
    #[error("dt_ms must be positive and finite, got {0}")]
    BadTimeStep(f64),
    #[error("input has {got} channels, network expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("raster bin width {bin_width_us} us does not match dt = {dt_ms} ms")]
    BinWidthMismatch { bin_width_us: u64, dt_ms: f64 },
    #[error("window {start}..{end} is empty or exceeds {bins} bins")]
    BadWindow { start: usize, end: usize, bins: usize },
    #[error("{layer} neuron index {index} out of range (size {size})")]
    NeuronOutOfRange { layer: Layer, index: usize, size: usize },
    #[error("synapse ({pre}, {post}) out of range for {matrix} ({n_pre}x{n_post})")]
    SynapseOutOfRange {
        matrix: Projection,
        pre: usize,
        post: usize,
        n_pre: usize,
        n_post: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Input,
    Hidden,
    Output,
}

impl std::fmt::Display for Layer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Layer::Input => "input",
            Layer::Hidden => "hidden",
            Layer::Output => "output",
        })
    }
}

/// One of the two weight matrices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    InputHidden,
    HiddenOutput,
}

impl std::fmt::Display for Projection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Projection::InputHidden => "input_hidden",
            Projection::HiddenOutput => "hidden_output",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuronParams {
    pub tau_mem_ms: f64,
    pub v_th: f64,
    pub v_reset: f64,
    pub refractory_steps: u32,
}

impl Default for NeuronParams {
    fn default() -> Self {
        Self {
            tau_mem_ms: 20.0,
            v_th: 1.0,
            v_reset: 0.0,
            refractory_steps: 2,
        }
    }
}

impl NeuronParams {
    pub fn validate(&self) -> Result<(), NetworkError> {
        if !(self.tau_mem_ms > 0.0 && self.tau_mem_ms.is_finite()) {
            return Err(NetworkError::BadParams("tau_mem_ms must be positive"));
        }
        if !(self.v_th > 0.0 && self.v_th.is_finite()) {
            return Err(NetworkError::BadParams("v_th must be positive"));
        }
        if !(self.v_reset < self.v_th) {
            return Err(NetworkError::BadParams("v_reset must be below v_th"));
        }
        Ok(())
    }

    pub fn decay(&self, dt_ms: f64) -> f64 {
        (-dt_ms / self.tau_mem_ms).exp()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NeuronState {
    pub v: f64,
    pub refractory_remaining: u32,
    pub silenced: bool,
    /// Stuck-at-fire fault: spikes on every non-refractory step.
    pub stuck: bool,
}

/// Advances one neuron by one step and reports whether it spiked.
pub fn step_neuron(s: NeuronState, p: &NeuronParams, input_current: f64, dt_ms: f64) -> (NeuronState, bool) {
    let mut next = s;
    let spiked = advance(&mut next, p, input_current, p.decay(dt_ms));
    (next, spiked)
}

#[inline]
fn advance(s: &mut NeuronState, p: &NeuronParams, input: f64, decay: f64) -> bool {
    if s.silenced {
        return false;
    }
    if s.refractory_remaining > 0 {
        s.refractory_remaining -= 1;
        s.v = p.v_reset;
        return false;
    }
    if !s.stuck {
        s.v = s.v * decay + input;
        if s.v < p.v_th {
            return false;
        }
    }
    s.v = p.v_reset;
    s.refractory_remaining = p.refractory_steps;
    true
}

/// Dense `n_pre x n_post` weights, row-major by presynaptic neuron.
#[derive(Clone, Debug, PartialEq)]
pub struct SynapseMatrix {
    n_pre: usize,
    n_post: usize,
    weights: Vec<f64>,
    pub w_min: f64,
    pub w_max: f64,
    /// Flat indices of permanently dropped synapses.
    dropped: Vec<usize>,
}

impl SynapseMatrix {
    pub fn filled(n_pre: usize, n_post: usize, value: f64, w_min: f64, w_max: f64) -> Self {
        Self {
            n_pre,
            n_post,
            weights: vec![value.clamp(w_min, w_max); n_pre * n_post],
            w_min,
            w_max,
            dropped: Vec::new(),
        }
    }

    pub fn n_pre(&self) -> usize {
        self.n_pre
    }

    pub fn n_post(&self) -> usize {
        self.n_post
    }

    pub fn get(&self, pre: usize, post: usize) -> f64 {
        self.weights[pre * self.n_post + post]
    }

    /// Sets one weight, clipped to the bounds.
    pub fn set(&mut self, pre: usize, post: usize, w: f64) {
        let idx = pre * self.n_post + post;
        if !self.dropped.contains(&idx) {
            self.weights[idx] = w.clamp(self.w_min, self.w_max);
        }
    }

    pub fn row(&self, pre: usize) -> &[f64] {
        &self.weights[pre * self.n_post..(pre + 1) * self.n_post]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Multiplies every afferent weight of `post` by `factor`, then clips.
    pub fn scale_afferent(&mut self, post: usize, factor: f64) {
        for pre in 0..self.n_pre {
            let idx = pre * self.n_post + post;
            self.weights[idx] = (self.weights[idx] * factor).clamp(self.w_min, self.w_max);
        }
        for &idx in &self.dropped {
            if idx % self.n_post == post {
                self.weights[idx] = 0.0;
            }
        }
    }

    pub fn drop_synapse(&mut self, pre: usize, post: usize) {
        let idx = pre * self.n_post + post;
        self.weights[idx] = 0.0;
        if !self.dropped.contains(&idx) {
            self.dropped.push(idx);
        }
    }

    pub fn within_bounds(&self) -> bool {
        self.weights
            .iter()
            .enumerate()
            .all(|(i, &w)| (w >= self.w_min && w <= self.w_max) || self.dropped.contains(&i))
    }
}

/// Uniform weight initialisation: each matrix draws from
/// `U[w_min, w_min + scale * (w_max - w_min)]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightInit {
    pub input_scale: f64,
    pub output_scale: f64,
}

impl Default for WeightInit {
    fn default() -> Self {
        Self {
            input_scale: 0.5,
            output_scale: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub n_input: usize,
    pub n_hidden: usize,
    pub n_output: usize,
    pub hidden: NeuronParams,
    pub output: NeuronParams,
    pub w_min: f64,
    pub w_max: f64,
    pub init: WeightInit,
    pub dt_ms: f64,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::reference(0)
    }
}

impl NetworkConfig {
    /// 512-128-40 network: 680 neurons.
    pub fn reference(seed: u64) -> Self {
        Self::with_sizes(512, 128, 40, seed)
    }

    pub fn with_sizes(n_input: usize, n_hidden: usize, n_output: usize, seed: u64) -> Self {
        Self {
            n_input,
            n_hidden,
            n_output,
            hidden: NeuronParams::default(),
            output: NeuronParams::default(),
            w_min: 0.0,
            w_max: 1.0,
            init: WeightInit::default(),
            dt_ms: 1.0,
            seed,
        }
    }

    pub fn neuron_count(&self) -> usize {
        self.n_input + self.n_hidden + self.n_output
    }

    pub fn synapse_count(&self) -> usize {
        self.n_input * self.n_hidden + self.n_hidden * self.n_output
    }

    pub fn layer_size(&self, layer: Layer) -> usize {
        match layer {
            Layer::Input => self.n_input,
            Layer::Hidden => self.n_hidden,
            Layer::Output => self.n_output,
        }
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        for layer in [Layer::Input, Layer::Hidden, Layer::Output] {
            if self.layer_size(layer) == 0 {
                return Err(NetworkError::EmptyLayer { layer });
            }
        }
        self.hidden.validate()?;
        self.output.validate()?;
        let bad_weights = NetworkError::BadWeights {
            w_min: self.w_min,
            w_max: self.w_max,
        };
        if !(self.w_min.is_finite() && self.w_max.is_finite() && self.w_min <= self.w_max) {
            return Err(bad_weights);
        }
        for s in [self.init.input_scale, self.init.output_scale] {
            if !(0.0..=1.0).contains(&s) {
                return Err(bad_weights);
            }
        }
        if !(self.dt_ms > 0.0 && self.dt_ms.is_finite()) {
            return Err(NetworkError::BadTimeStep(self.dt_ms));
        }
        Ok(())
    }
}

/// Spike counts and hidden rates accumulated over a run of bins.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowResult {
    pub bins: usize,
    pub duration_ms: f64,
    pub input_spikes: u64,
    pub hidden_counts: Vec<u32>,
    pub output_counts: Vec<u32>,
    pub hidden_rates_hz: Vec<f64>,
}

impl WindowResult {
    pub fn empty(n_hidden: usize, n_output: usize) -> Self {
        Self {
            bins: 0,
            duration_ms: 0.0,
            input_spikes: 0,
            hidden_counts: vec![0; n_hidden],
            output_counts: vec![0; n_output],
            hidden_rates_hz: vec![0.0; n_hidden],
        }
    }

    pub(crate) fn finish(&mut self, dt_ms: f64) {
        self.duration_ms = self.bins as f64 * dt_ms;
        let seconds = self.duration_ms / 1000.0;
        self.hidden_rates_hz = self
            .hidden_counts
            .iter()
            .map(|&c| if seconds > 0.0 { c as f64 / seconds } else { 0.0 })
            .collect();
    }

    pub fn csv_header() -> &'static str {
        "window,bins,duration_ms,input_spikes,hidden_spikes,output_spikes,mean_hidden_rate_hz"
    }

    pub fn csv_row(&self, window: usize) -> String {
        let hidden: u64 = self.hidden_counts.iter().map(|&c| c as u64).sum();
        let output: u64 = self.output_counts.iter().map(|&c| c as u64).sum();
        let mean_rate = self.hidden_rates_hz.iter().sum::<f64>() / self.hidden_rates_hz.len().max(1) as f64;
        format!(
            "{window},{},{:.3},{},{hidden},{output},{mean_rate:.6}",
            self.bins, self.duration_ms, self.input_spikes
        )
    }
}

/// Spikes emitted during one step, as neuron indices.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StepSpikes {
    pub hidden: Vec<u32>,
    pub output: Vec<u32>,
}

/// Live network state. Cloning gives an independent copy for paired trials.
#[derive(Clone, Debug)]
pub struct Network {
    config: NetworkConfig,
    input_silenced: Vec<bool>,
    hidden: Vec<NeuronState>,
    output: Vec<NeuronState>,
    w_in: SynapseMatrix,
    w_out: SynapseMatrix,
    hidden_decay: f64,
    output_decay: f64,
    step: u64,
    macs: u64,
    input_spikes: u64,
    rng: ChaCha8Rng,
    hidden_current: Vec<f64>,
    output_current: Vec<f64>,
}

impl Network {
    pub fn instantiate(config: &NetworkConfig) -> Result<Self, NetworkError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut draw = |n_pre: usize, n_post: usize, scale: f64| {
            let mut m = SynapseMatrix::filled(n_pre, n_post, config.w_min, config.w_min, config.w_max);
            let span = scale * (config.w_max - config.w_min);
            for w in m.weights.iter_mut() {
                *w = config.w_min + span * rng.random::<f64>();
            }
            m
        };
        let w_in = draw(config.n_input, config.n_hidden, config.init.input_scale);
        let w_out = draw(config.n_hidden, config.n_output, config.init.output_scale);
        Ok(Self {
            input_silenced: vec![false; config.n_input],
            hidden: vec![NeuronState::default(); config.n_hidden],
            output: vec![NeuronState::default(); config.n_output],
            w_in,
            w_out,
            hidden_decay: config.hidden.decay(config.dt_ms),
            output_decay: config.output.decay(config.dt_ms),
            step: 0,
            macs: 0,
            input_spikes: 0,
            rng,
            hidden_current: vec![0.0; config.n_hidden],
            output_current: vec![0.0; config.n_output],
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Dense multiply-accumulates performed so far.
    pub fn mac_count(&self) -> u64 {
        self.macs
    }

    /// Sum of absolute input counts consumed so far.
    pub fn input_spikes_consumed(&self) -> u64 {
        self.input_spikes
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn synapses(&self, which: Projection) -> &SynapseMatrix {
        match which {
            Projection::InputHidden => &self.w_in,
            Projection::HiddenOutput => &self.w_out,
        }
    }

    pub fn synapses_mut(&mut self, which: Projection) -> &mut SynapseMatrix {
        match which {
            Projection::InputHidden => &mut self.w_in,
            Projection::HiddenOutput => &mut self.w_out,
        }
    }

    pub fn neurons(&self, layer: Layer) -> &[NeuronState] {
        match layer {
            Layer::Input => &[],
            Layer::Hidden => &self.hidden,
            Layer::Output => &self.output,
        }
    }

    fn check_neuron(&self, layer: Layer, index: usize) -> Result<(), NetworkError> {
        let size = self.config.layer_size(layer);
        if index >= size {
            return Err(NetworkError::NeuronOutOfRange { layer, index, size });
        }
        Ok(())
    }

    pub fn silence(&mut self, layer: Layer, index: usize) -> Result<(), NetworkError> {
        self.check_neuron(layer, index)?;
        match layer {
            Layer::Input => self.input_silenced[index] = true,
            Layer::Hidden => self.hidden[index].silenced = true,
            Layer::Output => self.output[index].silenced = true,
        }
        Ok(())
    }

    /// Input channels have no membrane; a stuck input channel is not modelled.
    pub fn stick(&mut self, layer: Layer, index: usize) -> Result<(), NetworkError> {
        self.check_neuron(layer, index)?;
        match layer {
            Layer::Input => return Err(NetworkError::NeuronOutOfRange { layer, index, size: 0 }),
            Layer::Hidden => self.hidden[index].stuck = true,
            Layer::Output => self.output[index].stuck = true,
        }
        Ok(())
    }

    pub fn check_synapse(&self, which: Projection, pre: usize, post: usize) -> Result<(), NetworkError> {
        let m = self.synapses(which);
        if pre >= m.n_pre || post >= m.n_post {
            return Err(NetworkError::SynapseOutOfRange {
                matrix: which,
                pre,
                post,
                n_pre: m.n_pre,
                n_post: m.n_post,
            });
        }
        Ok(())
    }

    pub fn neuron_params(&self, layer: Layer) -> NeuronParams {
        match layer {
            Layer::Output => self.config.output,
            _ => self.config.hidden,
        }
    }

    /// Replaces a layer's neuron parameters between steps.
    pub fn set_neuron_params(&mut self, layer: Layer, params: NeuronParams) -> Result<(), NetworkError> {
        params.validate()?;
        match layer {
            Layer::Input => {}
            Layer::Hidden => {
                self.config.hidden = params;
                self.hidden_decay = params.decay(self.config.dt_ms);
                for s in &mut self.hidden {
                    s.refractory_remaining = s.refractory_remaining.min(params.refractory_steps);
                }
            }
            Layer::Output => {
                self.config.output = params;
                self.output_decay = params.decay(self.config.dt_ms);
                for s in &mut self.output {
                    s.refractory_remaining = s.refractory_remaining.min(params.refractory_steps);
                }
            }
        }
        Ok(())
    }

    /// Advances every layer by one step.
    pub fn step(&mut self, input: &[i32]) -> Result<StepSpikes, NetworkError> {
        let mut spikes = StepSpikes::default();
        self.step_into(input, &mut spikes)?;
        Ok(spikes)
    }

    /// Like [`Network::step`] but reuses `spikes`.
    pub fn step_into(&mut self, input: &[i32], spikes: &mut StepSpikes) -> Result<(), NetworkError> {
        let cfg = &self.config;
        if input.len() != cfg.n_input {
            return Err(NetworkError::DimensionMismatch {
                expected: cfg.n_input,
                got: input.len(),
            });
        }
        spikes.hidden.clear();
        spikes.output.clear();

        // Zero inputs contribute exactly +0.0, so skipping them leaves the
        // dense accumulation order (and result) unchanged.
        self.hidden_current.fill(0.0);
        for (c, &k) in input.iter().enumerate() {
            if k == 0 {
                continue;
            }
            self.input_spikes += k.unsigned_abs() as u64;
            if self.input_silenced[c] {
                continue;
            }
            let k = k as f64;
            for (acc, &w) in self.hidden_current.iter_mut().zip(self.w_in.row(c)) {
                *acc += k * w;
            }
        }
        for (j, s) in self.hidden.iter_mut().enumerate() {
            if advance(s, &cfg.hidden, self.hidden_current[j], self.hidden_decay) {
                spikes.hidden.push(j as u32);
            }
        }

        self.output_current.fill(0.0);
        for &j in &spikes.hidden {
            for (acc, &w) in self.output_current.iter_mut().zip(self.w_out.row(j as usize)) {
                *acc += w;
            }
        }
        for (k, s) in self.output.iter_mut().enumerate() {
            if advance(s, &cfg.output, self.output_current[k], self.output_decay) {
                spikes.output.push(k as u32);
            }
        }

        self.step += 1;
        self.macs += cfg.synapse_count() as u64;
        Ok(())
    }

    /// Steps through `bins` of `raster`, accumulating spike counts.
    pub fn run_window(&mut self, raster: &SpikeRaster, bins: Range<usize>) -> Result<WindowResult, NetworkError> {
        if raster.channels() != self.config.n_input {
            return Err(NetworkError::DimensionMismatch {
                expected: self.config.n_input,
                got: raster.channels(),
            });
        }
        self.check_bin_width(raster.bin_width_us)?;
        if bins.start >= bins.end || bins.end > raster.bins() {
            return Err(NetworkError::BadWindow {
                start: bins.start,
                end: bins.end,
                bins: raster.bins(),
            });
        }
        let mut result = WindowResult::empty(self.config.n_hidden, self.config.n_output);
        let before = self.input_spikes;
        let mut spikes = StepSpikes::default();
        for b in bins {
            self.step_into(raster.bin(b), &mut spikes)?;
            for &j in &spikes.hidden {
                result.hidden_counts[j as usize] += 1;
            }
            for &k in &spikes.output {
                result.output_counts[k as usize] += 1;
            }
            result.bins += 1;
        }
        result.input_spikes = self.input_spikes - before;
        result.finish(self.config.dt_ms);
        Ok(result)
    }

    pub fn check_bin_width(&self, bin_width_us: u64) -> Result<(), NetworkError> {
        if (bin_width_us as f64 - self.config.dt_ms * 1000.0).abs() > 1e-6 {
            return Err(NetworkError::BinWidthMismatch {
                bin_width_us,
                dt_ms: self.config.dt_ms,
            });
        }
        Ok(())
    }
}
