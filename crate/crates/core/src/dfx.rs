//! Live reconfiguration: a software analog of partial FPGA reconfiguration.
//!
//! A [`DfxRuntime`] owns a running [`Simulation`]. Any thread holding a
//! [`SwapHandle`] may queue a [`SwapRequest`] (a partial overlay of
//! swappable hyperparameters); the runtime applies at most one request per
//! boundary, in FIFO order, and only between steps. The simulation closes its
//! open window before a new parameter set is installed, so no window mixes
//! two configurations and no input is dropped.
//!
//! [`adaptive_loop`] drives the tune cycle: score the live point on a fault
//! probe, move to the best improving grid neighbour, swap it in at the next
//! boundary, repeat.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, info};

use crate::events::SpikeRaster;
use crate::faults::{probe_ft, FaultError, FaultSpec};
use crate::network::{NetworkError, NeuronParams};
use crate::sim::{LiveParams, SimConfig, SimError, SimRecord, Simulation};

#[derive(Debug, Error, PartialEq)]
pub enum DfxError {
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("`{0}` is fixed for the lifetime of a run and cannot be swapped")]
    NotSwappable(String),
    #[error("`{key}` expects a {expected} value")]
    WrongType { key: String, expected: &'static str },
    #[error("swap runtime has terminated")]
    Terminated,
    #[error("swap boundary of {boundary_ms} ms must be at least the astrocyte window of {window_ms} ms")]
    BoundaryTooShort { boundary_ms: f64, window_ms: f64 },
    #[error("apply_pending called at step {step}, which is not a swap boundary")]
    NotAtBoundary { step: u64 },
    #[error("search grid is empty")]
    EmptyGrid,
    #[error("grid axis `{0}` has no values")]
    EmptyAxis(String),
    #[error("grid axis `{0}` appears more than once")]
    DuplicateAxis(String),
    #[error("max_rounds must be at least 1")]
    ZeroRounds,
    #[error("fault probe set is empty")]
    EmptyProbe,
    #[error("objective undefined at [{0}]: fault-free output is all zero")]
    ObjectiveUndefined(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Fault(#[from] FaultError),
}

impl From<NetworkError> for DfxError {
    fn from(e: NetworkError) -> Self {
        DfxError::Sim(SimError::Network(e))
    }
}

/// A value in an overlay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SwapValue {
    Bool(bool),
    Int(i64),
    Real(f64),
}

impl fmt::Display for SwapValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SwapValue::Bool(b) => write!(f, "{b}"),
            SwapValue::Int(i) => write!(f, "{i}"),
            SwapValue::Real(x) => write!(f, "{x:?}"),
        }
    }
}

impl From<f64> for SwapValue {
    fn from(x: f64) -> Self {
        SwapValue::Real(x)
    }
}

impl From<bool> for SwapValue {
    fn from(b: bool) -> Self {
        SwapValue::Bool(b)
    }
}

impl From<i64> for SwapValue {
    fn from(i: i64) -> Self {
        SwapValue::Int(i)
    }
}

/// Keys that may change while a simulation runs.
pub const SWAPPABLE_KEYS: [&str; 12] = [
    "astro.enabled",
    "astro.eta",
    "astro.target_rate_hz",
    "astro.window_ms",
    "network.hidden.refractory_steps",
    "network.hidden.tau_mem_ms",
    "network.hidden.v_reset",
    "network.hidden.v_th",
    "network.output.refractory_steps",
    "network.output.tau_mem_ms",
    "network.output.v_reset",
    "network.output.v_th",
];

/// Known configuration keys that are fixed per run (topology, seeds, time
/// base, astrocyte grouping).
pub const FIXED_KEYS: [&str; 15] = [
    "astro.group_size",
    "astro.lambda",
    "layer_sizes",
    "network.dt_ms",
    "network.init.input_scale",
    "network.init.output_scale",
    "network.layer_sizes",
    "network.n_hidden",
    "network.n_input",
    "network.n_output",
    "network.seed",
    "network.w_max",
    "network.w_min",
    "sim.dt_ms",
    "sim.seed",
];

fn real(key: &str, v: SwapValue) -> Result<f64, DfxError> {
    match v {
        SwapValue::Real(x) => Ok(x),
        SwapValue::Int(i) => Ok(i as f64),
        SwapValue::Bool(_) => Err(DfxError::WrongType {
            key: key.to_owned(),
            expected: "numeric",
        }),
    }
}

fn steps(key: &str, v: SwapValue) -> Result<u32, DfxError> {
    match v {
        SwapValue::Int(i) if (0..=u32::MAX as i64).contains(&i) => Ok(i as u32),
        _ => Err(DfxError::WrongType {
            key: key.to_owned(),
            expected: "non-negative integer",
        }),
    }
}

fn set_neuron(p: &mut NeuronParams, field: &str, key: &str, v: SwapValue) -> Result<(), DfxError> {
    match field {
        "tau_mem_ms" => p.tau_mem_ms = real(key, v)?,
        "v_th" => p.v_th = real(key, v)?,
        "v_reset" => p.v_reset = real(key, v)?,
        "refractory_steps" => p.refractory_steps = steps(key, v)?,
        _ => return Err(DfxError::UnknownKey(key.to_owned())),
    }
    Ok(())
}

/// Writes one key into `live`, checking that the key is swappable and the
/// value has the right type. Ranges are checked by [`Overlay::apply`].
fn set_key(live: &mut LiveParams, key: &str, v: SwapValue) -> Result<(), DfxError> {
    if !SWAPPABLE_KEYS.contains(&key) {
        return Err(if FIXED_KEYS.contains(&key) {
            DfxError::NotSwappable(key.to_owned())
        } else {
            DfxError::UnknownKey(key.to_owned())
        });
    }
    match key {
        "astro.enabled" => match v {
            SwapValue::Bool(b) => live.astro.enabled = b,
            _ => {
                return Err(DfxError::WrongType {
                    key: key.to_owned(),
                    expected: "boolean",
                })
            }
        },
        "astro.eta" => live.astro.eta = real(key, v)?,
        "astro.target_rate_hz" => live.astro.target_rate_hz = real(key, v)?,
        "astro.window_ms" => live.astro.window_ms = real(key, v)?,
        _ => {
            let (layer, field) = key
                .strip_prefix("network.")
                .and_then(|rest| rest.split_once('.'))
                .ok_or_else(|| DfxError::UnknownKey(key.to_owned()))?;
            let params = if layer == "hidden" {
                &mut live.hidden
            } else {
                &mut live.output
            };
            set_neuron(params, field, key, v)?;
        }
    }
    Ok(())
}

/// A partial set of swappable hyperparameters, keyed by config key.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Overlay(BTreeMap<String, SwapValue>);

impl Overlay {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: impl Into<SwapValue>) -> Self {
        self.0.insert(key.to_owned(), value.into());
        self
    }

    pub fn insert(&mut self, key: &str, value: impl Into<SwapValue>) {
        self.0.insert(key.to_owned(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<SwapValue> {
        self.0.get(key).copied()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, SwapValue)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Checks keys and value types without a base configuration.
    pub fn validate(&self) -> Result<(), DfxError> {
        let mut scratch = LiveParams {
            astro: Default::default(),
            hidden: Default::default(),
            output: Default::default(),
        };
        for (k, v) in self.iter() {
            set_key(&mut scratch, k, v)?;
        }
        Ok(())
    }

    /// `live` with this overlay merged in, range-checked as a whole.
    pub fn apply(&self, live: &LiveParams) -> Result<LiveParams, DfxError> {
        let mut next = *live;
        for (k, v) in self.iter() {
            set_key(&mut next, k, v)?;
        }
        next.astro.validate().map_err(SimError::from)?;
        next.hidden.validate()?;
        next.output.validate()?;
        Ok(next)
    }
}

impl fmt::Display for Overlay {
    /// `key=value` pairs joined by `;`, sorted by key.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (k, v)) in self.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SwapRequest {
    pub request_id: u64,
    pub overlay: Overlay,
}

struct Queue {
    tx: Sender<SwapRequest>,
    next_id: u64,
}

/// Cloneable, thread-safe producer side of a runtime's swap queue.
#[derive(Clone)]
pub struct SwapHandle {
    queue: Arc<Mutex<Queue>>,
    depth: Arc<AtomicUsize>,
}

impl SwapHandle {
    /// Validates and enqueues an overlay, returning its request id. Ids are
    /// assigned in enqueue order, so FIFO application keeps them increasing.
    pub fn request_swap(&self, overlay: Overlay) -> Result<u64, DfxError> {
        overlay.validate()?;
        let mut q = self.queue.lock().unwrap_or_else(|e| e.into_inner());
        let request_id = q.next_id;
        self.depth.fetch_add(1, Ordering::SeqCst);
        if q.tx.send(SwapRequest { request_id, overlay }).is_err() {
            self.depth.fetch_sub(1, Ordering::SeqCst);
            return Err(DfxError::Terminated);
        }
        q.next_id += 1;
        Ok(request_id)
    }

    /// Requests queued but not yet applied.
    pub fn queue_depth(&self) -> usize {
        self.depth.load(Ordering::SeqCst)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AppliedSwap {
    pub request_id: u64,
    /// Steps completed before the new parameters took effect.
    pub step: u64,
    pub overlay: Overlay,
    pub config_hash: String,
}

/// A request whose merged parameters failed validation; the live config is
/// left unchanged.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RejectedSwap {
    pub request_id: u64,
    pub step: u64,
    pub reason: String,
}

/// Everything a finished runtime produced.
#[derive(Clone, Debug, PartialEq)]
pub struct DfxOutcome {
    pub record: SimRecord,
    pub applied: Vec<AppliedSwap>,
    pub rejected: Vec<RejectedSwap>,
    pub input_spikes_consumed: u64,
}

/// The steward of a running simulation. Only this object steps the
/// simulation; swaps arrive through [`SwapHandle`]s.
pub struct DfxRuntime {
    sim: Simulation,
    rx: Receiver<SwapRequest>,
    pending: VecDeque<SwapRequest>,
    handle: SwapHandle,
    boundary_steps: u64,
    applied: Vec<AppliedSwap>,
    rejected: Vec<RejectedSwap>,
}

impl DfxRuntime {
    /// Swap boundaries fall every `round(boundary_ms / dt)` steps. When that
    /// is not a multiple of the astrocyte window, a swap closes the open
    /// window early.
    pub fn new(sim: Simulation, boundary_ms: f64) -> Result<Self, DfxError> {
        let window_ms = sim.live().astro.window_ms;
        if !(boundary_ms >= window_ms && boundary_ms.is_finite()) {
            return Err(DfxError::BoundaryTooShort { boundary_ms, window_ms });
        }
        let boundary_steps = (boundary_ms / sim.network().config().dt_ms).round().max(1.0) as u64;
        let (tx, rx) = mpsc::channel();
        Ok(Self {
            sim,
            rx,
            pending: VecDeque::new(),
            handle: SwapHandle {
                queue: Arc::new(Mutex::new(Queue { tx, next_id: 1 })),
                depth: Arc::new(AtomicUsize::new(0)),
            },
            boundary_steps,
            applied: Vec::new(),
            rejected: Vec::new(),
        })
    }

    pub fn handle(&self) -> SwapHandle {
        self.handle.clone()
    }

    pub fn queue_depth(&self) -> usize {
        self.handle.queue_depth()
    }

    pub fn simulation(&self) -> &Simulation {
        &self.sim
    }

    pub fn live(&self) -> &LiveParams {
        self.sim.live()
    }

    pub fn boundary_steps(&self) -> u64 {
        self.boundary_steps
    }

    pub fn applied(&self) -> &[AppliedSwap] {
        &self.applied
    }

    pub fn rejected(&self) -> &[RejectedSwap] {
        &self.rejected
    }

    pub fn at_boundary(&self) -> bool {
        self.sim.network().step_count().is_multiple_of(self.boundary_steps)
    }

    /// Applies the head of the queue, if any, and returns the live snapshot.
    pub fn apply_pending(&mut self) -> Result<LiveParams, DfxError> {
        let step = self.sim.network().step_count();
        if !step.is_multiple_of(self.boundary_steps) {
            return Err(DfxError::NotAtBoundary { step });
        }
        self.pending.extend(self.rx.try_iter());
        let Some(req) = self.pending.pop_front() else {
            return Ok(*self.sim.live());
        };
        self.handle.depth.fetch_sub(1, Ordering::SeqCst);
        match req.overlay.apply(self.sim.live()) {
            Ok(next) => {
                self.sim.set_live(next)?;
                let config_hash = next.hash();
                info!(request_id = req.request_id, step, %config_hash, "swap applied");
                self.applied.push(AppliedSwap {
                    request_id: req.request_id,
                    step,
                    overlay: req.overlay,
                    config_hash,
                });
            }
            Err(e) => {
                debug!(request_id = req.request_id, error = %e, "swap rejected");
                self.rejected.push(RejectedSwap {
                    request_id: req.request_id,
                    step,
                    reason: e.to_string(),
                });
            }
        }
        Ok(*self.sim.live())
    }

    /// Steps one bin, then services the queue if a boundary was reached.
    pub fn step_bin(&mut self, input: &[i32]) -> Result<(), DfxError> {
        self.sim.step_bin(input)?;
        if self.at_boundary() {
            self.apply_pending()?;
        }
        Ok(())
    }

    pub fn run_bins(&mut self, raster: &SpikeRaster, range: std::ops::Range<usize>) -> Result<(), DfxError> {
        self.sim.check_raster(raster)?;
        for b in range {
            self.step_bin(raster.bin(b))?;
        }
        Ok(())
    }

    /// Steps the whole raster and closes the final window.
    pub fn run(&mut self, raster: &SpikeRaster) -> Result<(), DfxError> {
        self.run_bins(raster, 0..raster.bins())?;
        self.sim.end_window()?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<DfxOutcome, DfxError> {
        self.sim.end_window()?;
        let input_spikes_consumed = self.sim.network().input_spikes_consumed();
        Ok(DfxOutcome {
            record: self.sim.into_record(),
            applied: self.applied,
            rejected: self.rejected,
            input_spikes_consumed,
        })
    }
}

/// One axis of the search grid: a swappable key and its candidate values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub key: String,
    pub values: Vec<SwapValue>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveSchedule {
    pub boundary_ms: f64,
    pub grid: Vec<GridAxis>,
    pub max_rounds: usize,
    /// Held-out faults on which the objective (mean FT) is scored.
    pub probe: Vec<FaultSpec>,
    /// Worker threads for probe scoring; 0 = default.
    pub threads: usize,
}

impl AdaptiveSchedule {
    pub fn validate(&self, config: &SimConfig) -> Result<(), DfxError> {
        if self.grid.is_empty() {
            return Err(DfxError::EmptyGrid);
        }
        if self.max_rounds == 0 {
            return Err(DfxError::ZeroRounds);
        }
        if self.probe.is_empty() {
            return Err(DfxError::EmptyProbe);
        }
        let mut window_ms = config.astro.window_ms;
        for (i, axis) in self.grid.iter().enumerate() {
            if axis.values.is_empty() {
                return Err(DfxError::EmptyAxis(axis.key.clone()));
            }
            if self.grid[..i].iter().any(|a| a.key == axis.key) {
                return Err(DfxError::DuplicateAxis(axis.key.clone()));
            }
            for &v in &axis.values {
                Overlay::new().with(&axis.key, v).validate()?;
                if axis.key == "astro.window_ms" {
                    window_ms = window_ms.max(real(&axis.key, v)?);
                }
            }
        }
        if !(self.boundary_ms >= window_ms) {
            return Err(DfxError::BoundaryTooShort {
                boundary_ms: self.boundary_ms,
                window_ms,
            });
        }
        Ok(())
    }

    fn point(&self, index: &[usize]) -> Overlay {
        let mut o = Overlay::new();
        for (axis, &i) in self.grid.iter().zip(index) {
            o.insert(&axis.key, axis.values[i]);
        }
        o
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    NoImprovingNeighbor,
    MaxRounds,
    WorkloadExhausted,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub point: Overlay,
    pub objective: f64,
    /// Neighbour chosen for the next round, if any improved.
    pub next: Option<Overlay>,
    pub swap_request_id: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub point: Overlay,
    pub objective: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdaptiveReport {
    pub rounds: Vec<RoundRecord>,
    /// Every grid point scored, in evaluation order.
    pub visited: Vec<Evaluation>,
    pub best: Overlay,
    pub best_objective: f64,
    pub stop: StopReason,
    pub applied: Vec<AppliedSwap>,
    /// Config hash of every window of the live run.
    pub window_hashes: Vec<String>,
}

impl AdaptiveReport {
    pub fn csv_header() -> &'static str {
        "round,overlay,objective"
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::csv_header());
        for r in &self.rounds {
            out.push_str(&format!("{},{},{:.9}\n", r.round, r.point, r.objective));
        }
        out
    }
}

/// Greedy coordinate descent over `schedule.grid`, starting from the first
/// value of every axis. Each round advances the live run by one boundary
/// interval, scores the current point and its axis neighbours (mean FT over
/// the probe faults, cached per point), and swaps in the best strictly
/// improving neighbour at the next boundary. Stops when no neighbour
/// improves, after `max_rounds`, or when the workload has no boundary
/// intervals left.
pub fn adaptive_loop(
    config: &SimConfig,
    workload: &SpikeRaster,
    schedule: &AdaptiveSchedule,
) -> Result<AdaptiveReport, DfxError> {
    config.validate()?;
    schedule.validate(config)?;
    let base = config.live();

    let mut cache: HashMap<Vec<usize>, f64> = HashMap::new();
    let mut visited = Vec::new();
    let mut score = |index: &[usize]| -> Result<f64, DfxError> {
        if let Some(&v) = cache.get(index) {
            return Ok(v);
        }
        let point = schedule.point(index);
        let live = point.apply(&base)?;
        let fts = probe_ft(&config.with_live(&live), workload, &schedule.probe, schedule.threads)?;
        let defined: Vec<f64> = fts.into_iter().flatten().collect();
        if defined.is_empty() {
            return Err(DfxError::ObjectiveUndefined(point.to_string()));
        }
        let objective = defined.iter().sum::<f64>() / defined.len() as f64;
        debug!(%point, objective, "scored");
        cache.insert(index.to_vec(), objective);
        visited.push(Evaluation { point, objective });
        Ok(objective)
    };

    let mut current = vec![0usize; schedule.grid.len()];
    let start_live = schedule.point(&current).apply(&base)?;
    let sim = Simulation::new(&config.with_live(&start_live))?;
    let mut runtime = DfxRuntime::new(sim, schedule.boundary_ms)?;
    let handle = runtime.handle();
    let interval = runtime.boundary_steps() as usize;

    let mut rounds = Vec::new();
    let mut cursor = 0usize;
    let mut stop = StopReason::MaxRounds;
    for round in 1..=schedule.max_rounds {
        // Training & predicting: the live run processes one more interval.
        if cursor >= workload.bins() {
            stop = StopReason::WorkloadExhausted;
            break;
        }
        let end = (cursor + interval).min(workload.bins());
        runtime.run_bins(workload, cursor..end)?;
        cursor = end;
        let objective = score(&current)?;

        // Adjusting hyperparameters: best strictly improving neighbour.
        let mut best: Option<(Vec<usize>, f64)> = None;
        for axis in 0..current.len() {
            for up in [false, true] {
                let i = current[axis];
                let j = if up { i + 1 } else { i.wrapping_sub(1) };
                if j >= schedule.grid[axis].values.len() {
                    continue;
                }
                let mut n = current.clone();
                n[axis] = j;
                let v = score(&n)?;
                if v < best.as_ref().map_or(objective, |b| b.1) {
                    best = Some((n, v));
                }
            }
        }

        // Execute: queue the swap; the runtime installs it at the next boundary.
        let mut record = RoundRecord {
            round,
            point: schedule.point(&current),
            objective,
            next: None,
            swap_request_id: None,
        };
        match best {
            None => {
                rounds.push(record);
                stop = StopReason::NoImprovingNeighbor;
                break;
            }
            Some((n, _)) => {
                let next = schedule.point(&n);
                record.swap_request_id = Some(handle.request_swap(next.clone())?);
                record.next = Some(next);
                rounds.push(record);
                current = n;
            }
        }
    }

    // The live run continues under the selected configuration.
    runtime.run_bins(workload, cursor..workload.bins())?;
    let outcome = runtime.finish()?;
    let best_objective = score(&current)?;
    info!(best = %schedule.point(&current), best_objective, ?stop, "adaptive loop done");
    Ok(AdaptiveReport {
        rounds,
        best: schedule.point(&current),
        best_objective,
        stop,
        applied: outcome.applied,
        window_hashes: outcome.record.windows.iter().map(|w| w.config_hash.clone()).collect(),
        visited,
    })
}
