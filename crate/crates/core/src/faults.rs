//! Fault injection and fault-deviation metrics.
//!
//! FT ("fault deviation") for one trial is the normalised L1 deviation of
//! the per-output-neuron spike counts under a fault from the fault-free
//! counts:
//!
//! ```text
//! FT = 100 * sum_k |O_fault[k] - O_original[k]| / sum_k |O_original[k]|
//! ```
//!
//! Lower is more tolerant. A campaign runs every fault twice, with
//! astrocytes off and on, from the same seed and raster; the mean FT of the
//! two arms gives `ft_initial` and `ft_astro`, and
//! `delta_ft = ft_initial - ft_astro`.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::debug;

use crate::astro::AstroParams;
use crate::events::SpikeRaster;
use crate::network::{Layer, Network, NetworkConfig, NetworkError, Projection};
use crate::sim::{SimConfig, SimError, SimRecord, Simulation};

#[derive(Debug, Error, PartialEq)]
pub enum FaultError {
    #[error("fault-free output is all zero; FT is undefined")]
    UndefinedFt,
    #[error("output vectors differ in length ({original} vs {fault})")]
    LengthMismatch { original: usize, fault: usize },
    #[error("fault list is empty")]
    NoFaults,
    #[error("fault onset {onset_ms} ms is outside the {horizon_ms} ms horizon")]
    OnsetOutsideHorizon { onset_ms: f64, horizon_ms: f64 },
    #[error("could not build worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl From<NetworkError> for FaultError {
    fn from(e: NetworkError) -> Self {
        FaultError::Sim(SimError::Network(e))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Fault {
    SilenceNeuron {
        layer: Layer,
        index: usize,
    },
    StuckAtFire {
        layer: Layer,
        index: usize,
    },
    SynapseDrop {
        projection: Projection,
        pre: usize,
        post: usize,
    },
}

impl Fault {
    pub fn kind(&self) -> &'static str {
        match self {
            Fault::SilenceNeuron { .. } => "silence_neuron",
            Fault::StuckAtFire { .. } => "stuck_at_fire",
            Fault::SynapseDrop { .. } => "synapse_drop",
        }
    }

    /// Target rendered as `layer:index` or `projection:pre:post`.
    pub fn target(&self) -> String {
        match self {
            Fault::SilenceNeuron { layer, index } | Fault::StuckAtFire { layer, index } => {
                format!("{layer}:{index}")
            }
            Fault::SynapseDrop { projection, pre, post } => format!("{projection}:{pre}:{post}"),
        }
    }
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.kind(), self.target())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub fault: Fault,
    pub onset_ms: f64,
}

impl FaultSpec {
    pub fn at_start(fault: Fault) -> Self {
        Self { fault, onset_ms: 0.0 }
    }
}

pub fn validate_target(config: &NetworkConfig, fault: &Fault) -> Result<(), NetworkError> {
    match *fault {
        Fault::SilenceNeuron { layer, index } | Fault::StuckAtFire { layer, index } => {
            let size = config.layer_size(layer);
            if index >= size || (layer == Layer::Input && matches!(fault, Fault::StuckAtFire { .. })) {
                return Err(NetworkError::NeuronOutOfRange { layer, index, size });
            }
        }
        Fault::SynapseDrop { projection, pre, post } => {
            let (n_pre, n_post) = match projection {
                Projection::InputHidden => (config.n_input, config.n_hidden),
                Projection::HiddenOutput => (config.n_hidden, config.n_output),
            };
            if pre >= n_pre || post >= n_post {
                return Err(NetworkError::SynapseOutOfRange {
                    matrix: projection,
                    pre,
                    post,
                    n_pre,
                    n_post,
                });
            }
        }
    }
    Ok(())
}

/// Applies a fault to the network immediately.
pub fn inject(network: &mut Network, spec: &FaultSpec) -> Result<(), NetworkError> {
    validate_target(network.config(), &spec.fault)?;
    match spec.fault {
        Fault::SilenceNeuron { layer, index } => network.silence(layer, index),
        Fault::StuckAtFire { layer, index } => network.stick(layer, index),
        Fault::SynapseDrop { projection, pre, post } => {
            network.synapses_mut(projection).drop_synapse(pre, post);
            Ok(())
        }
    }
}

/// Percent L1 deviation of `o_fault` from `o_original`.
pub fn compute_ft(o_original: &[f64], o_fault: &[f64]) -> Result<f64, FaultError> {
    if o_original.len() != o_fault.len() {
        return Err(FaultError::LengthMismatch {
            original: o_original.len(),
            fault: o_fault.len(),
        });
    }
    let baseline: f64 = o_original.iter().map(|v| v.abs()).sum();
    if baseline == 0.0 {
        return Err(FaultError::UndefinedFt);
    }
    let deviation: f64 = o_original.iter().zip(o_fault).map(|(a, b)| (b - a).abs()).sum();
    Ok(100.0 * deviation / baseline)
}

fn compute_ft_counts(o_original: &[u64], o_fault: &[u64]) -> Result<f64, FaultError> {
    let a: Vec<f64> = o_original.iter().map(|&v| v as f64).collect();
    let b: Vec<f64> = o_fault.iter().map(|&v| v as f64).collect();
    compute_ft(&a, &b)
}

/// Improvement attributable to astrocytes; negative means they hurt.
pub fn delta_ft(ft_initial: f64, ft_astro: f64) -> f64 {
    ft_initial - ft_astro
}

/// One hidden-neuron silencing fault per hidden neuron, all at `onset_ms`.
pub fn silence_each_hidden(n_hidden: usize, onset_ms: f64) -> Vec<FaultSpec> {
    (0..n_hidden)
        .map(|index| FaultSpec {
            fault: Fault::SilenceNeuron {
                layer: Layer::Hidden,
                index,
            },
            onset_ms,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialResult {
    pub fault_id: usize,
    pub spec: FaultSpec,
    /// FT with astrocytes disabled; `None` when undefined.
    pub ft_off: Option<f64>,
    /// FT with astrocytes enabled; `None` when undefined.
    pub ft_on: Option<f64>,
}

impl TrialResult {
    pub fn excluded(&self) -> bool {
        self.ft_off.is_none() || self.ft_on.is_none()
    }

    /// `(ft_off - ft_on) / ft_off`, when both are defined and `ft_off > 0`.
    pub fn relative_reduction(&self) -> Option<f64> {
        match (self.ft_off, self.ft_on) {
            (Some(off), Some(on)) if off > 0.0 => Some((off - on) / off),
            _ => None,
        }
    }
}

/// Wall-time statistics of astrocyte update rounds (not deterministic).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct UpdateLatency {
    pub rounds: usize,
    pub mean_ns: f64,
    pub max_ns: u64,
}

impl UpdateLatency {
    fn from_samples(samples: &[u64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        Self {
            rounds: samples.len(),
            mean_ns: samples.iter().sum::<u64>() as f64 / samples.len() as f64,
            max_ns: samples.iter().copied().max().unwrap_or(0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CampaignReport {
    pub trials: Vec<TrialResult>,
    pub ft_initial_percent: f64,
    pub ft_astro_percent: f64,
    pub delta_ft_percent: f64,
    pub exclusions: usize,
    pub astro_update_latency: UpdateLatency,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CampaignSummary {
    pub trials: usize,
    pub ft_initial: f64,
    pub ft_astro: f64,
    pub delta_ft: f64,
    pub exclusions: usize,
}

impl CampaignReport {
    pub fn csv_header() -> &'static str {
        "fault_id,kind,target,onset_ms,ft_off,ft_on"
    }

    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.9}")).unwrap_or_else(|| "NA".into());
        let mut out = format!("{}\n", Self::csv_header());
        for t in &self.trials {
            out.push_str(&format!(
                "{},{},{},{:?},{},{}\n",
                t.fault_id,
                t.spec.fault.kind(),
                t.spec.fault.target(),
                t.spec.onset_ms,
                fmt(t.ft_off),
                fmt(t.ft_on)
            ));
        }
        out
    }

    pub fn summary(&self) -> CampaignSummary {
        CampaignSummary {
            trials: self.trials.len(),
            ft_initial: self.ft_initial_percent,
            ft_astro: self.ft_astro_percent,
            delta_ft: self.delta_ft_percent,
            exclusions: self.exclusions,
        }
    }

    /// Per-trial relative reductions, in fault order.
    pub fn relative_reductions(&self) -> Vec<f64> {
        self.trials.iter().filter_map(|t| t.relative_reduction()).collect()
    }
}

fn run_arm(
    base: &Network,
    config: &SimConfig,
    enabled: bool,
    raster: &SpikeRaster,
    fault: Option<&FaultSpec>,
) -> Result<SimRecord, SimError> {
    let mut astro = config.astro;
    astro.enabled = enabled;
    let mut sim = Simulation::from_network(base.clone(), astro)?;
    if let Some(f) = fault {
        sim.schedule_fault(*f)?;
    }
    sim.run(raster)?;
    Ok(sim.into_record())
}

fn onset_step(spec: &FaultSpec, dt_ms: f64) -> u64 {
    (spec.onset_ms / dt_ms - 1e-9).ceil().max(0.0) as u64
}

fn check_faults(config: &NetworkConfig, workload: &SpikeRaster, faults: &[FaultSpec]) -> Result<(), FaultError> {
    if faults.is_empty() {
        return Err(FaultError::NoFaults);
    }
    let horizon_ms = workload.duration_us() as f64 / 1000.0;
    for f in faults {
        validate_target(config, &f.fault)?;
        if !(f.onset_ms >= 0.0 && f.onset_ms < horizon_ms) {
            return Err(FaultError::OnsetOutsideHorizon {
                onset_ms: f.onset_ms,
                horizon_ms,
            });
        }
    }
    Ok(())
}

fn build_pool(threads: usize) -> Result<rayon::ThreadPool, FaultError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| FaultError::Pool(e.to_string()))
}

/// FT of each fault under a single configuration (astrocytes as configured),
/// in fault order; `None` where FT is undefined.
pub fn probe_ft(
    config: &SimConfig,
    workload: &SpikeRaster,
    faults: &[FaultSpec],
    threads: usize,
) -> Result<Vec<Option<f64>>, FaultError> {
    config.validate()?;
    check_faults(&config.network, workload, faults)?;
    let base = Network::instantiate(&config.network)?;
    let enabled = config.astro.enabled;
    let n_out = config.network.n_output;
    let dt = config.network.dt_ms;
    let pool = build_pool(threads)?;
    let baseline = run_arm(&base, config, enabled, workload, None)?;
    pool.install(|| {
        faults
            .par_iter()
            .map(|spec| {
                let from = onset_step(spec, dt);
                let faulted = run_arm(&base, config, enabled, workload, Some(spec))?;
                Ok(compute_ft_counts(
                    &baseline.output_counts_from(n_out, from),
                    &faulted.output_counts_from(n_out, from),
                )
                .ok())
            })
            .collect()
    })
}

/// Runs every fault with astrocytes off and on and aggregates FT.
///
/// The fault-free run of each arm is shared across trials; it is identical
/// for every fault because all runs start from the same instantiated
/// network. `threads = 0` uses rayon's default pool size. Results do not
/// depend on the thread count.
pub fn run_campaign(
    config: &SimConfig,
    workload: &SpikeRaster,
    faults: &[FaultSpec],
    threads: usize,
) -> Result<CampaignReport, FaultError> {
    if faults.is_empty() {
        return Err(FaultError::NoFaults);
    }
    config.validate()?;
    let base = Network::instantiate(&config.network)?;
    run_campaign_with_network(&base, &config.astro, workload, faults, threads)
}

/// [`run_campaign`] starting from an already-built network, e.g. one with
/// hand-set weights.
pub fn run_campaign_with_network(
    base: &Network,
    astro: &AstroParams,
    workload: &SpikeRaster,
    faults: &[FaultSpec],
    threads: usize,
) -> Result<CampaignReport, FaultError> {
    if faults.is_empty() {
        return Err(FaultError::NoFaults);
    }
    let config = SimConfig {
        network: base.config().clone(),
        astro: *astro,
    };
    config.validate()?;
    check_faults(&config.network, workload, faults)?;
    let n_out = config.network.n_output;
    let dt = config.network.dt_ms;
    let pool = build_pool(threads)?;

    let (baseline_off, baseline_on) = pool.join(
        || run_arm(base, &config, false, workload, None),
        || run_arm(base, &config, true, workload, None),
    );
    let (baseline_off, baseline_on) = (baseline_off?, baseline_on?);

    let trials: Vec<Result<(TrialResult, Vec<u64>), FaultError>> = pool.install(|| {
        faults
            .par_iter()
            .enumerate()
            .map(|(fault_id, spec)| {
                let from = onset_step(spec, dt);
                let off = run_arm(base, &config, false, workload, Some(spec))?;
                let on = run_arm(base, &config, true, workload, Some(spec))?;
                let ft_off = compute_ft_counts(
                    &baseline_off.output_counts_from(n_out, from),
                    &off.output_counts_from(n_out, from),
                )
                .ok();
                let ft_on = compute_ft_counts(
                    &baseline_on.output_counts_from(n_out, from),
                    &on.output_counts_from(n_out, from),
                )
                .ok();
                debug!(fault_id, ?ft_off, ?ft_on, "trial done");
                Ok((
                    TrialResult {
                        fault_id,
                        spec: *spec,
                        ft_off,
                        ft_on,
                    },
                    on.astro_update_ns,
                ))
            })
            .collect()
    });

    let mut results = Vec::with_capacity(trials.len());
    let mut latency_samples = baseline_on.astro_update_ns.clone();
    for t in trials {
        let (trial, ns) = t?;
        latency_samples.extend(ns);
        results.push(trial);
    }
    results.sort_by_key(|t| t.fault_id);

    let kept: Vec<&TrialResult> = results.iter().filter(|t| !t.excluded()).collect();
    let mean = |f: fn(&TrialResult) -> f64| {
        if kept.is_empty() {
            f64::NAN
        } else {
            kept.iter().map(|t| f(t)).sum::<f64>() / kept.len() as f64
        }
    };
    let ft_initial = mean(|t| t.ft_off.unwrap_or(0.0));
    let ft_astro = mean(|t| t.ft_on.unwrap_or(0.0));
    Ok(CampaignReport {
        exclusions: results.len() - kept.len(),
        trials: results,
        ft_initial_percent: ft_initial,
        ft_astro_percent: ft_astro,
        delta_ft_percent: delta_ft(ft_initial, ft_astro),
        astro_update_latency: UpdateLatency::from_samples(&latency_samples),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::WeightInit;
    use proptest::prelude::*;

    #[test]
    fn ft_examples() {
        assert_eq!(compute_ft(&[10.0, 10.0], &[10.0, 10.0]).unwrap(), 0.0);
        assert_eq!(compute_ft(&[100.0], &[27.92]).unwrap(), 72.08);
        assert_eq!(compute_ft(&[0.0, 0.0], &[1.0, 2.0]), Err(FaultError::UndefinedFt));
        assert!(matches!(
            compute_ft(&[1.0], &[1.0, 2.0]),
            Err(FaultError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn delta_examples() {
        assert!((delta_ft(72.08, 8.96) - 63.12).abs() < 0.005);
        assert_eq!(delta_ft(4.5, 4.5), 0.0);
        assert_eq!(delta_ft(10.0, 12.0), -2.0);
    }

    #[test]
    fn inject_bounds() {
        let cfg = NetworkConfig::with_sizes(4, 3, 2, 0);
        let mut n = Network::instantiate(&cfg).unwrap();
        let bad = FaultSpec::at_start(Fault::SilenceNeuron {
            layer: Layer::Hidden,
            index: 3,
        });
        assert!(matches!(
            inject(&mut n, &bad),
            Err(NetworkError::NeuronOutOfRange { index: 3, size: 3, .. })
        ));
        let bad_syn = FaultSpec::at_start(Fault::SynapseDrop {
            projection: Projection::HiddenOutput,
            pre: 0,
            post: 2,
        });
        assert!(inject(&mut n, &bad_syn).is_err());
    }

    #[test]
    fn synapse_drop_zeroes_weight() {
        let cfg = NetworkConfig::with_sizes(4, 3, 2, 0);
        let mut n = Network::instantiate(&cfg).unwrap();
        let spec = FaultSpec::at_start(Fault::SynapseDrop {
            projection: Projection::InputHidden,
            pre: 1,
            post: 2,
        });
        inject(&mut n, &spec).unwrap();
        assert_eq!(n.synapses(Projection::InputHidden).get(1, 2), 0.0);
        n.synapses_mut(Projection::InputHidden).scale_afferent(2, 1.5);
        assert_eq!(n.synapses(Projection::InputHidden).get(1, 2), 0.0);
    }

    /// Three-neuron network (1 input, 1 hidden, 1 output) where every hidden
    /// spike fires the output. Silencing the hidden neuron removes all
    /// output; FT is 100% in both arms.
    fn chain_config() -> SimConfig {
        let mut network = NetworkConfig::with_sizes(1, 1, 1, 0);
        network.init = WeightInit {
            input_scale: 1.0,
            output_scale: 1.0,
        };
        network.w_min = 1.0;
        SimConfig {
            network,
            astro: AstroParams {
                window_ms: 5.0,
                group_size: 1,
                ..Default::default()
            },
        }
    }

    #[test]
    fn disconnected_hidden_neuron_has_zero_ft() {
        let mut network = NetworkConfig::with_sizes(3, 2, 1, 5);
        network.init = WeightInit {
            input_scale: 1.0,
            output_scale: 1.0,
        };
        let mut base = Network::instantiate(&network).unwrap();
        for pre in 0..3 {
            base.synapses_mut(Projection::InputHidden).set(pre, 1, 0.0);
        }
        base.synapses_mut(Projection::HiddenOutput).set(1, 0, 0.0);
        let astro = AstroParams {
            window_ms: 5.0,
            group_size: 1,
            ..Default::default()
        };
        let faults = vec![FaultSpec::at_start(Fault::SilenceNeuron {
            layer: Layer::Hidden,
            index: 1,
        })];
        let raster = SpikeRaster::from_counts(1000, 3, 1, vec![1; 3 * 20]);
        let r = run_campaign_with_network(&base, &astro, &raster, &faults, 1).unwrap();
        assert_eq!(r.trials[0].ft_off, Some(0.0));
        assert_eq!(r.trials[0].ft_on, Some(0.0));
    }

    #[test]
    fn silent_network_trials_are_excluded() {
        let mut cfg = chain_config();
        cfg.network.w_min = 0.0;
        cfg.network.init = WeightInit {
            input_scale: 0.0,
            output_scale: 0.0,
        };
        let raster = SpikeRaster::from_counts(1000, 1, 1, vec![1; 20]);
        let faults = silence_each_hidden(1, 0.0);
        let r = run_campaign(&cfg, &raster, &faults, 1).unwrap();
        assert_eq!(r.exclusions, 1);
        assert!(r.trials[0].excluded());
    }

    #[test]
    fn chain_network_silencing() {
        let cfg = chain_config();
        let raster = SpikeRaster::from_counts(1000, 1, 1, vec![1; 20]);
        let faults = vec![FaultSpec::at_start(Fault::SilenceNeuron {
            layer: Layer::Hidden,
            index: 0,
        })];
        let r = run_campaign(&cfg, &raster, &faults, 1).unwrap();
        assert_eq!(r.trials[0].ft_off, Some(100.0));
        assert_eq!(r.trials[0].ft_on, Some(100.0));
        assert_eq!(r.delta_ft_percent, 0.0);
    }

    #[test]
    fn empty_fault_list_rejected() {
        let raster = SpikeRaster::from_counts(1000, 1, 1, vec![1; 20]);
        assert_eq!(
            run_campaign(&chain_config(), &raster, &[], 1).unwrap_err(),
            FaultError::NoFaults
        );
    }

    #[test]
    fn onset_outside_horizon_rejected() {
        let raster = SpikeRaster::from_counts(1000, 1, 1, vec![1; 20]);
        let f = FaultSpec {
            fault: Fault::SilenceNeuron {
                layer: Layer::Hidden,
                index: 0,
            },
            onset_ms: 20.0,
        };
        assert!(matches!(
            run_campaign(&chain_config(), &raster, &[f], 1),
            Err(FaultError::OnsetOutsideHorizon { .. })
        ));
    }

    proptest! {
        #[test]
        fn ft_of_identical_outputs_is_zero(o in prop::collection::vec(0.0f64..100.0, 1..20)) {
            prop_assume!(o.iter().sum::<f64>() > 0.0);
            prop_assert_eq!(compute_ft(&o, &o).unwrap(), 0.0);
        }

        #[test]
        fn ft_is_scale_invariant(
            pairs in prop::collection::vec((1.0f64..100.0, 0.0f64..100.0), 1..20),
            c in 0.01f64..100.0,
        ) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let ca: Vec<f64> = a.iter().map(|v| v * c).collect();
            let cb: Vec<f64> = b.iter().map(|v| v * c).collect();
            let base = compute_ft(&a, &b).unwrap();
            let scaled = compute_ft(&ca, &cb).unwrap();
            prop_assert!((base - scaled).abs() <= 1e-9 * base.max(1.0));
        }

        #[test]
        fn ft_ignores_deviation_sign(
            pairs in prop::collection::vec((1u32..100, 0u32..50), 1..20),
        ) {
            // integer-valued counts keep both directions exact
            let a: Vec<f64> = pairs.iter().map(|p| (p.0 + 50) as f64).collect();
            let up: Vec<f64> = pairs.iter().map(|p| (p.0 + 50 + p.1) as f64).collect();
            let down: Vec<f64> = pairs.iter().map(|p| (p.0 + 50 - p.1) as f64).collect();
            prop_assert_eq!(compute_ft(&a, &up).unwrap(), compute_ft(&a, &down).unwrap());
        }
    }
}
