//! System-level properties of the network, astrocytes and fault campaigns.

use astrosnn::astro::AstroParams;
use astrosnn::events::SpikeRaster;
use astrosnn::faults::{run_campaign, silence_each_hidden, Fault, FaultSpec};
use astrosnn::network::{Layer, Network, NetworkConfig, Projection};
use astrosnn::sim::{SimConfig, Simulation};
use astrosnn::workload::{reference_config, WorkloadSpec, REFERENCE_SEED};
use proptest::prelude::*;

#[test]
fn two_two_one_hand_network_relays_one_spike() {
    let mut cfg = NetworkConfig::with_sizes(2, 2, 1, 0);
    cfg.output.v_th = 2.0;
    let mut net = Network::instantiate(&cfg).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            net.synapses_mut(Projection::InputHidden).set(i, j, 1.0);
        }
        net.synapses_mut(Projection::HiddenOutput).set(i, 0, 1.0);
    }
    let mut total = 0;
    for input in [[1, 0], [0, 0], [0, 0]] {
        let s = net.step(&input).unwrap();
        total += s.output.len();
    }
    assert_eq!(total, 1);
}

#[test]
fn siblings_of_a_silenced_neuron_fire_more_with_astrocytes() {
    let (_, raster) = WorkloadSpec::reference(REFERENCE_SEED, 3000.0).build().unwrap();
    let cfg = reference_config(REFERENCE_SEED);
    let silenced = 5;
    let group = cfg.astro.group_size;
    let fault = FaultSpec::at_start(Fault::SilenceNeuron {
        layer: Layer::Hidden,
        index: silenced,
    });

    let mut rates = Vec::new();
    for enabled in [false, true] {
        let mut sim = Simulation::new(&cfg.with_astro_enabled(enabled)).unwrap();
        sim.schedule_fault(fault).unwrap();
        sim.run(&raster).unwrap();
        // Per-sibling mean rate over every window after the first.
        let windows = &sim.record().windows[1..];
        let per_neuron: Vec<f64> = (0..group)
            .map(|j| windows.iter().map(|w| w.result.hidden_rates_hz[j]).sum::<f64>() / windows.len() as f64)
            .collect();
        assert_eq!(per_neuron[silenced], 0.0);
        rates.push(per_neuron);
    }
    for j in (0..group).filter(|&j| j != silenced) {
        assert!(
            rates[1][j] > rates[0][j],
            "sibling {j}: on {} vs off {}",
            rates[1][j],
            rates[0][j]
        );
    }
}

fn small_config(seed: u64) -> SimConfig {
    let mut network = NetworkConfig::with_sizes(24, 12, 5, seed);
    network.init.input_scale = 0.4;
    network.init.output_scale = 0.6;
    SimConfig {
        network,
        astro: AstroParams {
            group_size: 4,
            window_ms: 20.0,
            target_rate_hz: 40.0,
            ..Default::default()
        },
    }
}

fn random_raster(seed: u64, bins: usize, channels: usize) -> SpikeRaster {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let counts = (0..bins * channels).map(|_| rng.random_bool(0.08) as i32).collect();
    SpikeRaster::from_counts(1000, channels, 1, counts)
}

#[test]
fn campaign_is_independent_of_thread_count() {
    let cfg = small_config(11);
    let raster = random_raster(3, 300, 24);
    let faults = silence_each_hidden(12, 0.0);
    let one = run_campaign(&cfg, &raster, &faults, 1).unwrap();
    let four = run_campaign(&cfg, &raster, &faults, 4).unwrap();
    assert_eq!(one.to_csv(), four.to_csv());
    assert_eq!(one.summary(), four.summary());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn silenced_neurons_never_spike(
        seed in 0u64..1000,
        plan in prop::collection::vec((0usize..3, 0usize..12, 0u32..200), 1..6),
    ) {
        let cfg = small_config(seed);
        let raster = random_raster(seed ^ 0x5eed, 200, 24);
        let mut sim = Simulation::new(&cfg).unwrap();
        let mut silenced_hidden = Vec::new();
        for &(kind, index, onset) in &plan {
            let fault = match kind {
                0 => {
                    silenced_hidden.push((index, onset as u64));
                    Fault::SilenceNeuron { layer: Layer::Hidden, index }
                }
                1 => Fault::StuckAtFire { layer: Layer::Output, index: index % 5 },
                _ => Fault::SynapseDrop { projection: Projection::InputHidden, pre: index, post: index },
            };
            sim.schedule_fault(FaultSpec { fault, onset_ms: onset as f64 }).unwrap();
        }
        // Step by hand so hidden spikes can be checked per step.
        for b in 0..raster.bins() {
            sim.step_bin(raster.bin(b)).unwrap();
            for &j in &sim.last_spikes().hidden {
                let silenced = silenced_hidden.iter().any(|&(i, onset)| i == j as usize && onset <= b as u64);
                prop_assert!(!silenced, "hidden {} spiked at step {} after silencing", j, b);
            }
        }
    }

    #[test]
    fn identical_inputs_give_identical_runs(seed in 0u64..1000) {
        let cfg = small_config(seed);
        let raster = random_raster(seed, 150, 24);
        let run = || {
            let mut sim = Simulation::new(&cfg).unwrap();
            sim.run(&raster).unwrap();
            sim.into_record()
        };
        let (a, b) = (run(), run());
        prop_assert_eq!(a.output_spikes, b.output_spikes);
        prop_assert_eq!(a.windows, b.windows);
    }
}
