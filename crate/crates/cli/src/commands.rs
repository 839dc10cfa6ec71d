//! Subcommand bodies. Each builds its artifacts in memory; the caller
//! commits them only when the whole subcommand succeeded.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};
use std::time::Instant;

use astrosnn::dfx::adaptive_loop;
use astrosnn::events::{
    encode_raster, read_ev42, read_event_stream, write_ev42, Event, Polarity, SpikeRaster, EV42_MAGIC,
};
use astrosnn::faults::run_campaign;
use astrosnn::perf::{count_macs, emit_comparison, PerfReport};
use astrosnn::sim::Simulation;
use astrosnn::train::{evaluate, hidden_count_features, train_readout};
use serde::Serialize;
use serde_json::{json, Value};
use tracing::{info, warn};

use crate::config::ExperimentConfig;
use crate::output::Artifacts;
use crate::CliError;

/// MACs per inference shared by the quoted CPU and FPGA reference rows.
pub const REFERENCE_MACS: f64 = 0.269e9;
pub const CPU_REFERENCE_LATENCY_S: f64 = 0.084;
pub const FPGA_REFERENCE_LATENCY_S: f64 = 0.0046;

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Events plus the raster the network consumes.
struct Inputs {
    source: String,
    events: Vec<Event>,
    raster: SpikeRaster,
    /// Quadrant label per sample, synthetic workloads only.
    labels: Option<Vec<usize>>,
    /// Recorded events at or beyond `sim.duration_ms`, left out of the raster.
    truncated: usize,
}

/// Reads a text (`t x y p`) or `.ev42` event file, told apart by the magic.
pub fn read_events(path: &Path) -> Result<Vec<Event>, CliError> {
    let mut file = File::open(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    let mut head = [0u8; 4];
    let n = file.read(&mut head).map_err(runtime)?;
    let file = File::open(path).map_err(runtime)?;
    let events = if n == 4 && head == EV42_MAGIC {
        read_ev42(BufReader::new(file))
    } else {
        read_event_stream(BufReader::new(file))
    };
    events.map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn load_inputs(config: &ExperimentConfig, input: Option<&Path>) -> Result<Inputs, CliError> {
    let recorded: Option<PathBuf> = input.map(Path::to_owned).or_else(|| config.paths.events.clone());
    let spec = config.raster_spec();
    match recorded {
        Some(path) => {
            let events = read_events(&path)?;
            let kept = events.partition_point(|e| e.t_us < spec.window_us);
            let truncated = events.len() - kept;
            if truncated > 0 {
                warn!(truncated, "events beyond sim.duration_ms left out of the raster");
            }
            let raster = encode_raster(&events[..kept], &spec).map_err(runtime)?;
            Ok(Inputs {
                source: path.display().to_string(),
                events,
                raster,
                labels: None,
                truncated,
            })
        }
        None => {
            let workload = config.synthetic_workload().generate();
            let raster = encode_raster(&workload.events, &spec).map_err(runtime)?;
            Ok(Inputs {
                source: "synthetic".to_owned(),
                labels: Some(workload.labels.iter().map(|q| q.index()).collect()),
                events: workload.events,
                raster,
                truncated: 0,
            })
        }
    }
}

fn ev42_bytes(events: &[Event]) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    write_ev42(&mut buf, events).map_err(runtime)?;
    Ok(buf)
}

#[derive(Serialize)]
struct IngestSummary {
    source: String,
    events: usize,
    on: usize,
    off: usize,
    first_t_us: Option<u64>,
    last_t_us: Option<u64>,
    in_roi: usize,
}

/// Parses an event stream and re-emits it as `.ev42`.
pub fn ingest(config: &ExperimentConfig, input: Option<&Path>) -> Result<Artifacts, CliError> {
    let path = input
        .map(Path::to_owned)
        .or_else(|| config.paths.events.clone())
        .ok_or_else(|| runtime("ingest needs --input or paths.events"))?;
    let events = read_events(&path)?;
    let on = events.iter().filter(|e| e.polarity == Polarity::On).count();
    let roi = config.roi();
    let summary = IngestSummary {
        source: path.display().to_string(),
        events: events.len(),
        on,
        off: events.len() - on,
        first_t_us: events.first().map(|e| e.t_us),
        last_t_us: events.last().map(|e| e.t_us),
        in_roi: events.iter().filter(|e| roi.contains(e.x, e.y)).count(),
    };
    info!(events = summary.events, "ingested");
    let mut out = Artifacts::new();
    out.add("events.ev42", ev42_bytes(&events)?);
    out.add_json("ingest_summary.json", &summary);
    Ok(out)
}

#[derive(Serialize)]
struct EncodeSummary {
    source: String,
    events: usize,
    truncated: usize,
    dropped_outside_roi: usize,
    bins: usize,
    bin_width_us: u64,
    cols: usize,
    rows: usize,
    channels: usize,
    total_abs: u64,
    samples: Option<usize>,
}

/// Builds the spike raster (recorded or synthetic events).
pub fn encode(config: &ExperimentConfig, input: Option<&Path>) -> Result<Artifacts, CliError> {
    let inputs = load_inputs(config, input)?;
    let r = &inputs.raster;
    let summary = EncodeSummary {
        source: inputs.source.clone(),
        events: inputs.events.len(),
        truncated: inputs.truncated,
        dropped_outside_roi: r.dropped,
        bins: r.bins(),
        bin_width_us: r.bin_width_us,
        cols: r.cols,
        rows: r.rows,
        channels: r.channels(),
        total_abs: r.total_abs(),
        samples: inputs.labels.as_ref().map(Vec::len),
    };
    let mut out = Artifacts::new();
    out.add("raster.csv", r.to_sparse_csv());
    if let Some(labels) = &inputs.labels {
        let sample_us = config.synthetic_workload().sample_us;
        let mut csv = String::from("sample,t_start_us,quadrant\n");
        for (s, l) in labels.iter().enumerate() {
            csv.push_str(&format!("{s},{},{l}\n", s as u64 * sample_us));
        }
        out.add("labels.csv", csv);
        out.add("events.ev42", ev42_bytes(&inputs.events)?);
    }
    out.add_json("encode_summary.json", &summary);
    Ok(out)
}

#[derive(Serialize)]
struct SimulateSummary {
    source: String,
    steps: usize,
    windows: usize,
    input_spikes: u64,
    hidden_spikes: u64,
    hidden_mean_rate_hz: f64,
    output_spikes: u64,
    astro_enabled: bool,
}

/// One fault-free run with full window and astrocyte telemetry.
pub fn simulate(config: &ExperimentConfig) -> Result<Artifacts, CliError> {
    let inputs = load_inputs(config, None)?;
    let sim_config = config.sim_config();
    let mut sim = Simulation::new(&sim_config).map_err(runtime)?;
    sim.run(&inputs.raster).map_err(runtime)?;
    let record = sim.into_record();

    let n = &sim_config.network;
    let hidden = record.hidden_totals(n.n_hidden);
    let outputs = record.output_counts_from(n.n_output, 0);
    let seconds = inputs.raster.bins() as f64 * config.sim.dt_ms / 1000.0;
    let hidden_spikes: u64 = hidden.iter().sum();
    let summary = SimulateSummary {
        source: inputs.source,
        steps: inputs.raster.bins(),
        windows: record.windows.len(),
        input_spikes: inputs.raster.total_abs(),
        hidden_spikes,
        hidden_mean_rate_hz: hidden_spikes as f64 / n.n_hidden as f64 / seconds,
        output_spikes: outputs.iter().sum(),
        astro_enabled: sim_config.astro.enabled,
    };
    let mut counts = String::from("neuron,count\n");
    for (k, c) in outputs.iter().enumerate() {
        counts.push_str(&format!("{k},{c}\n"));
    }
    let mut out = Artifacts::new();
    out.add("windows.csv", record.windows_csv());
    out.add("astro_telemetry.csv", record.telemetry_csv());
    out.add("output_counts.csv", counts);
    out.add_json("simulate_summary.json", &summary);
    Ok(out)
}

#[derive(Serialize)]
struct FaultsSummary {
    trials: usize,
    ft_initial: f64,
    ft_astro: f64,
    delta_ft: f64,
    exclusions: usize,
    /// Median of `(ft_off - ft_on) / ft_off` over trials with `ft_off > 0`.
    median_relative_reduction: Option<f64>,
    /// Fraction of included trials with `ft_on < ft_off`.
    improved_fraction: Option<f64>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len().is_multiple_of(2) {
        (v[m - 1] + v[m]) / 2.0
    } else {
        v[m]
    })
}

/// Fault campaign: every configured fault with astrocytes off and on.
pub fn faults(config: &ExperimentConfig, threads: Option<usize>) -> Result<Artifacts, CliError> {
    let inputs = load_inputs(config, None)?;
    let specs = config.fault_specs();
    let threads = threads.unwrap_or(config.fault.threads);
    let started = Instant::now();
    let report = run_campaign(&config.sim_config(), &inputs.raster, &specs, threads).map_err(runtime)?;
    let wall_s = started.elapsed().as_secs_f64();

    let s = report.summary();
    let included: Vec<_> = report.trials.iter().filter(|t| !t.excluded()).collect();
    let improved = included
        .iter()
        .filter(|t| matches!((t.ft_on, t.ft_off), (Some(on), Some(off)) if on < off))
        .count();
    let summary = FaultsSummary {
        trials: s.trials,
        ft_initial: s.ft_initial,
        ft_astro: s.ft_astro,
        delta_ft: s.delta_ft,
        exclusions: s.exclusions,
        median_relative_reduction: median(&report.relative_reductions()),
        improved_fraction: (!included.is_empty()).then(|| improved as f64 / included.len() as f64),
    };
    info!(
        ft_initial = s.ft_initial,
        ft_astro = s.ft_astro,
        delta_ft = s.delta_ft,
        "campaign done"
    );
    let mut out = Artifacts::new();
    out.add("faults.csv", report.to_csv());
    out.add_json("faults_summary.json", &summary);
    out.add_json(
        "faults_timing.json",
        &json!({
            "wall_s": wall_s,
            "threads": threads,
            "astro_update_latency": report.astro_update_latency,
        }),
    );
    Ok(out)
}

#[derive(Serialize)]
struct PerfRow {
    name: String,
    #[serde(flatten)]
    report: PerfReport,
}

/// MAC throughput of the configured network, optionally beside the quoted
/// CPU and FPGA reference rows.
pub fn perf(config: &ExperimentConfig) -> Result<Artifacts, CliError> {
    let inputs = load_inputs(config, None)?;
    let sim_config = config.sim_config();
    let steps = inputs.raster.bins() as u64;
    let macs = count_macs(&sim_config.network, steps).map_err(runtime)?;
    let iterations = config.perf.loader_iterations;
    let inference_time_s = match config.perf.inference_time_s {
        Some(t) => t,
        None => {
            let mut total = 0.0;
            for _ in 0..iterations {
                let mut sim = Simulation::new(&sim_config).map_err(runtime)?;
                let started = Instant::now();
                sim.run(&inputs.raster).map_err(runtime)?;
                total += started.elapsed().as_secs_f64();
                if sim.network().mac_count() != macs {
                    return Err(runtime(format!(
                        "live MAC counter {} disagrees with closed form {macs}",
                        sim.network().mac_count()
                    )));
                }
            }
            total
        }
    };
    let mut rows = vec![(
        "simulated".to_owned(),
        PerfReport::new(macs as f64, inference_time_s, iterations).map_err(runtime)?,
    )];
    if config.perf.reference_rows {
        for (name, latency) in [
            ("cpu_reference", CPU_REFERENCE_LATENCY_S),
            ("fpga_reference", FPGA_REFERENCE_LATENCY_S),
        ] {
            rows.push((
                name.to_owned(),
                PerfReport::from_latency(REFERENCE_MACS, latency).map_err(runtime)?,
            ));
        }
    }
    let table = emit_comparison(&rows).map_err(runtime)?;
    let summary: Vec<PerfRow> = rows
        .into_iter()
        .map(|(name, report)| PerfRow { name, report })
        .collect();
    let mut out = Artifacts::new();
    out.add("perf.csv", table.csv);
    out.add("perf.txt", table.text);
    out.add_json("perf_summary.json", &summary);
    Ok(out)
}

/// Greedy live tuning over the `dfx.grid` axes.
pub fn adapt(config: &ExperimentConfig) -> Result<Artifacts, CliError> {
    let inputs = load_inputs(config, None)?;
    let report = adaptive_loop(&config.sim_config(), &inputs.raster, &config.adaptive_schedule()).map_err(runtime)?;
    let mut visited = String::from("overlay,objective\n");
    for e in &report.visited {
        visited.push_str(&format!("{},{:.9}\n", e.point, e.objective));
    }
    let summary = json!({
        "best": report.best,
        "best_overlay": report.best.to_string(),
        "best_objective": report.best_objective,
        "stop": report.stop,
        "rounds": report.rounds.len(),
        "applied": report.applied,
    });
    info!(best = %report.best, objective = report.best_objective, "adaptive loop done");
    let mut out = Artifacts::new();
    out.add("adapt.csv", report.to_csv());
    out.add("adapt_visited.csv", visited);
    out.add_json("adapt_summary.json", &summary);
    Ok(out)
}

/// Adam-trained softmax readout on per-sample hidden spike counts.
pub fn train(config: &ExperimentConfig) -> Result<Artifacts, CliError> {
    let inputs = load_inputs(config, None)?;
    let labels = inputs
        .labels
        .ok_or_else(|| runtime("train needs the synthetic workload for labels; unset paths.events"))?;
    let sample_bins = (config.events.sample_ms / config.sim.dt_ms).round() as usize;
    let features = hidden_count_features(&config.sim_config(), &inputs.raster, sample_bins).map_err(runtime)?;
    let labels = &labels[..features.len()];
    let model = train_readout(&features, labels, &config.train_config()).map_err(runtime)?;
    let metrics = evaluate(&model, &features, labels).map_err(runtime)?;

    let mut weights = String::from("feature,class,weight\n");
    for i in 0..model.n_features {
        for c in 0..model.n_classes {
            weights.push_str(&format!("{i},{c},{:.12e}\n", model.weights[i * model.n_classes + c]));
        }
    }
    for (c, b) in model.bias.iter().enumerate() {
        weights.push_str(&format!("bias,{c},{b:.12e}\n"));
    }
    let last = model.history.last();
    let summary = json!({
        "samples": features.len(),
        "n_features": model.n_features,
        "n_classes": model.n_classes,
        "stopped_epoch": model.stopped_epoch,
        "early_stopped": model.early_stopped,
        "final_epoch": last,
        "metrics": metrics,
    });
    let mut out = Artifacts::new();
    out.add("train_history.csv", model.history_csv());
    out.add("readout_weights.csv", weights);
    out.add_json("train_summary.json", &summary);
    Ok(out)
}

/// Summaries gathered by `report`, in this order.
pub const SUMMARY_FILES: [(&str, &str); 7] = [
    ("ingest", "ingest_summary.json"),
    ("encode", "encode_summary.json"),
    ("simulate", "simulate_summary.json"),
    ("faults", "faults_summary.json"),
    ("perf", "perf_summary.json"),
    ("adapt", "adapt_summary.json"),
    ("train", "train_summary.json"),
];

/// Collects the summaries already present in the output directory.
pub fn report(out_dir: &Path) -> Result<Artifacts, CliError> {
    let mut sections = serde_json::Map::new();
    let mut text = String::new();
    for (name, file) in SUMMARY_FILES {
        let path = out_dir.join(file);
        let Ok(contents) = std::fs::read_to_string(&path) else {
            continue;
        };
        let value: Value = serde_json::from_str(&contents).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        text.push_str(&format!("[{name}]\n"));
        render(&value, "", &mut text);
        text.push('\n');
        sections.insert(name.to_owned(), value);
    }
    if sections.is_empty() {
        return Err(runtime(format!(
            "no summaries in {}; run another subcommand first",
            out_dir.display()
        )));
    }
    let mut out = Artifacts::new();
    out.add("report.txt", text);
    out.add_json("report_summary.json", &Value::Object(sections));
    Ok(out)
}

/// Scalars as `dotted.key = value` lines; arrays and objects are recursed
/// into, except arrays of scalars, which print inline.
fn render(value: &Value, prefix: &str, out: &mut String) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                render(v, &key, out);
            }
        }
        Value::Array(items) if items.iter().any(|v| v.is_object() || v.is_array()) => {
            for (i, v) in items.iter().enumerate() {
                render(v, &format!("{prefix}[{i}]"), out);
            }
        }
        other => out.push_str(&format!("{prefix} = {other}\n")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_even_and_odd_lengths() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }

    #[test]
    fn render_flattens_nested_json() {
        let mut s = String::new();
        render(&json!({"a": 1, "b": {"c": [1, 2]}, "d": [{"e": true}]}), "", &mut s);
        assert_eq!(s, "a = 1\nb.c = [1,2]\nd[0].e = true\n");
    }
}
