//! End-to-end runs of the `astrosnn` binary: exit-code taxonomy, atomic
//! artifacts, manifests and byte-level reproducibility.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use astrosnn_cli::exit;
use serde_json::Value;

const SHORT: &str = "[sim]\nseed = 3\nduration_ms = 3000.0\n\n[dfx]\nprobe = [0, 64]\n";

fn astrosnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_astrosnn"))
        .args(args)
        .env_remove("ASTROSNN_LOG")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("exp.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn run_in(config: &Path, out: &Path, args: &[&str]) -> Output {
    let mut full: Vec<&str> = args.to_vec();
    full.extend(["--config", config.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    astrosnn(&full)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn files_in(dir: &Path) -> Vec<String> {
    let Ok(entries) = std::fs::read_dir(dir) else {
        return Vec::new();
    };
    let mut names: Vec<String> = entries.map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    names
}

#[test]
fn help_exits_zero_with_usage() {
    let o = astrosnn(&["--help"]);
    assert_eq!(o.status.code(), Some(exit::OK));
    let text = String::from_utf8_lossy(&o.stdout);
    for sub in [
        "ingest", "encode", "simulate", "faults", "perf", "adapt", "train", "report",
    ] {
        assert!(text.contains(sub), "help lacks {sub}: {text}");
    }
}

#[test]
fn unknown_or_missing_subcommand_is_a_usage_error() {
    assert_eq!(astrosnn(&["frobnicate"]).status.code(), Some(exit::USAGE));
    assert_eq!(astrosnn(&[]).status.code(), Some(exit::USAGE));
    assert_eq!(astrosnn(&["faults", "--bogus"]).status.code(), Some(exit::USAGE));
}

#[test]
fn missing_config_exits_3_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run_in(&dir.path().join("absent.toml"), &out, &["faults"]);
    assert_eq!(o.status.code(), Some(exit::CONFIG_MISSING), "{}", stderr(&o));
    assert!(!out.exists(), "output directory created: {:?}", files_in(&out));
}

#[test]
fn config_error_classes_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cases = [
        ("[sim\nseed = 1\n", exit::CONFIG_PARSE, "line 1"),
        ("[astro]\netaa = 0.3\n", exit::CONFIG_UNKNOWN_KEY, "astro.etaa"),
        ("[astro]\neta = -1.0\n", exit::CONFIG_INVALID, "astro.eta"),
        ("[fault]\nthreads = \"many\"\n", exit::CONFIG_INVALID, "fault.threads"),
    ];
    for (text, code, needle) in cases {
        let config = write_config(dir.path(), text);
        let o = run_in(&config, &out, &["simulate"]);
        assert_eq!(o.status.code(), Some(code), "{text:?}: {}", stderr(&o));
        assert!(stderr(&o).contains(needle), "{text:?}: {}", stderr(&o));
        assert!(!out.exists());
    }
}

#[test]
fn runtime_failure_exits_4_with_an_error_manifest_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = write_config(dir.path(), SHORT);
    let o = run_in(&config, &out, &["report"]);
    assert_eq!(o.status.code(), Some(exit::RUNTIME), "{}", stderr(&o));
    assert_eq!(files_in(&out), ["report_manifest.json"]);
    let m = json(&out.join("report_manifest.json"));
    assert_eq!(m["status"], "error");
    assert!(m["error"].as_str().unwrap().contains("no summaries"));
    assert_eq!(m["artifacts"].as_array().unwrap().len(), 0);
}

#[test]
fn simulate_is_byte_reproducible_and_manifested() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SHORT);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run_in(&config, out, &["simulate"]);
        assert_eq!(o.status.code(), Some(exit::OK), "{}", stderr(&o));
    }
    for file in [
        "windows.csv",
        "astro_telemetry.csv",
        "output_counts.csv",
        "simulate_summary.json",
    ] {
        assert_eq!(
            std::fs::read(a.join(file)).unwrap(),
            std::fs::read(b.join(file)).unwrap(),
            "{file}"
        );
    }
    let windows = std::fs::read_to_string(a.join("windows.csv")).unwrap();
    assert_eq!(windows.lines().count(), 1 + 30, "3000 ms in 100 ms windows");

    let m = json(&a.join("simulate_manifest.json"));
    assert_eq!(m["status"], "ok");
    assert_eq!(m["seed"], 3);
    assert_eq!(m["subcommand"], "simulate");
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(m["config_hash"], json(&b.join("simulate_manifest.json"))["config_hash"]);
    assert!(m["finished_unix_ms"].as_u64().unwrap() >= m["started_unix_ms"].as_u64().unwrap());
    let artifacts: Vec<&str> = m["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert_eq!(artifacts.len(), 4);
    assert!(artifacts.iter().all(|p| Path::new(p).exists()));
    // No temporaries left behind.
    assert!(files_in(&a).iter().all(|f| !f.starts_with(".tmp")));
}

#[test]
fn ingest_reproduces_the_golden_container() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = write_config(dir.path(), SHORT);
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data");
    let o = run_in(
        &config,
        &out,
        &["ingest", "--input", data.join("golden_events.txt").to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(exit::OK), "{}", stderr(&o));
    assert_eq!(
        std::fs::read(out.join("events.ev42")).unwrap(),
        std::fs::read(data.join("golden.ev42")).unwrap()
    );
    let s = json(&out.join("ingest_summary.json"));
    assert_eq!(s["events"], 9);
    assert_eq!(s["on"], 5);

    // The container itself ingests back to the same bytes.
    let again = dir.path().join("again");
    let o = run_in(
        &config,
        &again,
        &["ingest", "--input", data.join("golden.ev42").to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(exit::OK), "{}", stderr(&o));
    assert_eq!(
        std::fs::read(again.join("events.ev42")).unwrap(),
        std::fs::read(data.join("golden.ev42")).unwrap()
    );
}

#[test]
fn ingest_reports_malformed_input_as_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = write_config(dir.path(), SHORT);
    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "0.1 1 1 1\n0.05 2 2 0\n").unwrap();
    let o = run_in(&config, &out, &["ingest", "--input", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(exit::RUNTIME));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
    assert_eq!(files_in(&out), ["ingest_manifest.json"]);
}

#[test]
fn encode_synthetic_and_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SHORT);
    let synth = dir.path().join("synth");
    let o = run_in(&config, &synth, &["encode"]);
    assert_eq!(o.status.code(), Some(exit::OK), "{}", stderr(&o));
    assert_eq!(
        files_in(&synth),
        [
            "encode_manifest.json",
            "encode_summary.json",
            "events.ev42",
            "labels.csv",
            "raster.csv"
        ]
    );
    let s = json(&synth.join("encode_summary.json"));
    assert_eq!(s["bins"], 3000);
    assert_eq!(s["channels"], 512);
    assert_eq!(s["samples"], 30);
    let raster = std::fs::read_to_string(synth.join("raster.csv")).unwrap();
    let total: i64 = raster
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<i64>().unwrap())
        .sum();
    assert_eq!(total, s["total_abs"].as_i64().unwrap());

    let rec = dir.path().join("rec");
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden_events.txt");
    let o = run_in(&config, &rec, &["encode", "--input", data.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(exit::OK), "{}", stderr(&o));
    let s = json(&rec.join("encode_summary.json"));
    // Events past the 3 s horizon are left out; of the rest, two lie in the ROI.
    assert_eq!(s["truncated"], 4);
    assert_eq!(s["dropped_outside_roi"], 3);
    assert_eq!(
        std::fs::read_to_string(rec.join("raster.csv")).unwrap(),
        "bin,channel,count\n1,272,2\n"
    );
}

#[test]
fn faults_thread_count_does_not_change_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        &format!("{SHORT}\n[fault]\ntargets = [0, 1, 2, 3, 17, 100]\n"),
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(
        run_in(&config, &a, &["faults", "--threads", "1"]).status.code(),
        Some(exit::OK)
    );
    assert_eq!(
        run_in(&config, &b, &["faults", "--threads", "3"]).status.code(),
        Some(exit::OK)
    );
    for file in ["faults.csv", "faults_summary.json"] {
        assert_eq!(
            std::fs::read(a.join(file)).unwrap(),
            std::fs::read(b.join(file)).unwrap(),
            "{file}"
        );
    }
    let csv = std::fs::read_to_string(a.join("faults.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "fault_id,kind,target,onset_ms,ft_off,ft_on"
    );
    assert_eq!(csv.lines().count(), 7);
    let s = json(&a.join("faults_summary.json"));
    for key in ["ft_initial", "ft_astro", "delta_ft", "exclusions"] {
        assert!(s.get(key).is_some(), "summary lacks {key}");
    }
}

#[test]
fn perf_with_fixed_time_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        &format!("{SHORT}\n[perf]\nloader_iterations = 2\ninference_time_s = 0.5\n"),
    );
    let out = dir.path().join("out");
    let o = run_in(&config, &out, &["perf"]);
    assert_eq!(o.status.code(), Some(exit::OK), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("perf.csv")).unwrap();
    // 3000 steps x (512*128 + 128*40) MACs in 0.25 s per iteration.
    assert_eq!(
        csv,
        "name,macs_g,latency_ms,throughput_gops\n\
         simulated,0.212,250.000,0.8\n\
         cpu_reference,0.269,84.000,3.2\n\
         fpga_reference,0.269,4.600,58.5\n"
    );
    assert!(std::fs::read_to_string(out.join("perf.txt"))
        .unwrap()
        .contains("throughput (GOP/s)"));
}

#[test]
fn perf_timed_run_checks_the_mac_counter() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &format!("{SHORT}\n[perf]\nreference_rows = false\n"));
    let out = dir.path().join("out");
    let o = run_in(&config, &out, &["perf"]);
    assert_eq!(o.status.code(), Some(exit::OK), "{}", stderr(&o));
    let s = json(&out.join("perf_summary.json"));
    assert_eq!(s.as_array().unwrap().len(), 1);
    assert_eq!(s[0]["mac_count"], 3000.0 * (512.0 * 128.0 + 128.0 * 40.0));
}

#[test]
fn adapt_train_and_report_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &format!("{SHORT}\n[train]\nmax_epochs = 50\n"));
    let out = dir.path().join("out");
    for sub in ["adapt", "train", "report"] {
        let o = run_in(&config, &out, &[sub]);
        assert_eq!(o.status.code(), Some(exit::OK), "{sub}: {}", stderr(&o));
    }
    let adapt = std::fs::read_to_string(out.join("adapt.csv")).unwrap();
    assert_eq!(adapt.lines().next().unwrap(), "round,overlay,objective");
    assert!(json(&out.join("adapt_summary.json"))["best_overlay"]
        .as_str()
        .unwrap()
        .starts_with("astro.eta="));

    let history = std::fs::read_to_string(out.join("train_history.csv")).unwrap();
    assert!(history.lines().count() >= 2 && history.lines().count() <= 51);
    let t = json(&out.join("train_summary.json"));
    assert_eq!(t["samples"], 30);
    assert_eq!(t["n_classes"], 4);
    assert!(t["metrics"]["accuracy"].as_f64().unwrap() >= 0.0);

    let r = json(&out.join("report_summary.json"));
    assert!(r.get("adapt").is_some() && r.get("train").is_some());
    assert!(r.get("faults").is_none());
    let text = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(text.contains("[adapt]") && text.contains("[train]"));
}

#[test]
fn train_needs_labelled_synthetic_events() {
    let dir = tempfile::tempdir().unwrap();
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden_events.txt");
    let config = write_config(
        dir.path(),
        &format!("{SHORT}\n[paths]\nevents = \"{}\"\n", data.display()),
    );
    let out = dir.path().join("out");
    let o = run_in(&config, &out, &["train"]);
    assert_eq!(o.status.code(), Some(exit::RUNTIME));
    assert!(stderr(&o).contains("labels"), "{}", stderr(&o));
}

#[test]
fn relative_paths_resolve_against_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let nested = dir.path().join("exp");
    std::fs::create_dir(&nested).unwrap();
    std::fs::copy(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden_events.txt"),
        nested.join("ev.txt"),
    )
    .unwrap();
    let config = write_config(
        &nested,
        &format!("{SHORT}\n[paths]\nout_dir = \"results\"\nevents = \"ev.txt\"\n"),
    );
    let o = astrosnn(&["ingest", "--config", config.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(exit::OK), "{}", stderr(&o));
    assert!(nested.join("results/events.ev42").exists());
}
