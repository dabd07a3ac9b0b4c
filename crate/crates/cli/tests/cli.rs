use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use msl_cli::config::{DataSource, SyntheticSection, DEFAULT_OUT_DIR, DEFAULT_TASKS, OUT_DIR_ENV};
use msl_cli::{parse_config, CliError, Settings};
use msl_core::trainer::{Method, TrainConfig};
use serde_json::Value;

const SMOKE: &str = "\
tasks = 1
epochs_per_domain = 1
gamma = 0.96
method = [\"msl_mov\", \"erm\"]

[synthetic]
num_classes = 2
m_domains = 2
per_cell_count = 10
";

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn msl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msl"))
        .args(args)
        .env_remove(OUT_DIR_ENV)
        .output()
        .unwrap()
}

fn run_in(dir: &Path, config: &str, extra: &[&str]) -> (Output, PathBuf) {
    let cfg = write_config(dir, config);
    let out = dir.join("out");
    let mut args = vec!["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    (msl(&args), out)
}

fn report(out: &Path, name: &str) -> Value {
    let text = std::fs::read_to_string(out.join("reports").join(format!("{name}.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn smoke_run_is_fast_and_complete() {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let (output, out) = run_in(dir.path(), SMOKE, &[]);
    assert!(start.elapsed() < Duration::from_secs(10));
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert_eq!(stdout, std::fs::read_to_string(out.join("summary.csv")).unwrap());
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines[0], "method,heldout_0,heldout_1");
    assert!(lines[1].starts_with("msl_mov,") && lines[2].starts_with("erm,"));
    for name in ["msl_mov_heldout0_seed0", "msl_mov_heldout1_seed0", "erm_heldout0_seed0", "erm_heldout1_seed0"] {
        let r = report(&out, name);
        assert_eq!(r["schema"], "msl-report/1");
        assert_eq!(r["seeds"]["training_seed"], 0);
        assert!(r["timing"]["wall_clock_seconds"].as_f64().unwrap() >= 0.0);
        let body: msl_core::trainer::ExperimentReport = serde_json::from_value(r["report"].clone()).unwrap();
        body.verify().unwrap();
    }
    let head = out.join("heads").join("msl_mov_heldout0_seed0_rep0.txt");
    let loaded = msl_core::msl_head::MslHead::load(&head).unwrap();
    assert_eq!(loaded.num_classes(), 2);
    assert!(!out.join("heads").join("erm_heldout0_seed0_rep0.txt").exists());
}

#[test]
fn reruns_are_byte_identical_apart_from_timing() {
    let strip = |mut v: Value| {
        v.as_object_mut().unwrap().remove("timing");
        serde_json::to_string(&v).unwrap()
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (_, out_a) = run_in(a.path(), SMOKE, &["--seed", "4,5"]);
    let (_, out_b) = run_in(b.path(), SMOKE, &["--seed", "4,5", "--jobs", "2"]);
    let mut names: Vec<_> = std::fs::read_dir(out_a.join("reports")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 8);
    for name in names {
        let name = name.to_str().unwrap().trim_end_matches(".json").to_string();
        assert_eq!(strip(report(&out_a, &name)), strip(report(&out_b, &name)), "{name}");
    }
    for rel in ["summary.csv", "heads/msl_mov_heldout1_seed5_rep4.txt"] {
        assert_eq!(std::fs::read(out_a.join(rel)).unwrap(), std::fs::read(out_b.join(rel)).unwrap());
    }
}

#[test]
fn invalid_data_path_exits_2_without_reports() {
    let dir = tempfile::tempdir().unwrap();
    let (output, out) = run_in(dir.path(), "features = \"/no/such/table.csv\"\n", &[]);
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("/no/such/table.csv"));
    assert!(!out.exists());
}

#[test]
fn flag_data_source_replaces_the_file_one() {
    let dir = tempfile::tempdir().unwrap();
    let (output, out) = run_in(dir.path(), SMOKE, &["--features", "/no/such/table.csv"]);
    assert_eq!(output.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn bogus_method_lists_valid_names() {
    let dir = tempfile::tempdir().unwrap();
    let (output, out) = run_in(dir.path(), "method = \"bogus\"\n", &[]);
    assert_eq!(output.status.code(), Some(2));
    let err = String::from_utf8_lossy(&output.stderr);
    for m in Method::ALL {
        assert!(err.contains(m.name()), "{err}");
    }
    assert!(!out.exists());
    let (output, _) = run_in(dir.path(), "", &["--method", "bogus"]);
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("finetune_no_memory"));
}

#[test]
fn unknown_key_is_rejected_with_its_name() {
    let dir = tempfile::tempdir().unwrap();
    let (output, out) = run_in(dir.path(), "gama = 0.5\n", &[]);
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("gama"));
    assert!(!out.exists());
    let (output, _) = run_in(dir.path(), "[synthetic]\nnum_clases = 3\n", &[]);
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("num_clases"));
}

#[test]
fn empty_config_gives_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "");
    let cfg = parse_config(&path, Settings::default()).unwrap();
    assert_eq!(cfg.methods, vec![Method::MslMov]);
    assert_eq!(cfg.seeds, vec![0]);
    assert_eq!(cfg.held_out, None);
    assert_eq!(cfg.tasks, DEFAULT_TASKS);
    assert_eq!(cfg.data, DataSource::Synthetic(SyntheticSection::default()));
    assert_eq!(cfg.train, TrainConfig::default());
    assert_eq!(cfg.distill, None);
    if std::env::var_os(OUT_DIR_ENV).is_none() {
        assert_eq!(cfg.out, PathBuf::from(DEFAULT_OUT_DIR));
    }
}

#[test]
fn flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "gamma = 0.96\nseed = [1, 2]\n");
    let flags = Settings {
        gamma: Some(0.5),
        ..Default::default()
    };
    let cfg = parse_config(&path, flags).unwrap();
    assert_eq!(cfg.train.gamma, 0.5);
    assert_eq!(cfg.seeds, vec![1, 2]);

    let (output, out) = run_in(dir.path(), SMOKE, &["--gamma", "0.5", "--method", "msl_mov", "--held-out", "1"]);
    assert!(output.status.success());
    assert_eq!(report(&out, "msl_mov_heldout1_seed0")["report"]["config"]["gamma"], 0.5);
    assert!(!out.join("reports").join("erm_heldout1_seed0.json").exists());
}

#[test]
fn invalid_values_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for (text, extra) in [
        ("gamma = 2.0\n", vec![]),
        ("held_out = 9\n", vec![]),
        ("tasks = 50\n", vec![]),
        ("learning_rate = \"fast\"\n", vec![]),
        ("", vec!["--activation", "sigmoid"]),
    ] {
        let (output, out) = run_in(dir.path(), text, &extra);
        assert_eq!(output.status.code(), Some(2), "{text} {extra:?}");
        assert!(!out.exists());
    }
    let missing = dir.path().join("missing.toml");
    assert!(matches!(parse_config(&missing, Settings::default()), Err(CliError::Config(_))));
}

#[test]
fn failed_cells_are_marked_and_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let (output, out) = run_in(dir.path(), SMOKE, &["--learning-rate", "1e300", "--method", "msl_mov"]);
    assert_eq!(output.status.code(), Some(1));
    assert!(out.join("reports").join("msl_mov_heldout0_seed0.FAILED.txt").exists());
    assert!(!out.join("reports").join("msl_mov_heldout0_seed0.json").exists());
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.contains("msl_mov,FAILED,FAILED"), "{summary}");
}

#[test]
fn output_directory_defaults_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMOKE);
    let out = dir.path().join("from-env");
    let output = Command::new(env!("CARGO_BIN_EXE_msl"))
        .args(["run", "--config", cfg.to_str().unwrap(), "--method", "erm"])
        .env(OUT_DIR_ENV, &out)
        .output()
        .unwrap();
    assert!(output.status.success());
    assert!(out.join("summary.csv").exists());
}
