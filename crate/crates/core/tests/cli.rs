use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pal_core::report::{Checkpoint, Metrics};
use pal_core::RunConfig;

fn pal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pal"))
        .args(args)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, cfg: &RunConfig) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, cfg.to_toml()).unwrap();
    path
}

fn small_in(dir: &Path) -> (RunConfig, PathBuf) {
    let mut cfg = RunConfig::small();
    cfg.output_dir = dir.join("out").display().to_string();
    let path = write_config(dir, &cfg);
    (cfg, path)
}

#[test]
fn run_writes_five_parseable_artifacts_inside_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, path) = small_in(dir.path());
    let out = pal(&["run", "--config", path.to_str().unwrap()]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let out_dir = Path::new(&cfg.output_dir);
    let mut names: Vec<String> = fs::read_dir(out_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "checkpoint.json",
            "losses.jsonl",
            "matrix.csv",
            "metrics.json",
            "steps.csv"
        ]
    );
    // Nothing besides the config and the output dir appeared.
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 2);

    let m: Metrics =
        serde_json::from_str(&fs::read_to_string(out_dir.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(m.num_tasks, 2);
    assert!(m.fg.is_some() && m.first_task_acc.is_some());
    let ck = Checkpoint::load(&out_dir.join("checkpoint.json")).unwrap();
    assert_eq!(ck.config, cfg);
    for line in fs::read_to_string(out_dir.join("losses.jsonl"))
        .unwrap()
        .lines()
    {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }
    let matrix = fs::read_to_string(out_dir.join("matrix.csv")).unwrap();
    assert_eq!(matrix.lines().next(), Some("task,after_1,after_2"));
}

#[test]
fn repeated_runs_are_byte_identical_and_seed_flag_matters() {
    let dir = tempfile::tempdir().unwrap();
    let (_, path) = small_in(dir.path());
    let cfg = path.to_str().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    for (d, seed) in [(&a, "5"), (&b, "5"), (&c, "6")] {
        let out = pal(&[
            "run",
            "--config",
            cfg,
            "--seed",
            seed,
            "--out",
            d.to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    for f in ["metrics.json", "matrix.csv", "steps.csv", "losses.jsonl"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    // Checkpoints embed the output dir, so compare the models.
    let model = |d: &Path| Checkpoint::load(&d.join("checkpoint.json")).unwrap().model;
    assert_eq!(model(&a), model(&b));
    assert_ne!(model(&a), model(&c));
}

#[test]
fn invalid_config_exits_2_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(
        &path,
        "method = \"pal\"\n[stream]\ntotal_classes = 20\nnum_tasks = 3\n",
    )
    .unwrap();
    let out = pal(&["run", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.toml:4:"), "{err}");

    fs::write(&path, "[pool]\nsize = 4\n").unwrap();
    let out = pal(&["run", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.toml:2:"));
}

#[test]
fn missing_config_file_is_a_runtime_failure() {
    let out = pal(&["run", "--config", "/nonexistent/pal.toml"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sweep_rows_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, path) = small_in(dir.path());
    let out = pal(&[
        "sweep",
        "--config",
        path.to_str().unwrap(),
        "--axis",
        "k",
        "--values",
        "1,2,4",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = fs::read_to_string(Path::new(&cfg.output_dir).join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0], "num_tasks,acc,fg");
    assert!(
        lines[1].starts_with("1,") && lines[1].ends_with(','),
        "K=1 has no FG: {}",
        lines[1]
    );

    let bad_axis = pal(&[
        "sweep",
        "--config",
        path.to_str().unwrap(),
        "--axis",
        "depth",
        "--values",
        "1",
    ]);
    assert_eq!(bad_axis.status.code(), Some(2));
    let bad_value = pal(&[
        "sweep",
        "--config",
        path.to_str().unwrap(),
        "--axis",
        "k",
        "--values",
        "3",
    ]);
    assert_eq!(bad_value.status.code(), Some(2));
}

#[test]
fn degenerate_missing_rate_sweep_matches_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::small();
    cfg.stream.missing_rate = 0.0;
    cfg.output_dir = dir.path().join("out").display().to_string();
    let path = write_config(dir.path(), &cfg);
    let p = path.to_str().unwrap();
    assert!(pal(&["run", "--config", p]).status.success());
    assert!(
        pal(&["sweep", "--config", p, "--axis", "eta_miss", "--values", "0.0"])
            .status
            .success()
    );
    let m: Metrics = serde_json::from_str(
        &fs::read_to_string(Path::new(&cfg.output_dir).join("metrics.json")).unwrap(),
    )
    .unwrap();
    let csv = fs::read_to_string(Path::new(&cfg.output_dir).join("sweep.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[1].parse::<f64>().unwrap(), m.acc);
    assert_eq!(row[2].parse::<f64>().ok(), m.fg);
}

#[test]
fn verify_exit_codes() {
    let ok = pal(&["verify"]);
    assert_eq!(ok.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&ok.stdout);
    assert_eq!(stdout.matches("PASS").count(), 7, "{stdout}");

    let reseeded = pal(&["verify", "--seed", "77"]);
    assert_eq!(reseeded.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&reseeded.stdout).contains("verify seed 77"));

    let bad = pal(&["verify", "--corrupt-update"]);
    assert_eq!(bad.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&bad.stdout);
    assert!(
        stdout.contains("FAIL theorem1_equivalence") && stdout.contains("(seed "),
        "{stdout}"
    );
}

#[test]
fn shipped_default_config_matches_code_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    assert_eq!(RunConfig::load(&path).unwrap(), RunConfig::default());
}
