use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const MANIFEST: &str = r#"
seed = 17
out = "out"

[data]
source = "synthetic"
[data.spec]
runs = 6
windows_per_run = 10
window_len = 256
censor_time = 150.0

[splits]
counts = [2, 2, 2]

[train]
loss = "W-RMSE-Comb"
lambda = 0.5
hidden_layers = 2
units_per_layer = 8
dropout = 0.1
batch_size = 32
learning_rate = 0.01
max_epochs = 20
patience = 5

[search]
architectures = 2
max_epochs = 15
patience = 4
[search.space]
units = [8, 16]
max_layers = 3

[filter]
min_r2 = -100.0
max_rmse = 10.0
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bearing-rul"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn manifest(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("experiment.toml");
    fs::write(&p, text).unwrap();
    p
}

fn step(m: &Path, out: &Path, workers: &str, cmd: &str) -> Output {
    let o = run(&["--manifest", m.to_str().unwrap(), "--out", out.to_str().unwrap(), "--workers", workers, cmd]);
    assert!(o.status.success(), "{cmd} failed: {}", stderr(&o));
    o
}

#[test]
fn weibayes_from_records() {
    let o = run(&["weibayes", "--records", "3,4", "--beta", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("eta = 3.53553"), "{}", stdout(&o));

    let o = run(&["weibayes", "--records", "3,4c", "--beta", "1"]);
    assert!(stdout(&o).contains("eta = 7"), "{}", stdout(&o));

    let o = run(&["weibayes", "--records", "3c,4c"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error:"));
}

#[test]
fn prerequisites_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(dir.path(), MANIFEST);
    let ms = m.to_str().unwrap();

    let o = run(&["--manifest", ms, "report"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("run `bearing-rul search` first"), "{}", stderr(&o));

    let o = run(&["--manifest", ms, "features"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bearing-rul synth"), "{}", stderr(&o));

    let o = run(&["--manifest", ms, "filter"]);
    assert!(stderr(&o).contains("run `bearing-rul search` first"), "{}", stderr(&o));

    assert!(!run(&["report"]).status.success());
}

#[test]
fn invalid_manifest_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(dir.path(), &MANIFEST.replace("window_len = 256", "window_length = 256"));
    let o = run(&["--manifest", m.to_str().unwrap(), "synth"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("window_length"), "{}", stderr(&o));

    let m = manifest(dir.path(), &MANIFEST.replace("W-RMSE-Comb", "W-Huber"));
    let o = run(&["--manifest", m.to_str().unwrap(), "synth"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("W-Huber"), "{}", stderr(&o));
}

#[test]
fn artifacts_from_another_seed_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(dir.path(), MANIFEST);
    let ms = m.to_str().unwrap();
    assert!(run(&["--manifest", ms, "synth"]).status.success());
    let o = run(&["--manifest", ms, "--seed", "18", "features"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("manifest hash"), "{}", stderr(&o));
    assert!(stderr(&o).contains("re-run"), "{}", stderr(&o));
}

#[test]
fn full_chain_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(dir.path(), MANIFEST);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (out, workers) in [(&a, "1"), (&b, "3")] {
        for cmd in ["synth", "features", "weibayes", "train", "search", "filter", "report"] {
            step(&m, out, workers, cmd);
        }
    }
    for name in [
        "runs.json",
        "features.csv",
        "weibayes.json",
        "checkpoint.json",
        "results.csv",
        "filtered.csv",
        "report/loss_frequency.csv",
        "report/correlations.csv",
        "report/early_stop.csv",
        "report/summary.txt",
        "report/curves.csv",
        "report/predictions.csv",
        "report/best_checkpoint.json",
    ] {
        let x = fs::read(a.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        let y = fs::read(b.join(name)).unwrap();
        assert!(x == y, "{name} differs between runs");
    }

    let results = fs::read_to_string(a.join("results.csv")).unwrap();
    assert!(results.starts_with("# manifest_hash="));
    assert_eq!(results.lines().count(), 2 + 18);

    let provenance = fs::read_to_string(b.join("provenance.json")).unwrap();
    for cmd in ["synth", "features", "weibayes", "train", "search", "filter", "report"] {
        assert!(provenance.contains(&format!("\"{cmd}\"")), "{cmd} missing from provenance");
    }
    assert!(provenance.contains("\"workers\": \"3\""));

    let summary = fs::read_to_string(a.join("report/summary.txt")).unwrap();
    assert!(summary.contains("best model"));
    assert!(summary.contains("eta:"));

    // A results table from a different seed is refused by report.
    let o = run(&["--manifest", m.to_str().unwrap(), "--out", a.to_str().unwrap(), "--seed", "99", "report"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("manifest hash"), "{}", stderr(&o));
}
