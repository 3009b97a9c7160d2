//! End-to-end checks of the `ample` binary: preprocess, stats, run, sweep
//! and ablate over a small synthetic dataset, plus exit codes, rerun
//! determinism and the seed-base environment variable.

use std::path::Path;
use std::process::{Command, Output};

use ample::store::{save_manifest, EmbeddingStore};
use ample::synthetic::{generate_corpus, SyntheticConfig};

fn ample_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ample"))
}

fn run_ok(args: &[&str]) -> Output {
    let output = ample_bin().args(args).output().expect("binary runs");
    assert!(
        output.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

struct Fixture {
    _dir: tempfile::TempDir,
    dataset: String,
    store: String,
    out: String,
    spec: String,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = SyntheticConfig {
        articles: 16,
        dim: 8,
        ..SyntheticConfig::default()
    };
    let (articles, store) = generate_corpus(&config);
    let dataset = dir.path().join("manifest.jsonl");
    let store_path = dir.path().join("store.jsonl");
    save_manifest(&dataset, &articles).expect("manifest writes");
    store.save(&store_path).expect("store writes");

    // A sparse spec file keeps the jobs small; flags layer on top of it.
    let spec_path = dir.path().join("spec.json");
    std::fs::write(
        &spec_path,
        r#"{
  "shots": [2],
  "seeds": 2,
  "epochs": 1,
  "backend": {"hidden": 8, "layers": 1, "heads": 2, "ff_hidden": 16, "positional": true},
  "max_prompt_len": 24
}"#,
    )
    .expect("spec writes");

    Fixture {
        dataset: dataset.to_string_lossy().into_owned(),
        store: store_path.to_string_lossy().into_owned(),
        out: dir.path().join("out").to_string_lossy().into_owned(),
        spec: spec_path.to_string_lossy().into_owned(),
        _dir: dir,
    }
}

#[test]
fn preprocess_builds_a_loadable_store() {
    let f = fixture();
    let out_store = format!("{}_hashed.jsonl", f.store);
    run_ok(&[
        "preprocess",
        "--dataset",
        &f.dataset,
        "--out-store",
        &out_store,
        "--dim",
        "8",
        "--encoder",
        "hash",
    ]);
    let store = EmbeddingStore::load(&out_store).expect("store loads");
    assert_eq!(store.len(), 16);
    assert_eq!(store.dim(), 8);
}

#[test]
fn stats_prints_the_indicator_table() {
    let f = fixture();
    let output = run_ok(&["stats", "--dataset", &f.dataset]);
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("overall emotion score"));
    assert!(stdout.contains("polarity emotion score"));
    assert!(stdout.contains("fake"));
    assert!(stdout.contains("real"));
}

#[test]
fn run_writes_reports_and_reruns_identically() {
    let f = fixture();
    let args = [
        "run",
        "--spec",
        &f.spec,
        "--dataset",
        &f.dataset,
        "--store",
        &f.store,
        "--out",
        &f.out,
    ];
    run_ok(&args);
    let report_path = Path::new(&f.out).join("run_base_shot2.json");
    let first = std::fs::read_to_string(&report_path).expect("report exists");
    assert!(first.contains("\"config_fingerprint\""));
    assert!(first.contains("\"per_seed\""));

    run_ok(&args);
    let second = std::fs::read_to_string(&report_path).expect("report exists");
    assert_eq!(first, second, "rerunning an identical spec must reproduce the report");
}

#[test]
fn seed_base_env_shifts_the_seeds() {
    let f = fixture();
    let output = ample_bin()
        .args([
            "run",
            "--spec",
            &f.spec,
            "--dataset",
            &f.dataset,
            "--store",
            &f.store,
            "--out",
            &f.out,
        ])
        .env("AMPLE_SEED_BASE", "50")
        .output()
        .expect("binary runs");
    assert!(output.status.success());
    let report =
        std::fs::read_to_string(Path::new(&f.out).join("run_base_shot2.json")).unwrap();
    assert!(report.contains("\"seed\": 50"), "seeds not offset: {report}");
    assert!(report.contains("\"seed\": 51"));
}

#[test]
fn sweep_emits_csv_and_plot_data() {
    let f = fixture();
    run_ok(&[
        "sweep",
        "--spec",
        &f.spec,
        "--dataset",
        &f.dataset,
        "--store",
        &f.store,
        "--seeds",
        "1",
        "--alpha-grid",
        "0,1",
        "--out",
        &f.out,
    ]);
    let csv = std::fs::read_to_string(Path::new(&f.out).join("sweep.csv")).unwrap();
    assert!(csv.starts_with("strategy,alpha,f1,acc\n"));
    assert_eq!(csv.lines().count(), 5, "2 alphas x 2 strategies + header: {csv}");
    assert!(Path::new(&f.out).join("sweep_plot.json").exists());
}

#[test]
fn ablate_emits_the_seven_row_table() {
    let f = fixture();
    let output = run_ok(&[
        "ablate",
        "--spec",
        &f.spec,
        "--dataset",
        &f.dataset,
        "--store",
        &f.store,
        "--seeds",
        "1",
        "--out",
        &f.out,
    ]);
    let stdout = String::from_utf8_lossy(&output.stdout);
    for label in ["AMPLE", "-EE", "-SA", "-TM", "-IM", "-FM", "-RFM"] {
        assert!(stdout.contains(label), "table missing {label}:\n{stdout}");
    }
    assert!(Path::new(&f.out).join("ablate_rfm_shot2.json").exists());
}

#[test]
fn failing_grids_exit_nonzero_with_markers() {
    let f = fixture();
    // Shot size 20 exceeds the 8-per-class corpus: every job fails.
    let output = ample_bin()
        .args([
            "run",
            "--spec",
            &f.spec,
            "--dataset",
            &f.dataset,
            "--store",
            &f.store,
            "--shots",
            "20",
            "--out",
            &f.out,
        ])
        .output()
        .expect("binary runs");
    assert!(!output.status.success(), "insufficient data must fail the grid");
    let report =
        std::fs::read_to_string(Path::new(&f.out).join("run_base_shot20.json")).unwrap();
    assert!(report.contains("\"failures\""), "failure markers missing: {report}");
    assert!(report.contains("insufficient data"));
}

#[test]
fn bad_flags_exit_with_config_error() {
    let f = fixture();
    let output = ample_bin()
        .args([
            "run",
            "--dataset",
            &f.dataset,
            "--store",
            &f.store,
            "--emotion",
            "q",
        ])
        .output()
        .expect("binary runs");
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("unknown emotion variant"));
}
