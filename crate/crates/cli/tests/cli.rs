use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn adgan(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adgan"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const TINY: &str = r#"{
  "batch_size": 4,
  "resolution": 32,
  "stage1_iters": 3,
  "stage2_iters": 2,
  "checkpoint_interval": 2,
  "attributes": {"n_age": 3, "n_gender": 2, "n_race": 2},
  "dataset": {"kind": "synthetic", "per_label": 2, "seed": 5},
  "arch": {"base_channels": 4, "style_dim": 8, "res_blocks": 1},
  "labels": {
    "age": ["young", "middle", "old"],
    "gender": ["male", "female"],
    "race": ["european", "african"]
  }
}"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, text).unwrap();
    p
}

fn trained(dir: &Path) -> PathBuf {
    write_config(dir, TINY);
    let o = adgan(dir, &["--config", "config.json", "--output", "run", "train"]);
    assert!(o.status.success(), "{}", stderr(&o));
    dir.join("run/final.adgn")
}

#[test]
fn missing_batch_size_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), &TINY.replace("\"batch_size\": 4,", ""));
    let o = adgan(dir.path(), &["--config", "config.json", "train", "--dry-run"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("batch_size"), "{}", stderr(&o));
}

#[test]
fn unknown_fields_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), &TINY.replace("\"batch_size\"", "\"batchsize\": 1, \"batch_size\""));
    let o = adgan(dir.path(), &["--config", "config.json", "train", "--dry-run"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("batchsize"), "{}", stderr(&o));
}

#[test]
fn dry_run_trains_nothing() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), TINY);
    let o = adgan(dir.path(), &["--config", "config.json", "--output", "run", "train", "--dry-run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("config valid"));
    assert!(!dir.path().join("run").exists());
}

#[test]
fn train_writes_checkpoints_metrics_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let final_ck = trained(dir.path());
    let run = dir.path().join("run");
    assert!(final_ck.exists());
    assert!(run.join("checkpoint-000002.adgn").exists());
    assert!(run.join("checkpoint-000004.adgn").exists());
    let metrics = std::fs::read_to_string(run.join("metrics.tsv")).unwrap();
    assert!(metrics.lines().any(|l| l.starts_with("4\tloss_f\t")), "{metrics}");
    let config = std::fs::read_to_string(run.join("config.json")).unwrap();
    assert!(config.contains("\"batch_size\": 4"));
}

#[test]
fn synthesize_emits_one_column_per_age_group_and_leaves_the_checkpoint_alone() {
    let dir = tempfile::tempdir().unwrap();
    let ck = trained(dir.path());
    let before = std::fs::read(&ck).unwrap();

    let o = adgan(dir.path(), &["--config", "config.json", "--output", "faces", "synth", "export"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let input = "faces/a0_g1_r0_0000.png";
    let ck_arg = ck.to_str().unwrap();

    let o = adgan(dir.path(), &["--output", "grid.png", "synthesize", "--checkpoint", ck_arg, "--input", input]);
    assert!(o.status.success(), "{}", stderr(&o));
    let img = image::open(dir.path().join("grid.png")).unwrap();
    assert_eq!((img.width(), img.height()), (4 * 32 + 3 * 2, 32));
    assert!(stdout(&o).contains("gender female, race european"), "{}", stdout(&o));

    let o = adgan(
        dir.path(),
        &[
            "--output", "swap.png", "synthesize", "--checkpoint", ck_arg, "--input", input,
            "--attributes", "race=african", "gender=male",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("gender male, race african"), "{}", stdout(&o));

    // same seed and inputs give byte-identical files
    let o = adgan(dir.path(), &["--output", "again.png", "synthesize", "--checkpoint", ck_arg, "--input", input]);
    assert!(o.status.success());
    assert_eq!(
        std::fs::read(dir.path().join("grid.png")).unwrap(),
        std::fs::read(dir.path().join("again.png")).unwrap()
    );

    let o = adgan(
        dir.path(),
        &["synthesize", "--checkpoint", ck_arg, "--input", input, "--attributes", "race=martian"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("european"), "{}", stderr(&o));

    assert_eq!(std::fs::read(&ck).unwrap(), before);
}

#[test]
fn evaluate_prints_a_table_and_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let ck = trained(dir.path());
    let o = adgan(
        dir.path(),
        &["--output", "report.json", "evaluate", "--checkpoint", ck.to_str().unwrap(), "--samples", "6"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("97.50"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(json["groups"].as_array().unwrap().len(), 3);
}

#[test]
fn resume_continues_to_the_configured_end() {
    let dir = tempfile::tempdir().unwrap();
    trained(dir.path());
    let o = adgan(
        dir.path(),
        &["--output", "resumed", "train", "--resume", "run/checkpoint-000002.adgn"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read(dir.path().join("run/final.adgn")).unwrap(),
        std::fs::read(dir.path().join("resumed/final.adgn")).unwrap()
    );
}

#[test]
fn data_and_checkpoint_errors_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("junk.adgn"), b"not a checkpoint").unwrap();
    let o = adgan(dir.path(), &["evaluate", "--checkpoint", "junk.adgn"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("bad magic"), "{}", stderr(&o));

    let manifest = TINY.replace(
        r#"{"kind": "synthetic", "per_label": 2, "seed": 5}"#,
        r#"{"kind": "manifest", "path": "none.csv", "binning": "morph"}"#,
    );
    write_config(dir.path(), &manifest);
    let o = adgan(dir.path(), &["--config", "config.json", "train", "--dry-run"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = adgan(dir.path(), &["gradcheck", "--seeds", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("dis_loss"));
}
