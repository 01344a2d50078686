use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

fn sfda(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sfda"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn sfda")
}

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")
}

fn run_ok(config: &Path, out: &Path, args: &[&str]) -> Output {
    let mut full = vec!["--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    full.extend_from_slice(args);
    let o = sfda(&full);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn missing_data_section_exits_2_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "out_dir = \"x\"\n");
    let o = sfda(&["--config", cfg.to_str().unwrap(), "synth"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("data"), "{}", stderr(&o));
}

#[test]
fn unknown_key_exits_2_and_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[data]\nkind = \"synthetic\"\n\n[adapt]\ngama = 0.7\n");
    let o = sfda(&["--config", cfg.to_str().unwrap(), "synth"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("gama"), "{}", stderr(&o));
}

#[test]
fn out_of_range_sigma_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = sfda(&["--out", dir.path().to_str().unwrap(), "--sigma", "1.5", "partition"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sigma"));
}

#[test]
fn missing_artifact_exits_3_with_a_hint() {
    let dir = tempfile::tempdir().unwrap();
    let o = sfda(&["--config", smoke_config().to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "partition"]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(err.contains("source.ckpt") && err.contains("sfda train-source"), "{err}");
}

#[test]
fn dry_run_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = smoke_config();
    for cmd in [&["synth"][..], &["train-source"], &["adapt"], &["ablate", "sigma"]] {
        let mut args = vec!["--dry-run"];
        args.extend_from_slice(cmd);
        let o = run_ok(&cfg, &out, &args);
        assert!(String::from_utf8_lossy(&o.stdout).contains("would write"));
    }
    assert!(!out.exists());
}

fn dataset_hashes(out: &Path) -> Vec<String> {
    ["source", "target_train", "target_test"]
        .iter()
        .map(|r| {
            let dir = out.join("data").join(r);
            assert!(dir.join("manifest.json").exists());
            sfda_core::data::dataset_hash(&dir).unwrap()
        })
        .collect()
}

#[test]
fn synth_is_reproducible_under_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    run_ok(&cfg, &a, &["--seed", "4", "synth"]);
    run_ok(&cfg, &b, &["--seed", "4", "synth"]);
    run_ok(&cfg, &c, &["--seed", "5", "synth"]);
    assert_eq!(dataset_hashes(&a), dataset_hashes(&b));
    assert_ne!(dataset_hashes(&a), dataset_hashes(&c));
}

#[test]
fn smoke_pipeline_runs_end_to_end_and_repeats_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let start = Instant::now();
    let chain: [&[&str]; 5] = [&["synth"], &["train-source"], &["partition"], &["adapt"], &["eval"]];
    let out = dir.path().join("run");
    let files = ["source.ckpt", "partition.json", "adapted.ckpt", "teacher.ckpt", "adapt_history.csv", "eval/ours.json"];
    let mut first = Vec::new();
    for pass in 0..2 {
        for step in chain {
            run_ok(&cfg, &out, step);
        }
        let bytes: Vec<Vec<u8>> = files.iter().map(|f| fs::read(out.join(f)).unwrap_or_else(|_| panic!("missing {f}"))).collect();
        if pass == 0 {
            first = bytes;
        } else {
            for (f, (x, y)) in files.iter().zip(first.iter().zip(&bytes)) {
                assert!(x == y, "{f} differs between identical runs");
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 15.0 * 60.0, "two smoke chains took {secs:.0}s");
    let a = out;
    let table = fs::read_to_string(a.join("eval/table.txt")).unwrap();
    assert!(table.contains("Source only") && table.contains("Ours"), "{table}");
    let report: serde_json::Value = serde_json::from_slice(&fs::read(a.join("eval/ours.json")).unwrap()).unwrap();
    assert!(report["mean_dice"].as_f64().unwrap().is_finite());

    // adapting a partition-using variant without the partition is a missing artifact
    fs::remove_file(a.join("partition.json")).unwrap();
    let o = sfda(&["--config", cfg.to_str().unwrap(), "--out", a.to_str().unwrap(), "adapt"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("sfda partition"));
}
