//! Command-level behavior: output layout, determinism of generation,
//! split flags, dumps, and exit codes.

use std::path::{Path, PathBuf};
use std::process::Command;

use archperf::data::Dataset;
use archperf::graph::OpRegistry;
use archperf::model::TaskKind;

fn archperf() -> Command {
    Command::new(env!("CARGO_BIN_EXE_archperf"))
}

fn gen(dir: &Path, seed: u64, samples: usize, extra: &[&str]) -> PathBuf {
    let out = dir.join(format!("gen_{seed}_{samples}"));
    let status = archperf()
        .args(["gen-synthetic", "--seed", &seed.to_string(), "--samples", &samples.to_string()])
        .args(extra)
        .arg("--out")
        .arg(&out)
        .status()
        .expect("spawn");
    assert!(status.success());
    out
}

fn chain_fixture(dir: &Path) -> PathBuf {
    let path = dir.join("chain.json");
    let doc = serde_json::json!({
        "name": "fixture/0",
        "nodes": [
            {"id": 0, "op": "Conv", "category": "ParamL", "attrs": [3]},
            {"id": 1, "op": "ReLU", "category": "ParamN", "attrs": []},
            {"id": 2, "op": "FC", "category": "ParamL", "attrs": [256, 128]}
        ],
        "edges": [[0, 1], [1, 2]],
        "targets": {"latency_ms": 2.5},
        "platform_id": "syn_gpu_a_fp32"
    });
    std::fs::write(&path, serde_json::to_string_pretty(&doc).unwrap()).unwrap();
    path
}

#[test]
fn gen_synthetic_is_deterministic_and_reparses() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen(dir.path(), 7, 100, &[]);
    let b_out = dir.path().join("again");
    let status = archperf()
        .args(["gen-synthetic", "--seed", "7", "--samples", "100"])
        .arg("--out")
        .arg(&b_out)
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(
        std::fs::read(a.join("dataset.jsonl")).unwrap(),
        std::fs::read(b_out.join("dataset.jsonl")).unwrap()
    );
    assert_eq!(
        std::fs::read(a.join("platforms.json")).unwrap(),
        std::fs::read(b_out.join("platforms.json")).unwrap()
    );

    // Generated files re-parse cleanly through the dataset loader.
    let registry = OpRegistry::standard();
    let platforms = archperf::data::load_platforms(&a.join("platforms.json")).unwrap();
    let ds =
        Dataset::load_jsonl(&a.join("dataset.jsonl"), &platforms, &registry, TaskKind::Latency)
            .unwrap();
    assert_eq!(ds.len(), 100);
    // Oracle manifest is written alongside.
    assert!(a.join("oracle.json").exists());
    assert!(a.join("run_config.json").exists());
}

#[test]
fn gen_synthetic_family_count_flag() {
    let dir = tempfile::tempdir().unwrap();
    let out = gen(dir.path(), 3, 60, &["--families", "3"]);
    let registry = OpRegistry::standard();
    let platforms = archperf::data::load_platforms(&out.join("platforms.json")).unwrap();
    let ds =
        Dataset::load_jsonl(&out.join("dataset.jsonl"), &platforms, &registry, TaskKind::Latency)
            .unwrap();
    assert_eq!(ds.families().len(), 3);
}

#[test]
fn train_smoke_writes_checkpoint_log_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 5, 10, &["--noise-sigma", "0"]);
    let out = dir.path().join("run");
    let status = archperf()
        .args(["train", "--epochs", "1", "--batch-size", "4", "--seed", "1"])
        .args(["--d-model", "16", "--n-heads", "2", "--n-layers", "1"])
        .arg("--data")
        .arg(data.join("dataset.jsonl"))
        .arg("--platforms")
        .arg(data.join("platforms.json"))
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("checkpoint.json").exists());
    assert!(out.join("vocab.txt").exists());
    assert!(out.join("run_config.json").exists());
    let log = std::fs::read_to_string(out.join("log.csv")).unwrap();
    assert!(log.starts_with("epoch,train_loss,eval_mape,eval_acc10,eval_tau\n"));
    assert_eq!(log.lines().count(), 2);
}

#[test]
fn ablation_flags_run_the_table_configurations() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 6, 12, &[]);
    for flags in [
        vec!["--gate-mode", "uniform"],
        vec!["--encoder", "random-init"],
        vec!["--gate-mode", "full-attention", "--mask-mode", "additive"],
    ] {
        let out = dir.path().join(flags.join("_").replace("--", ""));
        let status = archperf()
            .args(["train", "--epochs", "1", "--batch-size", "6", "--seed", "2"])
            .args(["--d-model", "16", "--n-heads", "2", "--n-layers", "1"])
            .args(&flags)
            .arg("--data")
            .arg(data.join("dataset.jsonl"))
            .arg("--platforms")
            .arg(data.join("platforms.json"))
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success(), "flags {flags:?} failed");
        let config = std::fs::read_to_string(out.join("run_config.json")).unwrap();
        if flags.contains(&"uniform") {
            assert!(config.contains("uniform_fixed"));
        }
        if flags.contains(&"random-init") {
            assert!(config.contains("randomly_initialized"));
        }
    }
}

#[test]
fn eval_split_sides_partition_families() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 9, 64, &[]);
    let run = dir.path().join("run");
    let status = archperf()
        .args(["train", "--epochs", "1", "--batch-size", "16", "--seed", "3"])
        .args(["--d-model", "16", "--n-heads", "2", "--n-layers", "1"])
        .arg("--data")
        .arg(data.join("dataset.jsonl"))
        .arg("--platforms")
        .arg(data.join("platforms.json"))
        .arg("--out")
        .arg(&run)
        .status()
        .unwrap();
    assert!(status.success());

    let eval = |side: &str| -> String {
        let out = archperf()
            .args(["eval", "--split", "leave-out:plain_a", "--side", side])
            .arg("--checkpoint")
            .arg(run.join("checkpoint.json"))
            .arg("--data")
            .arg(data.join("dataset.jsonl"))
            .arg("--platforms")
            .arg(data.join("platforms.json"))
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    let train_side = eval("train");
    assert!(!train_side.contains("plain_a"), "train side must exclude the held-out family");
    let test_side = eval("test");
    assert!(test_side.contains("samples:     8"), "{test_side}");

    // Same command twice: identical report.
    assert_eq!(eval("train"), eval("train"));
}

#[test]
fn dump_templates_masks_and_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = chain_fixture(dir.path());

    let templates = archperf()
        .args(["dump", "templates"])
        .arg("--arch")
        .arg(&fixture)
        .output()
        .unwrap();
    assert!(templates.status.success());
    let text = String::from_utf8(templates.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "ParamL Conv 3");
    assert_eq!(lines[1], "ParamN ReLU");
    assert_eq!(lines[2], "ParamL FC 256 128");

    let masks = archperf()
        .args(["dump", "masks"])
        .arg("--arch")
        .arg(&fixture)
        .output()
        .unwrap();
    assert!(masks.status.success());
    let text = String::from_utf8(masks.stdout).unwrap();
    // grandfather grid: single 1 at row 2, column 0.
    let grandfather: Vec<&str> = text
        .lines()
        .skip_while(|l| *l != "grandfather:")
        .skip(1)
        .take(3)
        .collect();
    assert_eq!(grandfather, vec!["0 0 0", "0 0 0", "1 0 0"]);

    let emb = archperf()
        .args(["dump", "embeddings", "--platform", "syn_gpu_a_fp32", "--d-model", "32"])
        .arg("--arch")
        .arg(&fixture)
        .output()
        .unwrap();
    assert!(emb.status.success());
    let text = String::from_utf8(emb.stdout).unwrap();
    // n + 1 rows: three nodes plus the platform token.
    assert_eq!(text.lines().count(), 4);
    assert_eq!(text.lines().next().unwrap().split(',').count(), 32);
}

#[test]
fn predict_reports_value_and_relative_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 5, 10, &["--noise-sigma", "0"]);
    let run = dir.path().join("run");
    assert!(archperf()
        .args(["train", "--epochs", "1", "--batch-size", "4", "--seed", "1"])
        .args(["--d-model", "16", "--n-heads", "2", "--n-layers", "1"])
        .arg("--data")
        .arg(data.join("dataset.jsonl"))
        .arg("--platforms")
        .arg(data.join("platforms.json"))
        .arg("--out")
        .arg(&run)
        .status()
        .unwrap()
        .success());
    let fixture = chain_fixture(dir.path());
    let out = archperf()
        .arg("predict")
        .arg("--checkpoint")
        .arg(run.join("checkpoint.json"))
        .arg("--arch")
        .arg(&fixture)
        .arg("--platforms")
        .arg(data.join("platforms.json"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("fixture/0\t"));
    assert!(text.contains("rel_err"));
}

#[test]
fn exit_codes_distinguish_usage_data_and_training_failures() {
    let dir = tempfile::tempdir().unwrap();

    // Usage error: bad flag value.
    let code = archperf()
        .args(["dump", "nonsense", "--arch", "/nonexistent"])
        .output()
        .unwrap();
    // Unreadable arch file surfaces first as a data error; bad dump kind
    // alone must be usage.
    assert_eq!(code.status.code(), Some(2));
    let fixture = chain_fixture(dir.path());
    let code = archperf()
        .args(["dump", "nonsense"])
        .arg("--arch")
        .arg(&fixture)
        .output()
        .unwrap();
    assert_eq!(code.status.code(), Some(1));
    let code = archperf().args(["train", "--bogus-flag"]).output().unwrap();
    assert_eq!(code.status.code(), Some(1));

    // Data error: missing checkpoint.
    let data = gen(dir.path(), 5, 10, &["--noise-sigma", "0"]);
    let code = archperf()
        .arg("eval")
        .arg("--checkpoint")
        .arg(dir.path().join("missing.json"))
        .arg("--data")
        .arg(data.join("dataset.jsonl"))
        .arg("--platforms")
        .arg(data.join("platforms.json"))
        .output()
        .unwrap();
    assert_eq!(code.status.code(), Some(2));

    // Training failure: an absurd learning rate diverges to non-finite
    // values, reported as exit 3.
    let code = archperf()
        .args(["train", "--epochs", "2", "--batch-size", "5", "--seed", "1", "--lr", "1e200"])
        .args(["--d-model", "16", "--n-heads", "2", "--n-layers", "1"])
        .arg("--data")
        .arg(data.join("dataset.jsonl"))
        .arg("--platforms")
        .arg(data.join("platforms.json"))
        .arg("--out")
        .arg(dir.path().join("diverge"))
        .output()
        .unwrap();
    assert_eq!(
        code.status.code(),
        Some(3),
        "stderr: {}",
        String::from_utf8_lossy(&code.stderr)
    );
}

#[test]
fn out_root_env_var_supplies_default_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let status = archperf()
        .args(["gen-synthetic", "--seed", "1", "--samples", "8"])
        .env("ARCHPERF_OUT", dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    assert!(dir.path().join("gen-synthetic/dataset.jsonl").exists());
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("defaults.json");
    std::fs::write(&config, r#"{"samples": 24, "seed": 9, "noise_sigma": 0.0}"#).unwrap();
    let out = dir.path().join("from_config");
    // --samples overrides the file; seed comes from the file.
    let status = archperf()
        .args(["gen-synthetic", "--samples", "16"])
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let registry = OpRegistry::standard();
    let platforms = archperf::data::load_platforms(&out.join("platforms.json")).unwrap();
    let ds = Dataset::load_jsonl(&out.join("dataset.jsonl"), &platforms, &registry, TaskKind::Latency).unwrap();
    assert_eq!(ds.len(), 16);
    let rc = std::fs::read_to_string(out.join("run_config.json")).unwrap();
    assert!(rc.contains("\"seed\": 9"));
}
