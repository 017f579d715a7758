use std::path::Path;
use std::process::Command;

fn refcut(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_refcut"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "refcut {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

const TINY: &str = r#"
epochs = 1
steps_per_epoch = 2
batch_size = 2
decay_epoch = 1
log_every = 1
eval_every = 1
eval_samples = 4
checkpoint_every = 0

[model]
input_size = 32
patch_size = 8
embed_dim = 16
depth = 1
heads = 2
mlp_ratio = 2
decoder_dim = 8
prompt_hidden = 16
disk_radius = 2
"#;

#[test]
fn generate_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let d = data.to_str().unwrap();
    for (split, seed) in [("train", "0"), ("val", "1"), ("test", "2")] {
        refcut(&[
            "generate", "--out", d, "--split", split, "--seed", seed, "--instances", "2", "--categories", "3",
            "--size", "48",
        ]);
    }
    assert!(data.join("train/manifest.json").is_file());

    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let run = dir.path().join("run");
    refcut(&["train", "--config", cfg.to_str().unwrap(), "--data", d, "--out", run.to_str().unwrap()]);
    let ckpt = run.join("model.safetensors");
    assert!(ckpt.is_file());
    let metrics = std::fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    assert!(metrics.lines().any(|l| l.contains("eval_iou_at_1")), "{metrics}");

    let csv = dir.path().join("report.csv");
    let json = dir.path().join("report.json");
    let manifest = dir.path().join("samples.jsonl");
    let out = refcut(&[
        "eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", d, "--modes", "none,both", "--max-clicks", "3",
        "--csv", csv.to_str().unwrap(), "--json", json.to_str().unwrap(), "--manifest",
        manifest.to_str().unwrap(), "--polygon", "1,8", "--scale", "0.5",
    ]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = stdout.lines().collect();
    assert!(lines[0].starts_with("guidance,"));
    assert!(lines[1].starts_with("none,") && lines[2].starts_with("both,"));
    assert!(stdout.contains("polygon:8") && stdout.contains("scale:0.5"));
    let reports: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(reports.as_array().unwrap().len(), 2);
    assert!(Path::new(&manifest).is_file());
}

#[test]
fn rejects_unknown_mode() {
    let out = Command::new(env!("CARGO_BIN_EXE_refcut"))
        .args(["eval", "--checkpoint", "/nonexistent", "--data", "/nonexistent", "--modes", "sideways"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
