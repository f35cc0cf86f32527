use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn c2af(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_c2af")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = c2af(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY_CONFIG: &str = "steps = 8\nbatch_size = 8\neval_interval = 4\nhidden = 3\nconv_channels = [3]\nkernel_sizes = [3]\nfilters = 2\nlearning_rate = 0.01\nheads = [\"complete\", \"concat\"]\n";

fn synth_tiny(dir: &Path) -> std::path::PathBuf {
    let data = dir.join("data.c2af");
    ok(&[
        "synth", "--out", s(&data), "--classes", "3", "--views", "2", "--samples", "40", "--length", "6", "--dims",
        "2,3", "--noise", "0.3", "--confusions", "0-1/", "--seed", "4",
    ]);
    data
}

#[test]
fn synth_is_deterministic_and_config_equivalent() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth_tiny(dir.path());
    let b = dir.path().join("b.c2af");
    let cfg = dir.path().join("synth.toml");
    fs::write(
        &cfg,
        "classes = 3\nviews = 2\nsamples = 40\nlength = 6\ndims = [2, 3]\nnoise = 0.3\nconfusions = \"0-1/\"\nseed = 4\n",
    )
    .unwrap();
    ok(&["synth", "--out", s(&b), "--config", s(&cfg)]);
    let bytes = fs::read(&a).unwrap();
    assert_eq!(bytes, fs::read(&b).unwrap());
    assert_eq!(&bytes[..4], b"C2AF");

    let out = c2af(&["synth", "--out", s(&b), "--classes", "3"]);
    assert!(!out.status.success());
    let out = c2af(&[
        "synth", "--out", s(&b), "--classes", "3", "--views", "1", "--samples", "4", "--length", "4", "--dims", "2",
        "--noise", "0", "--confusions", "0-1", "--seed", "0",
    ]);
    assert!(!out.status.success(), "a design that no view can resolve is rejected");
}

#[test]
fn train_eval_baseline_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_tiny(dir.path());
    let cfg = dir.path().join("train.toml");
    fs::write(&cfg, TINY_CONFIG).unwrap();
    let (ckpt, log) = (dir.path().join("model.ckpt"), dir.path().join("log.jsonl"));
    ok(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&ckpt), "--log", s(&log), "--seed", "2"]);
    let lines: Vec<serde_json::Value> = fs::read_to_string(&log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[1]["step"], 8);

    let log2 = dir.path().join("log2.jsonl");
    let ckpt2 = dir.path().join("model2.ckpt");
    ok(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&ckpt2), "--log", s(&log2), "--seed", "2"]);
    assert_eq!(fs::read(&log).unwrap(), fs::read(&log2).unwrap());
    assert_eq!(fs::read(&ckpt).unwrap(), fs::read(&ckpt2).unwrap());

    let json = dir.path().join("report.json");
    ok(&["eval", "--data", s(&data), "--ckpt", s(&ckpt), "--report", s(&json), "--format", "json"]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(report["method"], "complete");
    assert_eq!(report["seed"], 2);
    assert_eq!(report["samples"], 8);
    assert_eq!(report["fused_confusion"].as_array().unwrap().len(), 3);
    let step = report["step"].as_u64().unwrap();
    let logged = lines.iter().find(|l| l["step"] == step).unwrap();
    assert_eq!(report["fused_accuracy"], logged["fused_accuracy"]["complete"]);

    let csv = dir.path().join("report.csv");
    ok(&["eval", "--data", s(&data), "--ckpt", s(&ckpt), "--report", s(&csv), "--format", "csv"]);
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("field,value\nmethod,complete\n"));
    assert_eq!(text.matches("confusion,").count(), 3);

    for mode in ["concat", "average", "max"] {
        let out = dir.path().join(format!("{mode}.json"));
        ok(&["baseline", "--data", s(&data), "--ckpt", s(&ckpt), "--mode", mode, "--report", s(&out)]);
        let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
        assert_eq!(r["method"], mode);
        assert_eq!(r["fused_accuracy"], logged["fused_accuracy"][mode]);
    }
    assert!(!c2af(&["baseline", "--data", s(&data), "--ckpt", s(&ckpt), "--mode", "median", "--report", s(&json)]).status.success());
    assert!(!c2af(&["eval", "--data", s(&data), "--ckpt", s(&data), "--report", s(&json)]).status.success());
}

#[test]
fn ablate_reports_every_mode_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_tiny(dir.path());
    let cfg = dir.path().join("train.toml");
    fs::write(&cfg, TINY_CONFIG).unwrap();
    let report = dir.path().join("ablation.json");
    let stdout = ok(&[
        "ablate", "--data", s(&data), "--config", s(&cfg), "--modes", "complete,intra_only", "--seeds", "1,2", "--report",
        s(&report),
    ]);
    assert!(stdout.contains("complete") && stdout.contains("intra_only"));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["runs"].as_array().unwrap().len(), 4);
    let accs = r["summary"]["complete"]["accuracies"].as_array().unwrap();
    let mean = (accs[0].as_f64().unwrap() + accs[1].as_f64().unwrap()) / 2.0;
    assert_eq!(r["summary"]["complete"]["mean_accuracy"].as_f64().unwrap(), mean);
    assert!(!c2af(&["ablate", "--data", s(&data), "--config", s(&cfg), "--modes", "concat", "--seeds", "1", "--report", s(&report)]).status.success());
}

#[test]
fn gradcheck_passes_and_rejects_bad_eps() {
    let stdout = ok(&["gradcheck", "--seed", "1", "--eps", "1e-5"]);
    assert!(stdout.lines().last().unwrap().starts_with("PASS"));
    assert!(stdout.contains("view2.lstm"));
    assert!(!c2af(&["gradcheck", "--seed", "1", "--eps", "0"]).status.success());
}
