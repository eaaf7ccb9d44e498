use std::collections::HashSet;
use std::path::Path;
use std::process::{Command, Output};

fn cpcal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cpcal")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY_CONFIG: &str = r#"{
  "dataset": {"synth": {"blobs": 4, "per_blob": 30, "dim": 8, "separation": 6.0,
                        "label_noise": 0.0, "background": 0.2, "seed": 3}},
  "features": ["raw"],
  "reducers": ["none", "pca2"],
  "budgets": [5, 50],
  "folds": 3,
  "master_seed": 11
}"#;

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let o = cpcal(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn unknown_flag_is_rejected() {
    let o = cpcal(&["selfcheck", "--fast"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(cpcal(&["--help"]).status.code(), Some(0));
    assert_eq!(cpcal(&["--version"]).status.code(), Some(0));
}

#[test]
fn malformed_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (TINY_CONFIG.replace("\"folds\"", "\"foldz\""), "foldz"),
        (TINY_CONFIG.replace("\"folds\": 3", "\"folds\": \"three\""), "folds"),
        (TINY_CONFIG.replace("\"budgets\": [5, 50]", "\"budgets\": [5, 500]"), "budgets"),
    ];
    for (i, (text, key)) in cases.iter().enumerate() {
        let cfg = dir.path().join(format!("bad{i}.json"));
        std::fs::write(&cfg, text).unwrap();
        let o = cpcal(&["run", "--config", p(&cfg), "--out-dir", p(&dir.path().join("out"))]);
        assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
        assert!(stderr(&o).contains(key), "case {i}: {}", stderr(&o));
    }
}

#[test]
fn bad_worker_count_is_an_input_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_cpcal"))
        .arg("selfcheck")
        .env("CPCAL_WORKERS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("CPCAL_WORKERS"));
}

#[test]
fn selfcheck_passes() {
    let o = cpcal(&["selfcheck"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let out = stdout(&o);
    assert!(out.lines().filter(|l| l.starts_with("PASS")).count() >= 6, "{out}");
    assert!(!out.contains("FAIL"));
}

#[test]
fn synth_then_mal_plan_and_reduce() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = cpcal(&["synth", "--out-dir", p(&data), "--seed", "4"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["features_raw.csv", "features_classifier.csv", "labels.csv", "labelmap.json", "spec.json"] {
        assert!(data.join(f).exists(), "{f} missing");
    }
    let features = data.join("features_raw.csv");
    let o = cpcal(&["mal-plan", "--features", p(&features), "--budget", "5", "--metric", "cosine"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let picks: Vec<usize> = stdout(&o).lines().map(|l| l.parse().unwrap()).collect();
    assert_eq!(picks.len(), 75);
    assert_eq!(picks.iter().collect::<HashSet<_>>().len(), 75);
    assert_eq!(stdout(&cpcal(&["mal-plan", "--features", p(&features), "--budget", "5", "--metric", "cosine"])), stdout(&o));

    let reduced = dir.path().join("pca2.csv");
    let o = cpcal(&["reduce", "--features", p(&features), "--reducer", "pca2", "--out", p(&reduced)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(&reduced).unwrap();
    assert_eq!(text.lines().count(), 1501);
    assert_eq!(text.lines().nth(1).unwrap().split(',').count(), 3);

    let o = cpcal(&["reduce", "--features", p(&features), "--reducer", "umap", "--out", p(&reduced)]);
    assert_eq!(o.status.code(), Some(1));
    let o = cpcal(&["mal-plan", "--features", p(&dir.path().join("missing.csv")), "--budget", "5"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn run_is_reproducible_and_aggregates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.json");
    std::fs::write(&cfg, TINY_CONFIG).unwrap();
    let mut reports = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = cpcal(&["run", "--config", p(&cfg), "--out-dir", p(&out)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        assert!(out.join("manifest.json").exists());
        reports.push(std::fs::read(out.join("report.csv")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    let golden = std::fs::read(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/tiny_report.csv")).unwrap();
    assert_eq!(reports[0], golden, "report.csv drifted from the golden file");

    let report = dir.path().join("a/report.csv");
    let summary = dir.path().join("summary.csv");
    let contrast = dir.path().join("contrast.csv");
    let o = cpcal(&[
        "aggregate",
        "--report",
        p(&report),
        "--out",
        p(&summary),
        "--contrast",
        p(&contrast),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = std::fs::read_to_string(&summary).unwrap();
    assert!(s.starts_with("task,feature,reducer,budget,strategy,n,failed,mean,stderr"));
    // 2 tasks × 2 reducers × 2 budgets × 2 strategies
    assert_eq!(s.lines().count(), 17);
    assert_eq!(std::fs::read_to_string(&contrast).unwrap().lines().count(), 9);

    let o = cpcal(&["aggregate", "--report", p(&report), "--group-by", "budget,colour"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("colour"));
}

fn write_tone(path: &Path, freq: f64, seconds: f64) {
    let spec = hound::WavSpec { channels: 1, sample_rate: 16_000, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let mut w = hound::WavWriter::create(path, spec).unwrap();
    let n = (seconds * 16_000.0) as usize;
    for i in 0..n {
        let t = i as f64 / 16_000.0;
        let sweep = freq * (1.0 + 0.5 * t);
        let v = 0.3 * (2.0 * std::f64::consts::PI * sweep * t).sin();
        w.write_sample((v * 32767.0) as i16).unwrap();
    }
    w.finalize().unwrap();
}

#[test]
fn wav_features_and_cpc_training() {
    let dir = tempfile::tempdir().unwrap();
    let wavs = dir.path().join("wavs");
    std::fs::create_dir(&wavs).unwrap();
    for i in 0..12 {
        write_tone(&wavs.join(format!("utt{i:02}.wav")), 200.0 + 60.0 * i as f64, 0.4);
    }
    let logmel = dir.path().join("logmel.csv");
    let o = cpcal(&["features", "--wav-dir", p(&wavs), "--out", p(&logmel)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(&logmel).unwrap();
    assert_eq!(text.lines().count(), 13);
    assert_eq!(text.lines().nth(1).unwrap().split(',').count(), 601);

    let cfg = dir.path().join("cpc.json");
    std::fs::write(
        &cfg,
        r#"{"model": {"input_dim": 40, "latent_dim": 8, "context_dim": 8, "encoder_layers": 1, "steps": 2, "dropout": 0.0},
            "schedule": {"initial_lr": 0.001, "reduce_factor": 0.7, "reduce_patience": 2, "early_stop_patience": 3, "max_epochs": 3},
            "batch_size": 4, "segment_frames": 20, "val_fraction": 0.2}"#,
    )
    .unwrap();
    let model = dir.path().join("cpc.ckpt");
    let history = dir.path().join("history.json");
    let o = cpcal(&[
        "train-cpc",
        "--wav-dir",
        p(&wavs),
        "--out",
        p(&model),
        "--config",
        p(&cfg),
        "--history",
        p(&history),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(history.exists());

    let cpc = dir.path().join("cpc.csv");
    let o = cpcal(&["features", "--wav-dir", p(&wavs), "--kind", "cpc", "--model", p(&model), "--out", p(&cpc)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(&cpc).unwrap();
    assert_eq!(text.lines().nth(1).unwrap().split(',').count(), 9);

    let o = cpcal(&["features", "--wav-dir", p(&wavs), "--kind", "cpc", "--out", p(&cpc)]);
    assert_eq!(o.status.code(), Some(1));
}
