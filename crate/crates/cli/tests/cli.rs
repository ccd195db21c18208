use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use talkmesh_cli::config::FileConfig;
use talkmesh_core::audio::{load_features, write_wav};
use talkmesh_core::manifest::RunManifest;

const SUBCOMMANDS: [&str; 7] = ["ops", "extract", "train", "animate", "eval", "heatmap", "synth"];

fn talkmesh(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_talkmesh"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn talkmesh")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = talkmesh(dir, args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{args:?}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn example_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/example.toml")
}

#[test]
fn help_matches_golden_files() {
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    let here = std::env::temp_dir();
    let mut cases = vec![("talkmesh".to_string(), vec!["--help"])];
    for s in SUBCOMMANDS {
        cases.push((format!("talkmesh-{s}"), vec![s, "--help"]));
    }
    for (name, args) in cases {
        let text = ok(&here, &args);
        let path = golden_dir().join(format!("{name}.txt"));
        if update {
            std::fs::write(&path, &text).unwrap();
            continue;
        }
        let want = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing {}", path.display()));
        assert_eq!(text, want, "help for {name} changed; rerun with UPDATE_GOLDEN=1");
    }
}

#[test]
fn help_documents_every_flag() {
    let here = std::env::temp_dir();
    let expect: [(&str, &[&str]); 7] = [
        ("ops", &["--mesh", "--k", "--out"]),
        ("extract", &["--wav", "--out", "--window-ms", "--hop-ms"]),
        ("train", &["--manifest", "--config", "--out-dir", "--epochs", "--seed"]),
        ("animate", &["--model", "--neutral", "--features", "--fps", "--out-dir", "--ops-cache", "--ops"]),
        ("eval", &["--pred-dir", "--gt-dir", "--neutral", "--lip-mask", "--upper-mask", "--report"]),
        ("heatmap", &["--seq-dir", "--out"]),
        ("synth", &["--seed", "--n", "--out-dir"]),
    ];
    for (cmd, flags) in expect {
        let text = ok(&here, &[cmd, "--help"]);
        for f in flags.iter().chain(&["--threads"]) {
            assert!(text.contains(f), "{cmd} --help lacks {f}");
        }
    }
}

#[test]
fn usage_errors_exit_one() {
    let here = std::env::temp_dir();
    let out = talkmesh(&here, &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage: talkmesh"));
    assert_eq!(talkmesh(&here, &["frobnicate"]).status.code(), Some(1));
    assert_eq!(talkmesh(&here, &["synth", "--n"]).status.code(), Some(1));
    assert_eq!(talkmesh(&here, &["synth", "--n", "x", "--out-dir", "o"]).status.code(), Some(1));
    assert_eq!(talkmesh(&here, &["--threads", "0", "synth", "--n", "1", "--out-dir", "o"]).status.code(), Some(1));
}

#[test]
fn example_config_parses_and_bad_config_is_a_data_error() {
    let text = std::fs::read_to_string(example_config()).unwrap();
    let c = FileConfig::parse(&text, "example.toml").unwrap();
    assert_eq!(c.model.hidden, 32);
    assert_eq!(c.synth.subdivisions, vec![2, 3]);
    assert!(c.feature_dim_set);
    c.model.validate().unwrap();
    c.train.validate().unwrap();

    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[train]\nepoch = 3\n").unwrap();
    let out = talkmesh(dir.path(), &["--config", "bad.toml", "synth", "--n", "1", "--out-dir", "d"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.toml"));
}

#[test]
fn missing_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = talkmesh(dir.path(), &["ops", "--mesh", "nope.obj", "--out", "x.stop"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.obj"));
}

const SMALL: &str = "[model]\nhidden = 16\nblocks = 2\nk = 32\nrnn_hidden = 16\nrnn_layers = 2\n\n\
[train]\nlearning_rate = 3e-3\nseed = 7\nvalidation_fraction = 0.0\n\n\
[synth]\nframes = 12\nsubdivisions = [2]\n";

#[test]
fn synth_train_animate_eval_overfits_one_sample() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("small.toml"), SMALL).unwrap();
    ok(d, &["--config", "small.toml", "synth", "--seed", "7", "--n", "1", "--out-dir", "data"]);
    ok(d, &["--threads", "1", "--config", "small.toml", "train", "--manifest", "data/manifest.toml", "--out-dir", "run", "--epochs", "300"]);
    ok(d, &["--config", "small.toml", "animate", "--model", "run/last.stpm", "--neutral", "data/s000/neutral.obj",
        "--features", "data/s000/features.stfx", "--out-dir", "anim"]);
    let stdout = ok(d, &["eval", "--pred-dir", "anim", "--gt-dir", "data/s000/frames", "--neutral", "data/s000/neutral.obj",
        "--lip-mask", "data/s000/lip.txt", "--upper-mask", "data/s000/upper.txt", "--report", "eval.txt"]);

    // First epoch's loss is measured before any update with a zero-output
    // decoder, so it is the zero-displacement MSE.
    let csv = std::fs::read_to_string(d.join("run/loss.csv")).unwrap();
    let initial: f64 = csv.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    let report = RunManifest::read(&d.join("eval.txt")).unwrap();
    let mse: f64 = report.get("mse").unwrap().parse().unwrap();
    assert!(mse < 0.01 * initial, "eval mse {mse:e} vs initial {initial:e}");
    assert!(stdout.contains("lve_x1e5"));
    assert_eq!(std::fs::read_to_string(d.join("eval.csv")).unwrap().lines().count(), 13);

    for m in ["data/run_manifest.txt", "run/run_manifest.txt", "anim/run_manifest.txt", "eval.txt.manifest.txt"] {
        let man = RunManifest::read(&d.join(m)).unwrap();
        assert!(man.get("command").is_some(), "{m}");
        assert!(man.get("config_sha256").is_some() || m.starts_with("eval"), "{m}");
        assert!(man.entries().iter().any(|(k, v)| k.ends_with("sha256") && v.len() == 64), "{m}");
    }

    ok(d, &["heatmap", "--seq-dir", "anim", "--out", "heat.obj"]);
    let values = std::fs::read_to_string(d.join("heat.txt")).unwrap();
    assert_eq!(values.lines().count(), 162);
}

#[test]
fn animate_with_mismatched_operators_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("small.toml"), SMALL.replace("subdivisions = [2]", "subdivisions = [2, 3]")).unwrap();
    ok(d, &["--config", "small.toml", "synth", "--n", "2", "--out-dir", "data"]);
    ok(d, &["--config", "small.toml", "train", "--manifest", "data/manifest.toml", "--out-dir", "run", "--epochs", "1"]);
    ok(d, &["ops", "--mesh", "data/s001/neutral.obj", "--k", "8", "--out", "big.stop"]);
    assert!(d.join("big.stop.manifest.txt").exists());
    let out = talkmesh(d, &["animate", "--model", "run/best.stpm", "--neutral", "data/s000/neutral.obj",
        "--features", "data/s000/features.stfx", "--out-dir", "anim", "--ops", "big.stop"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("642") && err.contains("162"), "{err}");
}

#[test]
fn extract_writes_loadable_features() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let rate = 16000;
    let samples: Vec<f64> = (0..rate)
        .map(|i| 0.3 * (2.0 * std::f64::consts::PI * 220.0 * i as f64 / rate as f64).sin())
        .collect();
    write_wav(&d.join("tone.wav"), &samples, rate).unwrap();
    ok(d, &["extract", "--wav", "tone.wav", "--out", "tone.stfx", "--hop-ms", "20"]);
    let f = load_features(&d.join("tone.stfx")).unwrap();
    assert_eq!(f.dim(), 26);
    assert!((f.source_rate() - 50.0).abs() < 1e-9);
    let m = RunManifest::read(&d.join("tone.stfx.manifest.txt")).unwrap();
    assert_eq!(m.get("hop_ms"), Some("20"));
    assert_eq!(m.get("frames"), Some(f.frames().to_string().as_str()));
}
