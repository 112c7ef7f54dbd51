//! Runs the built binary and checks outputs and exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn flownav(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flownav")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const TINY: &str = r#"
seed = 3
[arch]
encoder = [16]
hidden = 8
head = [8]
[train]
batch_size = 2
horizon = 10
threads = 1
checkpoint_every = 0
"#;

fn train_tiny(dir: &Path) -> std::path::PathBuf {
    let cfg = dir.join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let out = dir.join("run");
    let o = flownav(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--iterations", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("checkpoint="));
    out
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&flownav(&[])), 1);
    assert_eq!(code(&flownav(&["fly"])), 1);
    assert_eq!(code(&flownav(&["benchmark", "--resolution", "48by64"])), 1);
    assert_eq!(code(&flownav(&["--help"])), 0);
}

#[test]
fn gradcheck_exit_codes() {
    let ok = flownav(&["gradcheck", "--steps", "6"]);
    assert_eq!(code(&ok), 0);
    let report: serde_json::Value = serde_json::from_str(&stdout(&ok)).unwrap();
    assert!(report["max_rel_error"].as_f64().unwrap() < 1e-5);
    // an impossible tolerance is a failed check, not a crash
    assert_eq!(code(&flownav(&["gradcheck", "--steps", "6", "--tol", "0"])), 3);
    // horizon outside the supported range is a runtime error
    assert_eq!(code(&flownav(&["gradcheck", "--steps", "30"])), 2);
}

#[test]
fn benchmark_reports_rate() {
    let o = flownav(&["benchmark", "--threads", "1", "--frames-per-thread", "5"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("fps="));
    assert_eq!(code(&flownav(&["benchmark", "--threads", "1", "--frames-per-thread", "5", "--min-fps", "1e12"])), 3);
}

#[test]
fn train_then_eval_and_render() {
    let dir = tempfile::tempdir().unwrap();
    let run = train_tiny(dir.path());
    assert!(run.join("config.toml").is_file());
    assert!(run.join("metrics.jsonl").is_file());
    let ckpt = run.join("final.ckpt");
    let ckpt = ckpt.to_str().unwrap();

    let evo = dir.path().join("eval");
    let o = flownav(&["eval", "--ckpt", ckpt, "--episodes", "2", "--out", evo.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("success_rate="));
    assert!(evo.join("report.json").is_file());
    let csv = evo.join("episode_000.csv");
    assert!(csv.is_file());

    let noisy = flownav(&["eval", "--ckpt", ckpt, "--episodes", "1", "--noise", "gaussian_sigma=0.5"]);
    assert_eq!(code(&noisy), 0);
    assert_eq!(code(&flownav(&["eval", "--ckpt", ckpt, "--episodes", "1", "--noise", "sigma=2"])), 1);
    assert_eq!(code(&flownav(&["eval", "--ckpt", ckpt, "--episodes", "1", "--min-success", "1.5"])), 3);
    assert_eq!(code(&flownav(&["eval", "--ckpt", dir.path().join("nope.ckpt").to_str().unwrap()])), 2);

    // re-render the logged trajectory in an obstacle-free scene
    let scene = dir.path().join("scene.json");
    let bounds = flownav::scene::GenConfig::default().bounds();
    flownav::io::write_scene(&scene, &flownav::scene::Scene::new(vec![], bounds, Some(0.0)).unwrap()).unwrap();
    let frames = dir.path().join("frames");
    let o = flownav(&[
        "render",
        "--scene",
        scene.to_str().unwrap(),
        "--trajectory",
        csv.to_str().unwrap(),
        "--out",
        frames.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(frames.join("depth_00000.pgm").is_file());
    assert!(frames.join("depth_00000.dpth").is_file());
    assert!(frames.join("flow_00001.flo").is_file());
}

#[test]
fn bad_config_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nbatchsize = 4\n").unwrap();
    let o = flownav(&["train", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("batchsize"));
}
