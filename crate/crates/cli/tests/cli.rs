//! The `skl` binary: usage errors, exit codes, config layering, manifests.

use std::path::Path;
use std::process::{Command, Output};

fn skl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skl"))
        .args(args)
        .env("SKL_LOG", "warn")
        .output()
        .expect("spawn skl")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn zero_episodes_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = skl(&["collect", "--episodes", "0", "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_variant_and_unknown_key_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let o = skl(&["collect", "--variant", "medium", "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = skl(&["--set", "predictor.epoch=3", "gradcheck", "--kind", "dense"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("predictor.epoch"));
    let o = skl(&["--set", "predictor.epochs=many", "gradcheck", "--kind", "dense"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gradcheck_passes() {
    let o = skl(&["gradcheck"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let out = stdout(&o);
    for kind in ["conv2d_stride1", "conv2d_stride2", "dense", "lstm_cell", "autoencoder"] {
        assert!(out.lines().any(|l| l.starts_with(kind) && l.ends_with("PASS")), "{kind}: {out}");
    }
    let o = skl(&["gradcheck", "--kind", "nonsense"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn collect_inspect_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, "[collect]\nseed = 7\nepisodes = 2\n[scene]\nvariant = \"short\"\n").unwrap();
    // File sets seed and count; the flag overrides the count.
    let o = skl(&["--config", s(&cfg), "collect", "--episodes", "3", "--out", s(&data)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("seed 7: DONE") && out.contains("seed 9: DONE"), "{out}");
    for seed in 7..10 {
        assert!(data.join(format!("episode_{seed:06}")).join("manifest.json").is_file());
    }

    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(data.join("collect.manifest.run.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "collect");
    assert_eq!(m["config"]["collect.seed"]["source"], "file");
    assert_eq!(m["config"]["collect.episodes"]["source"], "flag");
    assert_eq!(m["config"]["collect.episodes"]["value"], 3);
    assert_eq!(m["config"]["predictor.epochs"]["source"], "default");

    let o = skl(&["inspect", s(&data)]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert_eq!(out.lines().filter(|l| l.starts_with("episode_0000")).count(), 3);
    assert!(out.contains("rgb mean"));
}

#[test]
fn missing_inputs_name_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.skl");
    let o = skl(&["eval", "--policy", s(&missing), "--variant", "short", "--out", s(&tmp.path().join("e.csv"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nope.skl"), "{}", stderr(&o));
}

#[test]
fn render_writes_images() {
    let tmp = tempfile::tempdir().unwrap();
    let o = skl(&["render", "--variant", "long", "--seed", "2", "--out", s(tmp.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ppm = std::fs::read(tmp.path().join("rgb.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n64 64\n255\n"));
    assert_eq!(ppm.len(), b"P6\n64 64\n255\n".len() + 64 * 64 * 3);
    assert!(std::fs::read(tmp.path().join("disparity.pgm")).unwrap().starts_with(b"P5"));
}
