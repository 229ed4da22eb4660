//! End-to-end smoke tests for the `waveloc` binary and its exit codes.

use std::process::Command;

use waveloc_core::audio::{write_wav, BinauralWaveform, WavContent};

fn waveloc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_waveloc"))
}

#[test]
fn help_exits_zero() {
    let out = waveloc().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["simulate", "train", "eval", "matrix", "gradcheck"] {
        assert!(text.contains(sub), "help is missing `{sub}`");
    }
}

#[test]
fn usage_errors_exit_one() {
    let out = waveloc().arg("no-such-command").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = waveloc().args(["train", "--data", "x.json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1), "missing required --model");
    let out = waveloc()
        .args(["train", "--data", "x.json", "--model", "conv", "--mode", "mct"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "mct without --test-room");
}

#[test]
fn runtime_errors_exit_two() {
    let out = waveloc()
        .args(["eval", "--data", "/nonexistent.json", "--checkpoint", "/nonexistent.wloc"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}

#[test]
fn gcc_features_prints_one_row_per_frame() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("probe.wav");
    let n = 16000usize; // one second => 99 hop-160 frames of length 320
    let left: Vec<f32> = (0..n).map(|i| (i as f32 * 0.01).sin() * 0.4).collect();
    let wave = BinauralWaveform::new(left.clone(), left).unwrap();
    write_wav(&path, &WavContent::Binaural(wave)).unwrap();

    let out = waveloc().arg("gcc-features").arg("--wav").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    // First line is the resolved-configuration echo, then header + frames.
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("config: seed=0"));
    assert_eq!(lines.len(), 2 + 99);
    assert!(lines[1].starts_with("frame\tlag-18"));
    assert_eq!(lines[2].split('\t').count(), 38);
}
