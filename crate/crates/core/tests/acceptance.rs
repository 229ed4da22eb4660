//! End-to-end acceptance suite. Each numbered check prints one PASS/FAIL
//! line; the test fails if any check fails. The heavy checks share one
//! rendered dataset and one trained model, so order matters.

use std::path::PathBuf;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use waveloc_core::audio::{BinauralFrame, FRAME_LEN, SAMPLE_RATE};
use waveloc_core::dsp::gammatone::{design_gammatone_bank, NORM_NFFT};
use waveloc_core::dsp::{argmax_lag, fft_magnitude, gcc_phat, gcc_phat_raw};
use waveloc_core::harness::{
    band_pass_fraction, chunk_estimate, evaluate_chunks, export_kernel_spectra, train,
    ExperimentSpec, TrainingMode,
};
use waveloc_core::models::{
    build_model, load_checkpoint, predict_frame, save_checkpoint, CheckpointMetadata, ModelConfig,
    ModelInput, ModelKind, NUM_CLASSES,
};
use waveloc_core::nn::{gradcheck, ModelGraph, TrainingSchedule};
use waveloc_core::sim::dataset::{make_dataset, DatasetManifest, ResolvedManifest, SplitCounts};
use waveloc_core::sim::room::{image_source_rir, RoomSpec};
use waveloc_core::sim::Split;

type CheckResult = Result<String, String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn random_frame(rng: &mut ChaCha8Rng) -> BinauralFrame {
    let left: Vec<f32> = (0..FRAME_LEN).map(|_| rng.random_range(-0.5..0.5)).collect();
    let right: Vec<f32> = (0..FRAME_LEN).map(|_| rng.random_range(-0.5..0.5)).collect();
    BinauralFrame::from_slices(&left, &right).unwrap()
}

/// 1. Every gammatone channel peaks at 0 dB near its centre frequency.
fn check_gammatone() -> CheckResult {
    let started = Instant::now();
    let bank = design_gammatone_bank();
    let bin_hz = SAMPLE_RATE as f64 / NORM_NFFT as f64;
    let mut worst_gain: f64 = 0.0;
    let mut worst_off: f64 = 0.0;
    for (ch, spec) in bank.specs().iter().enumerate() {
        let ir: Vec<f64> = bank
            .impulse_response(ch)
            .iter()
            .map(|&v| v as f64)
            .collect();
        let mag = fft_magnitude(&ir, NORM_NFFT);
        let (peak_bin, peak) = mag
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        let gain_err = (peak - 1.0).abs();
        let off = (peak_bin as f64 * bin_hz - spec.centre_frequency).abs();
        let tol_hz = (0.05 * spec.centre_frequency).max(2.0 * bin_hz);
        if gain_err > 1e-3 {
            return Err(format!(
                "channel {ch} ({:.0} Hz): peak gain error {gain_err:.2e}",
                spec.centre_frequency
            ));
        }
        if off > tol_hz {
            return Err(format!(
                "channel {ch}: peak {off:.1} Hz away from {:.0} Hz centre",
                spec.centre_frequency
            ));
        }
        worst_gain = worst_gain.max(gain_err);
        worst_off = worst_off.max(off);
    }
    let secs = started.elapsed().as_secs_f64();
    if secs > 5.0 {
        return Err(format!("took {secs:.1} s, budget 5 s"));
    }
    Ok(format!(
        "32 channels, worst gain error {worst_gain:.1e}, worst centre offset {worst_off:.1} Hz, {secs:.2} s"
    ))
}

/// 2. Analytic gradients match finite differences for every layer type.
fn check_gradients() -> CheckResult {
    let started = Instant::now();
    let report = gradcheck(1e-4).map_err(err)?;
    let secs = started.elapsed().as_secs_f64();
    if !report.passed() {
        let bad: Vec<&str> = report
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect();
        return Err(format!("failed models: {}", bad.join(", ")));
    }
    if secs > 60.0 {
        return Err(format!("took {secs:.1} s, budget 60 s"));
    }
    let worst = report
        .checks
        .iter()
        .map(|c| c.max_rel_error)
        .fold(0.0f64, f64::max);
    Ok(format!(
        "{} models, worst rel error {worst:.1e}, {secs:.1} s",
        report.checks.len()
    ))
}

/// 3. GCC-PHAT recovers 100/100 known integer delays in [-8, 8].
fn check_gcc_delays() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let margin = 16usize;
    for trial in 0..100 {
        let d = rng.random_range(-8i32..=8);
        let noise: Vec<f32> = (0..FRAME_LEN + 2 * margin)
            .map(|_| rng.random_range(-0.5..0.5))
            .collect();
        // Positive lag means the left channel leads, so delay the right
        // channel by d when d is positive.
        let left = &noise[margin..margin + FRAME_LEN];
        let lo = (margin as i32 - d) as usize;
        let right = &noise[lo..lo + FRAME_LEN];
        let frame = BinauralFrame::from_slices(left, right).map_err(err)?;
        let got = argmax_lag(&gcc_phat_raw(&frame));
        if got != d {
            return Err(format!("trial {trial}: true delay {d}, estimated {got}"));
        }
    }
    Ok("100/100 integer delays in [-8, 8] recovered".into())
}

/// 4. Measured T60 of the four standard rooms is within 20% of target.
fn check_room_t60() -> CheckResult {
    let mut lines = Vec::new();
    for (id, target) in [
        ("room_a", 0.32),
        ("room_b", 0.47),
        ("room_c", 0.68),
        ("room_d", 0.89),
    ] {
        let room = RoomSpec::surrey_scale(id, target);
        let brir = image_source_rir(&room, 0).map_err(err)?;
        let measured = brir
            .measured_t60
            .ok_or_else(|| format!("{id}: T60 unmeasurable"))?;
        let rel = (measured - target) / target;
        if rel.abs() > 0.2 {
            return Err(format!(
                "{id}: measured {measured:.3} s vs target {target} s ({:+.0}%)",
                rel * 100.0
            ));
        }
        lines.push(format!("{id} {measured:.2}/{target}"));
    }
    Ok(format!("measured/target s: {}", lines.join(", ")))
}

struct TrainedConv {
    model: ModelGraph<f32>,
    config: ModelConfig,
}

fn render_anechoic(root: &PathBuf) -> Result<ResolvedManifest, String> {
    let manifest = DatasetManifest::default_synthetic(&[], SplitCounts::default(), 1.0, 11);
    let resolved = make_dataset(&manifest, root).map_err(err)?;
    if !resolved.errors.is_empty() {
        return Err(format!("render errors: {:?}", resolved.errors));
    }
    Ok(resolved)
}

/// 5. All three systems reach <= 5 deg chunk RMSE on the anechoic test
/// split of the default-size dataset, each within 30 minutes.
fn check_anechoic_training(
    resolved: &ResolvedManifest,
) -> Result<(String, TrainedConv), String> {
    let mut parts = Vec::new();
    let mut conv = None;
    for (kind, stride, max_epochs) in [
        (ModelKind::GccBaseline, 4usize, 10u32),
        (ModelKind::WavelocGtf, 8, 5),
        (ModelKind::WavelocConv, 8, 4),
    ] {
        let started = Instant::now();
        let config = ModelConfig::new(kind, 21);
        let mut spec = ExperimentSpec::new(config, TrainingMode::AnechoicOnly);
        spec.schedule = TrainingSchedule {
            max_epochs,
            ..TrainingSchedule::default()
        };
        spec.frame_stride = stride;
        let (model, report) = train(&spec, resolved).map_err(err)?;
        let summary = evaluate_chunks(&model, resolved, Split::Test, None).map_err(err)?;
        let secs = started.elapsed().as_secs_f64();
        if summary.rmse_deg > 5.0 {
            return Err(format!(
                "{}: {:.1} deg chunk RMSE after {} epochs, need <= 5",
                kind.as_str(),
                summary.rmse_deg,
                report.epochs.len()
            ));
        }
        if secs > 1800.0 {
            return Err(format!("{}: took {secs:.0} s, budget 1800 s", kind.as_str()));
        }
        parts.push(format!(
            "{} {:.1} deg in {:.0} s",
            kind.as_str(),
            summary.rmse_deg,
            secs
        ));
        if kind == ModelKind::WavelocConv {
            conv = Some(TrainedConv { model, config });
        }
    }
    Ok((parts.join("; "), conv.unwrap()))
}

/// 6. Multi-conditional training beats anechoic-only training by at least
/// 10 deg on a held-out reverberant room for the data-driven model.
fn check_mct_trend(root: &PathBuf, anechoic_conv: &TrainedConv) -> CheckResult {
    let rooms = [
        RoomSpec::surrey_scale("room_a", 0.32),
        RoomSpec::surrey_scale("room_d", 0.89),
    ];
    let counts = SplitCounts {
        train: 4,
        valid: 2,
        test: 2,
    };
    let manifest = DatasetManifest::default_synthetic(&rooms, counts, 1.0, 13);
    let resolved = make_dataset(&manifest, root).map_err(err)?;
    if !resolved.errors.is_empty() {
        return Err(format!("render errors: {:?}", resolved.errors));
    }

    let mut spec = ExperimentSpec::new(
        ModelConfig::new(ModelKind::WavelocConv, 23),
        TrainingMode::Mct {
            test_room: "room_d".into(),
        },
    );
    spec.schedule = TrainingSchedule {
        max_epochs: 4,
        ..TrainingSchedule::default()
    };
    spec.frame_stride = 4;
    let (mct_model, _) = train(&spec, &resolved).map_err(err)?;

    let mct = evaluate_chunks(&mct_model, &resolved, Split::Test, Some("room_d"))
        .map_err(err)?
        .rmse_deg;
    let anech = evaluate_chunks(&anechoic_conv.model, &resolved, Split::Test, Some("room_d"))
        .map_err(err)?
        .rmse_deg;
    if anech - mct < 10.0 {
        return Err(format!(
            "anechoic-trained {anech:.1} deg vs mct {mct:.1} deg: gap below 10 deg"
        ));
    }
    Ok(format!(
        "held-out room_d: anechoic-trained {anech:.1} deg, mct {mct:.1} deg"
    ))
}

/// 7. Learned first-layer kernels of the trained data-driven model form a
/// mostly band-pass set of 64 spectra.
fn check_kernel_spectra(conv: &TrainedConv) -> CheckResult {
    let spectra = export_kernel_spectra(&conv.model, &conv.config, 1024).map_err(err)?;
    if spectra.rows() != 64 || spectra.cols() != 513 {
        return Err(format!("shape {}x{}, expected 64x513", spectra.rows(), spectra.cols()));
    }
    if !spectra.values.iter().flatten().all(|v| v.is_finite()) {
        return Err("non-finite spectrum values".into());
    }
    let frac = band_pass_fraction(&spectra, 10);
    if frac <= 0.5 {
        return Err(format!("band-pass fraction {frac:.2}, need > 0.5"));
    }
    Ok(format!("64x513 finite spectra, band-pass fraction {frac:.2}"))
}

/// 8. Checkpoints round-trip to bit-identical posteriors on 100 frames.
fn check_checkpoint_roundtrip(dir: &PathBuf) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    for kind in [ModelKind::GccBaseline, ModelKind::WavelocGtf, ModelKind::WavelocConv] {
        let config = ModelConfig::new(kind, 31);
        let model = build_model(&config).map_err(err)?;
        let path = dir.join(format!("{}.wloc", kind.as_str()));
        save_checkpoint(
            &model,
            &config,
            &CheckpointMetadata {
                epochs_run: 0,
                best_val_loss: None,
            },
            &path,
        )
        .map_err(err)?;
        let loaded = load_checkpoint(&path).map_err(err)?;
        for i in 0..100 {
            let frame = random_frame(&mut rng);
            let feature = gcc_phat(&frame);
            let input = match kind {
                ModelKind::GccBaseline => ModelInput::Gcc(&feature),
                _ => ModelInput::Frame(&frame),
            };
            let a = predict_frame(&model, input).map_err(err)?;
            let b = predict_frame(&loaded.model, input).map_err(err)?;
            if a.iter().zip(&b).any(|(x, y)| x.to_bits() != y.to_bits()) {
                return Err(format!("{}: frame {i} posterior differs", kind.as_str()));
            }
        }
    }
    Ok("3 model kinds x 100 frames bit-identical".into())
}

/// 9. Core invariants: posteriors are distributions, the normalised front
/// end is gain invariant, chunk averaging matches a hand computation, and
/// multi-conditional training excludes its held-out room.
fn check_invariants() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(909);

    for kind in [ModelKind::GccBaseline, ModelKind::WavelocGtf, ModelKind::WavelocConv] {
        let model = build_model(&ModelConfig::new(kind, 41)).map_err(err)?;
        let frame = random_frame(&mut rng);
        let feature = gcc_phat(&frame);
        let input = match kind {
            ModelKind::GccBaseline => ModelInput::Gcc(&feature),
            _ => ModelInput::Frame(&frame),
        };
        let p = predict_frame(&model, input).map_err(err)?;
        let sum: f32 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-4 || p.iter().any(|&v| v < 0.0) {
            return Err(format!("{}: posterior sum {sum}", kind.as_str()));
        }
    }

    let gtf = build_model(&ModelConfig::new(ModelKind::WavelocGtf, 41)).map_err(err)?;
    let frame = random_frame(&mut rng);
    let scaled = BinauralFrame::from_slices(
        &frame.left().iter().map(|v| v * 0.125).collect::<Vec<_>>(),
        &frame.right().iter().map(|v| v * 0.125).collect::<Vec<_>>(),
    )
    .map_err(err)?;
    let a = predict_frame(&gtf, ModelInput::Frame(&frame)).map_err(err)?;
    let b = predict_frame(&gtf, ModelInput::Frame(&scaled)).map_err(err)?;
    if a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-4) {
        return Err("gtf posterior changed under input gain".into());
    }

    let mut posteriors = Vec::new();
    for i in 0..25 {
        let mut p = [0.0f32; NUM_CLASSES];
        p[if i < 20 { 4 } else { 30 }] = 1.0;
        posteriors.push(p);
    }
    let (class, mean) = chunk_estimate(&posteriors);
    if class != 4 || (mean[4] - 0.8).abs() > 1e-6 {
        return Err(format!("chunk average picked {class}, mean[4]={}", mean[4]));
    }

    let manifest = DatasetManifest::default_synthetic(
        &[RoomSpec::surrey_scale("room_x", 0.4)],
        SplitCounts {
            train: 1,
            valid: 1,
            test: 1,
        },
        1.0,
        7,
    );
    let mode = TrainingMode::Mct {
        test_room: "room_x".into(),
    };
    if manifest.entries.iter().any(|e| mode.keeps(e) && e.scene.room_id == "room_x") {
        return Err("mct mode kept an entry of its held-out room".into());
    }
    Ok("posterior sums, gain invariance, chunk average, mct exclusion".into())
}

#[test]
fn acceptance() {
    let tmp = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&tmp).unwrap();
    let anechoic_root = tmp.join("anechoic_set");
    let mct_root = tmp.join("mct_set");

    let mut failed = false;
    let mut record = |number: usize, name: &str, result: CheckResult| match result {
        Ok(msg) => println!("[PASS] {number}. {name}: {msg}"),
        Err(msg) => {
            failed = true;
            println!("[FAIL] {number}. {name}: {msg}");
        }
    };

    record(1, "gammatone filterbank response", check_gammatone());
    record(2, "gradient check", check_gradients());
    record(3, "gcc delay recovery", check_gcc_delays());
    record(4, "room reverberation times", check_room_t60());

    let mut conv = None;
    match render_anechoic(&anechoic_root) {
        Ok(resolved) => match check_anechoic_training(&resolved) {
            Ok((msg, trained)) => {
                record(5, "anechoic training", Ok(msg));
                conv = Some(trained);
            }
            Err(msg) => record(5, "anechoic training", Err(msg)),
        },
        Err(msg) => record(5, "anechoic training", Err(msg)),
    }

    match &conv {
        Some(trained) => {
            record(6, "mct generalisation gap", check_mct_trend(&mct_root, trained));
            record(7, "learned kernel spectra", check_kernel_spectra(trained));
        }
        None => {
            record(6, "mct generalisation gap", Err("no trained model from check 5".into()));
            record(7, "learned kernel spectra", Err("no trained model from check 5".into()));
        }
    }

    record(8, "checkpoint round-trip", check_checkpoint_roundtrip(&tmp));
    record(9, "pipeline invariants", check_invariants());

    assert!(!failed, "one or more acceptance checks failed");
}
