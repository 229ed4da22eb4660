//! Test-signal generation (noise bursts, speech-shaped noise), the corpus
//! silence gate, and BRIR spatialisation.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;

use super::head::Brir;
use crate::audio::{BinauralWaveform, MonoWaveform, FRAME_LEN, SAMPLE_RATE};
use crate::dsp::fft_convolve;
use crate::error::{Error, Result};

/// Raised-cosine fade length applied to both ends of generated signals.
const EDGE_SECS: f64 = 0.05;
const TARGET_RMS: f64 = 0.1;

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller from two uniforms.
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn apply_edges_and_rms(mut x: Vec<f64>) -> Vec<f32> {
    let n = x.len();
    let edge = ((EDGE_SECS * SAMPLE_RATE as f64) as usize).min(n / 2);
    for i in 0..edge {
        let w = 0.5 - 0.5 * (std::f64::consts::PI * i as f64 / edge as f64).cos();
        x[i] *= w;
        x[n - 1 - i] *= w;
    }
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    let scale = if rms > 0.0 { TARGET_RMS / rms } else { 0.0 };
    x.iter().map(|&v| (v * scale) as f32).collect()
}

fn check_duration(duration_secs: f64) -> Result<usize> {
    if duration_secs < 0.5 {
        return Err(Error::InvalidInput(format!(
            "duration {duration_secs} s is below the 0.5 s minimum"
        )));
    }
    Ok((duration_secs * SAMPLE_RATE as f64).round() as usize)
}

/// White Gaussian noise burst with raised-cosine edges, RMS 0.1.
pub fn white_noise_burst(duration_secs: f64, seed: u64) -> Result<MonoWaveform> {
    let n = check_duration(duration_secs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n).map(|_| gaussian(&mut rng)).collect();
    MonoWaveform::new(apply_edges_and_rms(x))
}

/// Pink-weighted (1/sqrt(f) above 100 Hz) noise burst as a rough
/// speech-spectrum stand-in.
pub fn speech_shaped_noise(duration_secs: f64, seed: u64) -> Result<MonoWaveform> {
    let n = check_duration(duration_secs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nfft = n.next_power_of_two();
    let mut buf: Vec<Complex64> = (0..nfft)
        .map(|i| {
            if i < n {
                Complex64::new(gaussian(&mut rng), 0.0)
            } else {
                Complex64::ZERO
            }
        })
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(nfft).process(&mut buf);
    let corner = 100.0;
    for (i, v) in buf.iter_mut().enumerate() {
        let bin = i.min(nfft - i);
        let f = bin as f64 * SAMPLE_RATE as f64 / nfft as f64;
        *v *= (corner / f.max(corner)).sqrt();
    }
    planner.plan_fft_inverse(nfft).process(&mut buf);
    let x: Vec<f64> = buf.iter().take(n).map(|c| c.re / nfft as f64).collect();
    MonoWaveform::new(apply_edges_and_rms(x))
}

/// Drop leading/trailing 20 ms frames more than `threshold_db` below the
/// utterance RMS (the corpus silence gate).
pub fn energy_gate(wave: &MonoWaveform, threshold_db: f64) -> Result<MonoWaveform> {
    let x = wave.samples();
    let rms_sq = x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / x.len() as f64;
    if rms_sq <= 0.0 {
        return Err(Error::EmptyInput("signal is all zero".into()));
    }
    let floor = rms_sq * 10f64.powf(-threshold_db / 10.0);
    let frame_ok = |f: &[f32]| {
        f.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / f.len() as f64 >= floor
    };
    let frames: Vec<&[f32]> = x.chunks(FRAME_LEN).collect();
    let first = frames.iter().position(|f| frame_ok(f));
    let last = frames.iter().rposition(|f| frame_ok(f));
    let (Some(first), Some(last)) = (first, last) else {
        return Err(Error::EmptyInput("gate removed the whole signal".into()));
    };
    let lo = first * FRAME_LEN;
    let hi = (last * FRAME_LEN + frames[last].len()).min(x.len());
    MonoWaveform::new(x[lo..hi].to_vec())
}

/// Render a mono source through a BRIR: per-ear full convolution, jointly
/// peak-normalised to 0.95.
pub fn spatialize(source: &MonoWaveform, brir: &Brir) -> Result<BinauralWaveform> {
    if source.is_empty() || brir.is_empty() {
        return Err(Error::EmptyInput("empty source or brir".into()));
    }
    let mut left = fft_convolve(source.samples(), &brir.left);
    let mut right = fft_convolve(source.samples(), &brir.right);
    let peak = left
        .iter()
        .chain(right.iter())
        .fold(0.0f32, |m, &v| m.max(v.abs()));
    if peak > 0.0 {
        let scale = 0.95 / peak;
        for v in left.iter_mut().chain(right.iter_mut()) {
            *v *= scale;
        }
    }
    BinauralWaveform::new(left, right)
}
