//! Gammatone filterbank synthesis.
//!
//! 32 channels between 70 and 7000 Hz, ERB-rate spaced with both endpoints
//! included. Each kernel is the impulse response
//! w[t] = a t^(n-1) cos(2 pi f t + phi) e^(-2 pi b t), truncated to one
//! analysis window (320 taps), peak-gain normalised to 0 dB and stored
//! time-reversed so it can be applied with a plain convolution.

use super::fft_magnitude;
use crate::audio::{FRAME_LEN, SAMPLE_RATE};

/// Number of filterbank channels.
pub const NUM_CHANNELS: usize = 32;
/// Lowest and highest centre frequencies in Hz.
pub const FREQ_LO: f64 = 70.0;
pub const FREQ_HI: f64 = 7000.0;
/// FFT size used for peak-gain normalisation.
pub const NORM_NFFT: usize = 4096;

const ORDER: u32 = 4;
const BANDWIDTH_SCALE: f64 = 1.019;

/// Equivalent rectangular bandwidth at centre frequency `f` Hz.
pub fn erb_bandwidth(f: f64) -> f64 {
    24.7 * (4.37 * f / 1000.0 + 1.0)
}

/// ERB-rate (number of ERBs below `f`).
pub fn erb_rate(f: f64) -> f64 {
    21.4 * (4.37 * f / 1000.0 + 1.0).log10()
}

/// Inverse of [`erb_rate`].
pub fn erb_rate_to_hz(e: f64) -> f64 {
    (10f64.powf(e / 21.4) - 1.0) * 1000.0 / 4.37
}

/// Parameters of one gammatone kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammatoneKernelSpec {
    pub amplitude: f64,
    pub order: u32,
    pub centre_frequency: f64,
    pub phase: f64,
    pub bandwidth: f64,
    pub length: usize,
}

/// The 32 fixed time-domain kernels, ready for convolution.
#[derive(Debug, Clone)]
pub struct GammatoneKernelBank {
    /// Time-reversed impulse responses, 32 x 320.
    kernels: Vec<Vec<f32>>,
    specs: Vec<GammatoneKernelSpec>,
}

impl GammatoneKernelBank {
    /// Time-reversed kernels (conv-ready), one row per channel.
    pub fn kernels(&self) -> &[Vec<f32>] {
        &self.kernels
    }

    /// Impulse responses in natural time order.
    pub fn impulse_response(&self, channel: usize) -> Vec<f32> {
        let mut ir = self.kernels[channel].clone();
        ir.reverse();
        ir
    }

    pub fn specs(&self) -> &[GammatoneKernelSpec] {
        &self.specs
    }

    pub fn centre_frequencies(&self) -> Vec<f64> {
        self.specs.iter().map(|s| s.centre_frequency).collect()
    }
}

/// 32 ERB-spaced centre frequencies with both endpoints included.
pub fn centre_frequencies() -> Vec<f64> {
    let lo = erb_rate(FREQ_LO);
    let hi = erb_rate(FREQ_HI);
    (0..NUM_CHANNELS)
        .map(|i| {
            let e = lo + (hi - lo) * i as f64 / (NUM_CHANNELS - 1) as f64;
            match i {
                0 => FREQ_LO,
                i if i == NUM_CHANNELS - 1 => FREQ_HI,
                _ => erb_rate_to_hz(e),
            }
        })
        .collect()
}

fn raw_impulse_response(f: f64, bandwidth: f64) -> Vec<f64> {
    let fs = SAMPLE_RATE as f64;
    (0..FRAME_LEN)
        .map(|k| {
            let t = (k + 1) as f64 / fs;
            t.powi(ORDER as i32 - 1)
                * (2.0 * std::f64::consts::PI * f * t).cos()
                * (-2.0 * std::f64::consts::PI * bandwidth * t).exp()
        })
        .collect()
}

/// Build the fixed 32-channel bank.
pub fn design_gammatone_bank() -> GammatoneKernelBank {
    let mut kernels = Vec::with_capacity(NUM_CHANNELS);
    let mut specs = Vec::with_capacity(NUM_CHANNELS);
    for f in centre_frequencies() {
        let bandwidth = BANDWIDTH_SCALE * erb_bandwidth(f);
        let raw = raw_impulse_response(f, bandwidth);
        let peak = fft_magnitude(&raw, NORM_NFFT)
            .into_iter()
            .fold(0.0f64, f64::max);
        let amplitude = 1.0 / peak;
        let mut kernel: Vec<f32> = raw.iter().map(|&v| (v * amplitude) as f32).collect();
        kernel.reverse();
        kernels.push(kernel);
        specs.push(GammatoneKernelSpec {
            amplitude,
            order: ORDER,
            centre_frequency: f,
            phase: 0.0,
            bandwidth,
            length: FRAME_LEN,
        });
    }
    GammatoneKernelBank { kernels, specs }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_monotone_spacing() {
        let bank = design_gammatone_bank();
        let fcs = bank.centre_frequencies();
        assert_eq!(fcs.len(), NUM_CHANNELS);
        assert_eq!(fcs[0], 70.0);
        assert_eq!(fcs[NUM_CHANNELS - 1], 7000.0);
        for w in fcs.windows(2) {
            assert!(w[0] < w[1], "centre frequencies must strictly increase");
        }
    }

    #[test]
    fn peak_gain_is_zero_db() {
        let bank = design_gammatone_bank();
        for (i, k) in bank.kernels().iter().enumerate() {
            let x: Vec<f64> = k.iter().map(|&v| v as f64).collect();
            let peak = fft_magnitude(&x, NORM_NFFT).into_iter().fold(0.0, f64::max);
            // +-0.1 dB around unity
            assert!(
                (10f64.powf(-0.005)..=10f64.powf(0.005)).contains(&peak),
                "channel {i}: peak gain {peak}"
            );
        }
    }

    #[test]
    fn response_peak_near_centre_frequency() {
        let bank = design_gammatone_bank();
        let bin_hz = SAMPLE_RATE as f64 / NORM_NFFT as f64;
        for spec in bank.specs() {
            let ir: Vec<f64> = raw_impulse_response(spec.centre_frequency, spec.bandwidth);
            let mags = fft_magnitude(&ir, NORM_NFFT);
            let argmax = mags
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            let peak_hz = argmax as f64 * bin_hz;
            let tol = (0.02 * spec.centre_frequency).max(bin_hz);
            assert!(
                (peak_hz - spec.centre_frequency).abs() <= tol,
                "fc {} Hz peaked at {} Hz (tol {tol})",
                spec.centre_frequency,
                peak_hz
            );
        }
    }

    #[test]
    fn kernels_are_time_reversed() {
        let bank = design_gammatone_bank();
        for (k, spec) in bank.kernels().iter().zip(bank.specs()) {
            let forward = raw_impulse_response(spec.centre_frequency, spec.bandwidth);
            for (i, &stored) in k.iter().enumerate() {
                let expect = (forward[FRAME_LEN - 1 - i] * spec.amplitude) as f32;
                assert_eq!(stored, expect);
            }
        }
    }

    #[test]
    fn erb_rate_round_trip() {
        for f in [70.0, 500.0, 1600.0, 7000.0] {
            assert!((erb_rate_to_hz(erb_rate(f)) - f).abs() < 1e-6);
        }
    }
}
