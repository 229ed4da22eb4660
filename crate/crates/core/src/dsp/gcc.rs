//! GCC-PHAT feature extraction.
//!
//! Cross-spectrum of the two ears at nfft = 1024 (zero padded so the +-18
//! sample lags are free of circular aliasing), PHAT magnitude weighting, then
//! the inverse transform is sampled at the 37 lags centred on zero and
//! standardised to zero mean, unit variance. Sign convention: a positive lag
//! means the left ear leads.

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::audio::BinauralFrame;

/// Number of lags kept (-18..=+18 samples).
pub const GCC_LAGS: usize = 37;
/// Largest lag magnitude in samples.
pub const GCC_MAX_LAG: i32 = 18;

const NFFT: usize = 1024;
const PHAT_FLOOR: f64 = 1e-8;
const VAR_FLOOR: f64 = 1e-12;

/// Standardised GCC-PHAT feature; `values[i]` is lag `i - 18`.
#[derive(Debug, Clone, PartialEq)]
pub struct GccFeature {
    values: [f32; GCC_LAGS],
}

impl GccFeature {
    pub fn values(&self) -> &[f32; GCC_LAGS] {
        &self.values
    }

    pub fn lag_of_index(i: usize) -> i32 {
        i as i32 - GCC_MAX_LAG
    }
}

/// PHAT-weighted cross-correlation at the 37 centred lags, before
/// standardisation. `result[i]` is lag `i - 18`.
pub fn gcc_phat_raw(frame: &BinauralFrame) -> [f64; GCC_LAGS] {
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(NFFT);
    let ifft = planner.plan_fft_inverse(NFFT);

    let to_complex = |x: &[f32]| -> Vec<Complex64> {
        x.iter()
            .map(|&v| Complex64::new(v as f64, 0.0))
            .chain(std::iter::repeat(Complex64::ZERO))
            .take(NFFT)
            .collect()
    };
    let mut l = to_complex(frame.left());
    let mut r = to_complex(frame.right());
    fft.process(&mut l);
    fft.process(&mut r);

    let mut cross: Vec<Complex64> = l
        .iter()
        .zip(&r)
        .map(|(a, b)| {
            let g = a * b.conj();
            g / (g.norm() + PHAT_FLOOR)
        })
        .collect();
    ifft.process(&mut cross);

    // correlation c[m] = sum_n l[n] r[n-m]; lag tau (left leads positive)
    // lives at index (-tau) mod nfft.
    let mut out = [0.0f64; GCC_LAGS];
    for (i, slot) in out.iter_mut().enumerate() {
        let tau = i as i32 - GCC_MAX_LAG;
        let idx = (-tau).rem_euclid(NFFT as i32) as usize;
        *slot = cross[idx].re / NFFT as f64;
    }
    out
}

/// Lag (in samples) of the largest pre-standardisation correlation value.
pub fn argmax_lag(raw: &[f64; GCC_LAGS]) -> i32 {
    let (i, _) = raw
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    GccFeature::lag_of_index(i)
}

/// Full GCC-PHAT feature pipeline for one frame.
pub fn gcc_phat(frame: &BinauralFrame) -> GccFeature {
    let raw = gcc_phat_raw(frame);
    let mean = raw.iter().sum::<f64>() / GCC_LAGS as f64;
    let var = raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / GCC_LAGS as f64;
    let mut values = [0.0f32; GCC_LAGS];
    if var >= VAR_FLOOR {
        let inv_std = 1.0 / var.sqrt();
        for (out, &v) in values.iter_mut().zip(raw.iter()) {
            *out = ((v - mean) * inv_std) as f32;
        }
    }
    GccFeature { values }
}
