//! Deterministic signal processing: kernel convolution, FFT helpers,
//! GCC-PHAT features and kernel spectrum analysis.

pub mod gammatone;
mod gcc;

pub use gcc::{argmax_lag, gcc_phat, gcc_phat_raw, GccFeature, GCC_LAGS, GCC_MAX_LAG};

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// "Same"-length convolution of `x` with a kernel `w`.
///
/// Computes y[t] = sum_m x[m] w[t-m] with zero padding, then keeps the centre
/// slice so the output has the input's length: y_same[t] = y_full[t + (|w|-1)/2].
pub fn convolve_kernel(x: &[f32], w: &[f32]) -> Vec<f32> {
    let n = x.len();
    let m = w.len();
    if n == 0 || m == 0 {
        return vec![0.0; n];
    }
    let offset = (m - 1) / 2;
    let mut y = vec![0.0f32; n];
    for t in 0..n {
        // y_full index
        let tf = t + offset;
        let lo = tf.saturating_sub(m - 1);
        let hi = tf.min(n - 1);
        let mut acc = 0.0f64;
        for i in lo..=hi {
            acc += x[i] as f64 * w[tf - i] as f64;
        }
        y[t] = acc as f32;
    }
    y
}

/// Full linear convolution via FFT; output length is `a.len() + b.len() - 1`.
pub fn fft_convolve(a: &[f32], b: &[f32]) -> Vec<f32> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    let nfft = out_len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(nfft);
    let ifft = planner.plan_fft_inverse(nfft);

    let mut fa: Vec<Complex64> = a
        .iter()
        .map(|&v| Complex64::new(v as f64, 0.0))
        .chain(std::iter::repeat(Complex64::ZERO))
        .take(nfft)
        .collect();
    let mut fb: Vec<Complex64> = b
        .iter()
        .map(|&v| Complex64::new(v as f64, 0.0))
        .chain(std::iter::repeat(Complex64::ZERO))
        .take(nfft)
        .collect();
    fft.process(&mut fa);
    fft.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    ifft.process(&mut fa);
    let scale = 1.0 / nfft as f64;
    fa.iter()
        .take(out_len)
        .map(|c| (c.re * scale) as f32)
        .collect()
}

/// Magnitude spectrum |FFT(x, nfft)| at bins 0..=nfft/2.
pub fn fft_magnitude(x: &[f64], nfft: usize) -> Vec<f64> {
    let mut buf: Vec<Complex64> = x
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .chain(std::iter::repeat(Complex64::ZERO))
        .take(nfft)
        .collect();
    FftPlanner::<f64>::new()
        .plan_fft_forward(nfft)
        .process(&mut buf);
    buf.iter().take(nfft / 2 + 1).map(|c| c.norm()).collect()
}

/// Log-power spectra of a set of kernels, one row per kernel.
#[derive(Debug, Clone)]
pub struct SpectrumMatrix {
    pub nfft: usize,
    /// Row-major, `rows x (nfft/2 + 1)`, values in dB.
    pub values: Vec<Vec<f64>>,
}

impl SpectrumMatrix {
    pub fn rows(&self) -> usize {
        self.values.len()
    }

    pub fn cols(&self) -> usize {
        self.nfft / 2 + 1
    }

    /// Centre frequency of bin `b` in Hz at the fixed sample rate.
    pub fn bin_hz(&self, b: usize) -> f64 {
        b as f64 * crate::audio::SAMPLE_RATE as f64 / self.nfft as f64
    }
}

/// 20*log10(|FFT(kernel, nfft)| + 1e-12) per kernel, bins 0..=nfft/2.
pub fn kernel_log_power_spectra(kernels: &[Vec<f32>], nfft: usize) -> Result<SpectrumMatrix> {
    if !nfft.is_power_of_two() {
        return Err(Error::InvalidInput(format!("nfft {nfft} is not a power of two")));
    }
    if let Some(k) = kernels.iter().find(|k| k.len() > nfft) {
        return Err(Error::InvalidInput(format!(
            "kernel length {} exceeds nfft {nfft}",
            k.len()
        )));
    }
    let values = kernels
        .iter()
        .map(|k| {
            let x: Vec<f64> = k.iter().map(|&v| v as f64).collect();
            fft_magnitude(&x, nfft)
                .into_iter()
                .map(|m| 20.0 * (m + 1e-12).log10())
                .collect()
        })
        .collect();
    Ok(SpectrumMatrix { nfft, values })
}
