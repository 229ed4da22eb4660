//! Room-acoustic measurements on impulse responses.

use crate::audio::SAMPLE_RATE;
use crate::error::{Error, Result};

/// Reverberation time from the backward-integrated (Schroeder) energy decay:
/// the -5..-25 dB slope extrapolated by a factor of 3.
pub fn schroeder_t60(rir: &[f32]) -> Result<f64> {
    if rir.is_empty() {
        return Err(Error::EmptyInput("empty impulse response".into()));
    }
    let energy: Vec<f64> = rir.iter().map(|&v| (v as f64) * (v as f64)).collect();
    let total: f64 = energy.iter().sum();
    if total <= 0.0 {
        return Err(Error::Unmeasurable("impulse response is all zero".into()));
    }
    // Backward integration, normalised so the curve starts at 0 dB.
    let mut tail = 0.0;
    let mut decay_db: Vec<f64> = vec![0.0; energy.len()];
    for (i, &e) in energy.iter().enumerate().rev() {
        tail += e;
        decay_db[i] = 10.0 * (tail / total).log10();
    }
    let t_at = |level: f64| -> Option<f64> {
        // First crossing below `level` dB, linearly interpolated.
        let i = decay_db.iter().position(|&d| d < level)?;
        if i == 0 {
            return Some(0.0);
        }
        let (d0, d1) = (decay_db[i - 1], decay_db[i]);
        let frac = (level - d0) / (d1 - d0);
        Some((i as f64 - 1.0 + frac) / SAMPLE_RATE as f64)
    };
    let (Some(t5), Some(t25)) = (t_at(-5.0), t_at(-25.0)) else {
        return Err(Error::Unmeasurable(
            "decay never reaches the -5..-25 dB evaluation range".into(),
        ));
    };
    if t25 <= t5 {
        return Err(Error::Unmeasurable("degenerate decay curve".into()));
    }
    Ok(3.0 * (t25 - t5))
}

/// Direct window length after the peak, in seconds.
pub const DIRECT_WINDOW_SECS: f64 = 2.5e-3;

/// Direct-to-reverberant ratio in dB; `f64::INFINITY` when all the energy is
/// inside the direct window.
pub fn drr(rir: &[f32]) -> Result<f64> {
    if rir.is_empty() {
        return Err(Error::EmptyInput("empty impulse response".into()));
    }
    let peak = rir
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    let window = (DIRECT_WINDOW_SECS * SAMPLE_RATE as f64).round() as usize;
    let direct_end = (peak + window).min(rir.len());
    let e = |s: &[f32]| s.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>();
    let direct = e(&rir[..direct_end]);
    let late = e(&rir[direct_end..]);
    if direct <= 0.0 {
        return Err(Error::Unmeasurable("no direct energy".into()));
    }
    if late <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (direct / late).log10())
}
