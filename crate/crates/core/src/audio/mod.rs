//! Raw audio containers and framing.
//!
//! Everything downstream operates on 16 kHz sampled audio, framed into
//! 20 ms windows (320 samples) with 10 ms hop (160 samples).

mod wav;

pub use wav::{read_wav, write_wav, write_wav_atomic, WavContent};

use crate::error::{Error, Result};

/// Fixed system sample rate in Hz.
pub const SAMPLE_RATE: u32 = 16_000;
/// Analysis window length in samples (20 ms at 16 kHz).
pub const FRAME_LEN: usize = 320;
/// Hop between consecutive frames in samples (10 ms at 16 kHz).
pub const FRAME_HOP: usize = 160;

/// Single-channel waveform at the fixed 16 kHz sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct MonoWaveform {
    samples: Vec<f32>,
}

impl MonoWaveform {
    pub fn new(samples: Vec<f32>) -> Result<Self> {
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidInput(
                "waveform contains non-finite samples".into(),
            ));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / SAMPLE_RATE as f64
    }
}

/// Two-ear waveform; `left` and `right` always have equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct BinauralWaveform {
    left: Vec<f32>,
    right: Vec<f32>,
}

impl BinauralWaveform {
    pub fn new(left: Vec<f32>, right: Vec<f32>) -> Result<Self> {
        if left.len() != right.len() {
            return Err(Error::InvalidInput(format!(
                "channel length mismatch: left {}, right {}",
                left.len(),
                right.len()
            )));
        }
        if left.iter().chain(right.iter()).any(|s| !s.is_finite()) {
            return Err(Error::InvalidInput(
                "waveform contains non-finite samples".into(),
            ));
        }
        Ok(Self { left, right })
    }

    pub fn left(&self) -> &[f32] {
        &self.left
    }

    pub fn right(&self) -> &[f32] {
        &self.right
    }

    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }
}

/// One 2x320 network input frame: row 0 is the left ear, row 1 the right.
#[derive(Debug, Clone, PartialEq)]
pub struct BinauralFrame {
    data: [Box<[f32; FRAME_LEN]>; 2],
}

impl BinauralFrame {
    pub fn from_slices(left: &[f32], right: &[f32]) -> Result<Self> {
        if left.len() != FRAME_LEN || right.len() != FRAME_LEN {
            return Err(Error::ShapeMismatch {
                expected: format!("2x{FRAME_LEN}"),
                actual: format!("{}x{}", left.len(), right.len()),
                context: "binaural frame".into(),
            });
        }
        if left.iter().chain(right.iter()).any(|s| !s.is_finite()) {
            return Err(Error::InvalidInput("frame contains non-finite values".into()));
        }
        let mut l = Box::new([0.0f32; FRAME_LEN]);
        let mut r = Box::new([0.0f32; FRAME_LEN]);
        l.copy_from_slice(left);
        r.copy_from_slice(right);
        Ok(Self { data: [l, r] })
    }

    pub fn left(&self) -> &[f32; FRAME_LEN] {
        &self.data[0]
    }

    pub fn right(&self) -> &[f32; FRAME_LEN] {
        &self.data[1]
    }

    pub fn row(&self, ear: usize) -> &[f32; FRAME_LEN] {
        &self.data[ear]
    }
}

/// Number of frames produced by [`frame_signal`] for a signal of `n` samples.
pub fn frame_count(n: usize) -> usize {
    if n < FRAME_LEN {
        0
    } else {
        (n - FRAME_LEN) / FRAME_HOP + 1
    }
}

/// Cut a binaural waveform into 320-sample frames with 160-sample hop.
///
/// Frame `k` covers samples `[160k, 160k + 320)`; a trailing partial window is
/// dropped. No analysis window is applied.
pub fn frame_signal(wave: &BinauralWaveform) -> Result<Vec<BinauralFrame>> {
    if wave.len() < FRAME_LEN {
        return Err(Error::EmptyInput(format!(
            "signal of {} samples is shorter than one {FRAME_LEN}-sample window",
            wave.len()
        )));
    }
    let count = frame_count(wave.len());
    let mut frames = Vec::with_capacity(count);
    for k in 0..count {
        let start = k * FRAME_HOP;
        frames.push(BinauralFrame::from_slices(
            &wave.left()[start..start + FRAME_LEN],
            &wave.right()[start..start + FRAME_LEN],
        )?);
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wave_of(n: usize) -> BinauralWaveform {
        let left: Vec<f32> = (0..n).map(|i| (i as f32 * 0.001).sin()).collect();
        let right = left.clone();
        BinauralWaveform::new(left, right).unwrap()
    }

    #[test]
    fn one_window_fits_once() {
        assert_eq!(frame_signal(&wave_of(320)).unwrap().len(), 1);
    }

    #[test]
    fn hop_arithmetic() {
        let frames = frame_signal(&wave_of(480)).unwrap();
        assert_eq!(frames.len(), 2);
        let w = wave_of(480);
        assert_eq!(frames[0].left()[0], w.left()[0]);
        assert_eq!(frames[1].left()[0], w.left()[160]);
    }

    #[test]
    fn one_second_gives_99_frames() {
        // Independent enumeration oracle: count offsets whose window fits.
        let n = 16_000usize;
        let oracle = (0..)
            .map(|k| k * FRAME_HOP)
            .take_while(|&start| start + FRAME_LEN <= n)
            .count();
        assert_eq!(oracle, 99);
        assert_eq!(frame_signal(&wave_of(n)).unwrap().len(), oracle);
    }

    #[test]
    fn short_signal_is_an_error() {
        assert!(matches!(
            frame_signal(&wave_of(319)),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn frame_count_formula() {
        for n in 320..2000 {
            assert_eq!(frame_count(n), (n - 320) / 160 + 1);
        }
    }

    #[test]
    fn mismatched_channels_rejected() {
        assert!(BinauralWaveform::new(vec![0.0; 10], vec![0.0; 11]).is_err());
    }
}
