//! WAV reading and writing: 16 kHz RIFF, mono or stereo, 16-bit integer or
//! 32-bit float samples. Integer samples are scaled to [-1, 1) by 1/32768.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{BinauralWaveform, MonoWaveform, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Decoded WAV contents.
#[derive(Debug, Clone)]
pub enum WavContent {
    Mono(MonoWaveform),
    Binaural(BinauralWaveform),
}

impl WavContent {
    pub fn into_binaural(self) -> Result<BinauralWaveform> {
        match self {
            WavContent::Binaural(w) => Ok(w),
            WavContent::Mono(_) => Err(Error::InvalidInput(
                "expected a 2-channel wav, got mono".into(),
            )),
        }
    }

    pub fn into_mono(self) -> Result<MonoWaveform> {
        match self {
            WavContent::Mono(w) => Ok(w),
            WavContent::Binaural(_) => Err(Error::InvalidInput(
                "expected a mono wav, got 2 channels".into(),
            )),
        }
    }
}

pub fn read_wav(path: &Path) -> Result<WavContent> {
    let mut reader =
        WavReader::open(path).map_err(|e| Error::wav(path, e.to_string()))?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::wav(
            path,
            format!("sample rate {} Hz, expected {SAMPLE_RATE} Hz", spec.sample_rate),
        ));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::wav(path, e.to_string()))?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::wav(path, e.to_string()))?,
        (fmt, bits) => {
            return Err(Error::wav(
                path,
                format!("unsupported format {fmt:?}/{bits} bits"),
            ))
        }
    };
    match spec.channels {
        1 => Ok(WavContent::Mono(MonoWaveform::new(interleaved)?)),
        2 => {
            let left = interleaved.iter().step_by(2).copied().collect();
            let right = interleaved.iter().skip(1).step_by(2).copied().collect();
            Ok(WavContent::Binaural(BinauralWaveform::new(left, right)?))
        }
        c => Err(Error::wav(path, format!("unsupported channel count {c}"))),
    }
}

fn float_spec(channels: u16) -> WavSpec {
    WavSpec {
        channels,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    }
}

/// Write a waveform as a 32-bit float WAV.
pub fn write_wav(path: &Path, content: &WavContent) -> Result<()> {
    let (channels, frames) = match content {
        WavContent::Mono(w) => (1u16, w.len()),
        WavContent::Binaural(w) => (2u16, w.len()),
    };
    let mut writer = WavWriter::create(path, float_spec(channels))
        .map_err(|e| Error::wav(path, e.to_string()))?;
    match content {
        WavContent::Mono(w) => {
            for &s in w.samples() {
                writer
                    .write_sample(s)
                    .map_err(|e| Error::wav(path, e.to_string()))?;
            }
        }
        WavContent::Binaural(w) => {
            for i in 0..frames {
                writer
                    .write_sample(w.left()[i])
                    .and_then(|_| writer.write_sample(w.right()[i]))
                    .map_err(|e| Error::wav(path, e.to_string()))?;
            }
        }
    }
    writer
        .finalize()
        .map_err(|e| Error::wav(path, e.to_string()))
}

/// Write through a temp file in the same directory, then rename into place.
pub fn write_wav_atomic(path: &Path, content: &WavContent) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let tmp = tempfile::Builder::new()
        .prefix(".waveloc-tmp-")
        .suffix(".wav")
        .tempfile_in(dir)
        .map_err(|e| Error::io(dir, e))?;
    write_wav(tmp.path(), content)?;
    tmp.persist(path)
        .map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_stereo_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let left: Vec<f32> = (0..100).map(|i| (i as f32 / 50.0).sin() * 0.5).collect();
        let right: Vec<f32> = left.iter().map(|s| -s).collect();
        let wave = BinauralWaveform::new(left, right).unwrap();
        write_wav(&path, &WavContent::Binaural(wave.clone())).unwrap();
        let back = read_wav(&path).unwrap().into_binaural().unwrap();
        assert_eq!(back, wave);
    }

    #[test]
    fn int16_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: SAMPLE_RATE,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        for v in [-32768i16, 0, 16384, 32767] {
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
        let mono = read_wav(&path).unwrap().into_mono().unwrap();
        assert_eq!(mono.samples(), &[-1.0, 0.0, 0.5, 32767.0 / 32768.0]);
    }

    #[test]
    fn wrong_sample_rate_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sr.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 44_100,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        assert!(read_wav(&path).is_err());
    }
}
