//! First-layer kernel spectrum export for the fully data-driven model.

use std::path::Path;

use crate::dsp::{kernel_log_power_spectra, SpectrumMatrix};
use crate::error::{Error, Result};
use crate::models::{ModelConfig, ModelKind};
use crate::nn::ModelGraph;

/// Log-power spectra of the first convolutional layer's 64 kernels, rows
/// sorted by dominant-frequency bin.
pub fn export_kernel_spectra(
    model: &ModelGraph<f32>,
    config: &ModelConfig,
    nfft: usize,
) -> Result<SpectrumMatrix> {
    if config.kind != ModelKind::WavelocConv {
        return Err(Error::InvalidInput(format!(
            "kernel spectra need a waveloc_conv model, got {}",
            config.kind.as_str()
        )));
    }
    let mut kernels: Option<Vec<Vec<f32>>> = None;
    model.for_each_param(&mut |meta, t| {
        if meta.name == "layer0.weight" {
            let len = t.shape()[2];
            kernels = Some(t.data().chunks(len).map(|k| k.to_vec()).collect());
        }
    });
    let kernels = kernels.ok_or_else(|| Error::Config("model has no first-layer weights".into()))?;
    let mut spectra = kernel_log_power_spectra(&kernels, nfft)?;
    spectra
        .values
        .sort_by_key(|row| dominant_bin(row));
    Ok(spectra)
}

fn dominant_bin(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Fraction of kernels with at least half their linear power within
/// `±bin_window` bins of their peak.
pub fn band_pass_fraction(spectra: &SpectrumMatrix, bin_window: usize) -> f64 {
    let concentrated = spectra
        .values
        .iter()
        .filter(|row| {
            let peak = dominant_bin(row);
            let power: Vec<f64> = row.iter().map(|db| 10f64.powf(db / 10.0)).collect();
            let total: f64 = power.iter().sum();
            let lo = peak.saturating_sub(bin_window);
            let hi = (peak + bin_window + 1).min(power.len());
            let near: f64 = power[lo..hi].iter().sum();
            total > 0.0 && near / total >= 0.5
        })
        .count();
    concentrated as f64 / spectra.values.len().max(1) as f64
}

/// Write a delimited table: header row of bin frequencies in Hz, then one
/// row of dB values per kernel.
pub fn write_spectra(spectra: &SpectrumMatrix, path: &Path) -> Result<()> {
    let mut out = String::new();
    let header: Vec<String> = (0..spectra.cols())
        .map(|b| format!("{:.2}", spectra.bin_hz(b)))
        .collect();
    out.push_str(&header.join("\t"));
    out.push('\n');
    for row in &spectra.values {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
        out.push_str(&line.join("\t"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::build_model;

    #[test]
    fn conv_spectra_have_the_expected_shape_and_sorted_rows() {
        let config = ModelConfig::new(ModelKind::WavelocConv, 3);
        let model = build_model(&config).unwrap();
        let s = export_kernel_spectra(&model, &config, 1024).unwrap();
        assert_eq!(s.rows(), 64);
        assert_eq!(s.cols(), 513);
        let bins: Vec<usize> = s.values.iter().map(|r| dominant_bin(r)).collect();
        assert!(bins.windows(2).all(|w| w[0] <= w[1]));
        assert!(s.values.iter().flatten().all(|v| v.is_finite()));
    }

    #[test]
    fn non_conv_models_are_rejected() {
        let config = ModelConfig::new(ModelKind::GccBaseline, 3);
        let model = build_model(&config).unwrap();
        assert!(export_kernel_spectra(&model, &config, 1024).is_err());
    }

    #[test]
    fn gammatone_kernels_are_mostly_band_pass() {
        // The designed filterbank is the canonical band-pass reference; the
        // lowest channels spread slightly past a +-10-bin window because the
        // 320-tap window truncates their envelope.
        let bank = crate::dsp::gammatone::design_gammatone_bank();
        let spectra = kernel_log_power_spectra(bank.kernels(), 1024).unwrap();
        assert!(band_pass_fraction(&spectra, 10) >= 0.9);
    }

    #[test]
    fn fresh_conv_front_end_is_band_limited() {
        let config = ModelConfig::new(ModelKind::WavelocConv, 5);
        let model = build_model(&config).unwrap();
        let s = export_kernel_spectra(&model, &config, 1024).unwrap();
        assert!(band_pass_fraction(&s, 10) >= 0.9);
    }

    #[test]
    fn white_spectrum_is_not_band_pass() {
        let mut impulse = vec![vec![0.0f32; 64]];
        impulse[0][0] = 1.0;
        let spectra = kernel_log_power_spectra(&impulse, 1024).unwrap();
        assert_eq!(band_pass_fraction(&spectra, 10), 0.0);
    }
}
