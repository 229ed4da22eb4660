//! Chunk-based evaluation: averaged frame posteriors, argmax azimuth, RMSE.

use serde::{Deserialize, Serialize};

use super::data::read_binaural;
use crate::audio::frame_signal;
use crate::error::Result;
use crate::models::{azimuth_of_class, input_tensor, ModelInput, NUM_CLASSES};
use crate::nn::{InputKind, Mode, ModelGraph};
use crate::sim::dataset::{entry_label, ResolvedManifest, Split};

/// Frames per evaluation chunk (250 ms).
pub const CHUNK_FRAMES: usize = 25;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChunkResult {
    pub chunk_index: usize,
    pub true_azimuth_deg: f64,
    pub estimated_azimuth_deg: f64,
    pub mean_posterior: Vec<f32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    pub results: Vec<ChunkResult>,
    pub rmse_deg: f64,
    /// Files shorter than one chunk, skipped with a warning.
    pub skipped_files: usize,
}

/// Average a set of frame posteriors and take the argmax class.
pub fn chunk_estimate(posteriors: &[[f32; NUM_CLASSES]]) -> (usize, Vec<f32>) {
    let mut mean = vec![0.0f32; NUM_CLASSES];
    for p in posteriors {
        for (m, &v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= posteriors.len() as f32;
    }
    let best = mean
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    (best, mean)
}

pub fn rmse_deg(results: &[ChunkResult]) -> f64 {
    if results.is_empty() {
        return f64::NAN;
    }
    let sq: f64 = results
        .iter()
        .map(|r| (r.estimated_azimuth_deg - r.true_azimuth_deg).powi(2))
        .sum();
    (sq / results.len() as f64).sqrt()
}

/// Evaluate on the manifest's split, optionally restricted to one room.
/// Frames are grouped into consecutive non-overlapping 25-frame chunks
/// (trailing partial chunk dropped) and posteriors averaged per chunk.
pub fn evaluate_chunks(
    model: &ModelGraph<f32>,
    resolved: &ResolvedManifest,
    split: Split,
    room: Option<&str>,
) -> Result<EvalSummary> {
    let kind = model.input_kind();
    let mut results = Vec::new();
    let mut skipped = 0usize;
    let mut chunk_index = 0usize;
    for entry in resolved.entries_for(split) {
        if let Some(room) = room {
            if entry.scene.room_id != room {
                continue;
            }
        }
        let true_az = azimuth_of_class(entry_label(entry)?);
        let wave = read_binaural(&resolved.root.join(&entry.path))?;
        let frames = frame_signal(&wave)?;
        if frames.len() < CHUNK_FRAMES {
            eprintln!(
                "warning: {} has only {} frames, skipping",
                entry.path.display(),
                frames.len()
            );
            skipped += 1;
            continue;
        }
        // One forward pass per file, then regroup into chunks.
        let inputs: Vec<ModelInput<'_>> = frames.iter().map(ModelInput::Frame).collect();
        let x = match kind {
            InputKind::Frames => input_tensor(&inputs)?,
            InputKind::Features(_) => {
                let gcc: Vec<crate::dsp::GccFeature> =
                    frames.iter().map(crate::dsp::gcc_phat).collect();
                let refs: Vec<ModelInput<'_>> = gcc.iter().map(ModelInput::Gcc).collect();
                input_tensor(&refs)?
            }
        };
        let out = model.forward(&x, Mode::Infer, None)?;
        let posteriors: Vec<[f32; NUM_CLASSES]> = out
            .data()
            .chunks(NUM_CLASSES)
            .map(|row| {
                let mut p = [0.0f32; NUM_CLASSES];
                p.copy_from_slice(row);
                p
            })
            .collect();
        for chunk in posteriors.chunks(CHUNK_FRAMES) {
            if chunk.len() < CHUNK_FRAMES {
                break;
            }
            let (class, mean) = chunk_estimate(chunk);
            results.push(ChunkResult {
                chunk_index,
                true_azimuth_deg: true_az,
                estimated_azimuth_deg: azimuth_of_class(class),
                mean_posterior: mean,
            });
            chunk_index += 1;
        }
    }
    let rmse = rmse_deg(&results);
    Ok(EvalSummary {
        results,
        rmse_deg: rmse,
        skipped_files: skipped,
    })
}
