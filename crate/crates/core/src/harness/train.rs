//! Training loop: pooled frames, Adam, validation-driven schedule.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{load_pool, FramePool};
use crate::error::{Error, Result};
use crate::models::{build_model, ModelConfig};
use crate::nn::{
    best_epoch, schedule_step, ModelGraph, OptimizerState, ScheduleDecision, TrainingSchedule,
};
use crate::sim::dataset::{ManifestEntry, ResolvedManifest, Split, ANECHOIC_ID};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum TrainingMode {
    AnechoicOnly,
    /// Multi-conditional training: anechoic plus every room except the
    /// held-out test room.
    Mct { test_room: String },
}

impl TrainingMode {
    pub fn keeps(&self, entry: &ManifestEntry) -> bool {
        match self {
            TrainingMode::AnechoicOnly => entry.scene.room_id == ANECHOIC_ID,
            TrainingMode::Mct { test_room } => entry.scene.room_id != *test_room,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub model: ModelConfig,
    pub mode: TrainingMode,
    pub schedule: TrainingSchedule,
    pub seed: u64,
    /// Train on every n-th frame of each signal (1 = all frames).
    pub frame_stride: usize,
}

impl ExperimentSpec {
    pub fn new(model: ModelConfig, mode: TrainingMode) -> Self {
        Self {
            model,
            mode,
            schedule: TrainingSchedule::default(),
            seed: model.seed,
            frame_stride: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub train_frames: usize,
    pub valid_frames: usize,
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub wall_secs: f64,
}

fn epoch_loss(
    model: &ModelGraph<f32>,
    pool: &FramePool,
    batch_size: usize,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    let indices: Vec<usize> = (0..pool.len()).collect();
    for chunk in indices.chunks(batch_size) {
        let (x, labels) = pool.batch(chunk);
        total += model.cross_entropy(&x, &labels)? * labels.len() as f64;
        count += labels.len();
    }
    Ok(total / count as f64)
}

/// Train `spec.model` on the manifest's train split, driving the learning
/// rate and stopping from validation loss; the best-validation weights are
/// restored before returning.
pub fn train(
    spec: &ExperimentSpec,
    resolved: &ResolvedManifest,
) -> Result<(ModelGraph<f32>, ExperimentReport)> {
    let started = std::time::Instant::now();
    spec.schedule.validate()?;
    let mut model = build_model(&spec.model)?;
    let kind = model.input_kind();

    let train_pool = load_pool(resolved, Split::Train, kind, spec.frame_stride, |e| {
        spec.mode.keeps(e)
    })?;
    let valid_pool = load_pool(resolved, Split::Valid, kind, spec.frame_stride, |e| {
        spec.mode.keeps(e)
    })?;
    if train_pool.is_empty() || valid_pool.is_empty() {
        return Err(Error::Config(format!(
            "empty split for mode {:?}: {} train / {} valid frames",
            spec.mode,
            train_pool.len(),
            valid_pool.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut optimizer = OptimizerState::new(&model, spec.schedule.base_lr)?;
    let mut epochs: Vec<EpochStats> = Vec::new();
    let mut val_losses: Vec<f64> = Vec::new();
    let mut best_snapshot = model.param_snapshot();
    let mut best_val = f64::INFINITY;
    let mut indices: Vec<usize> = (0..train_pool.len()).collect();

    loop {
        let lr = epochs
            .last()
            .map(|e| e.learning_rate)
            .unwrap_or(spec.schedule.base_lr);
        optimizer.learning_rate = lr;
        indices.shuffle(&mut rng);

        let mut train_loss = 0.0;
        let mut seen = 0usize;
        for chunk in indices.chunks(spec.schedule.batch_size) {
            let (x, labels) = train_pool.batch(chunk);
            let (loss, grads) = model.loss_and_grads(&x, &labels, &mut rng)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite training loss {loss} in epoch {}",
                    epochs.len()
                )));
            }
            optimizer.step(&mut model, &grads)?;
            train_loss += loss * labels.len() as f64;
            seen += labels.len();
        }
        train_loss /= seen as f64;

        let val_loss = epoch_loss(&model, &valid_pool, spec.schedule.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite validation loss {val_loss} in epoch {}",
                epochs.len()
            )));
        }
        val_losses.push(val_loss);
        if val_loss < best_val {
            best_val = val_loss;
            best_snapshot = model.param_snapshot();
        }

        match schedule_step(&spec.schedule, &val_losses)? {
            ScheduleDecision::Continue { learning_rate } => {
                epochs.push(EpochStats {
                    epoch: epochs.len(),
                    train_loss,
                    val_loss,
                    learning_rate,
                });
            }
            ScheduleDecision::Stop { restore_best } => {
                epochs.push(EpochStats {
                    epoch: epochs.len(),
                    train_loss,
                    val_loss,
                    learning_rate: lr,
                });
                if restore_best {
                    model.restore_snapshot(&best_snapshot)?;
                }
                break;
            }
        }
    }

    let report = ExperimentReport {
        spec: spec.clone(),
        train_frames: train_pool.len(),
        valid_frames: valid_pool.len(),
        best_epoch: best_epoch(&val_losses),
        epochs,
        wall_secs: started.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}
