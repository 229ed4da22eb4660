//! Experiment matrix: systems x training modes x evaluation rooms.

use serde::{Deserialize, Serialize};

use super::eval::evaluate_chunks;
use super::train::{train, ExperimentSpec, TrainingMode};
use crate::error::Result;
use crate::models::{ModelConfig, ModelKind};
use crate::nn::TrainingSchedule;
use crate::sim::dataset::{ResolvedManifest, Split, ANECHOIC_ID};

/// Published reference chunk RMSE in degrees for anechoic-only training,
/// columns [anechoic, room A, room B, room C, room D]. Included in matrix
/// output as context rows; they are not pass/fail targets.
pub const REFERENCE_ANECHOIC_TRAINED: [(ModelKind, [f64; 5]); 3] = [
    (ModelKind::GccBaseline, [0.1, 2.6, 9.3, 2.6, 10.1]),
    (ModelKind::WavelocGtf, [0.0, 9.1, 10.7, 1.6, 10.5]),
    (ModelKind::WavelocConv, [0.0, 37.7, 41.8, 37.3, 44.4]),
];

/// Published reference chunk RMSE in degrees under multi-conditional
/// training, columns [room A, room B, room C, room D]; each room's figure is
/// from the run that held that room out.
pub const REFERENCE_MCT: [(ModelKind, [f64; 4]); 3] = [
    (ModelKind::GccBaseline, [2.7, 3.3, 3.1, 5.2]),
    (ModelKind::WavelocGtf, [1.5, 3.0, 1.7, 3.5]),
    (ModelKind::WavelocConv, [1.7, 2.3, 1.4, 2.4]),
];

/// Published direct-to-reverberant ratios in dB for rooms A-D.
pub const REFERENCE_ROOM_DRR: [f64; 4] = [6.09, 5.31, 8.82, 6.12];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixCell {
    pub model: ModelKind,
    pub mode: TrainingMode,
    pub room_id: String,
    /// None when the run failed; see `error`.
    pub rmse_deg: Option<f64>,
    pub chunks: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixReport {
    pub cells: Vec<MatrixCell>,
    pub wall_secs: f64,
}

/// Shared knobs for every run in the matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixOptions {
    pub schedule: TrainingSchedule,
    pub seed: u64,
    pub frame_stride: usize,
}

impl Default for MatrixOptions {
    fn default() -> Self {
        Self {
            schedule: TrainingSchedule::default(),
            seed: 0,
            frame_stride: 1,
        }
    }
}

fn eval_rooms(mode: &TrainingMode, resolved: &ResolvedManifest) -> Vec<String> {
    match mode {
        // Anechoic-only training is evaluated everywhere, reverberant rooms
        // included, to expose the generalisation gap.
        TrainingMode::AnechoicOnly => resolved
            .entries
            .iter()
            .map(|e| e.scene.room_id.clone())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect(),
        // An MCT run only has one honest test condition: its held-out room.
        TrainingMode::Mct { test_room } => vec![test_room.clone()],
    }
}

/// Train and evaluate every (system, mode) pair. A failed cell is recorded
/// with its error message instead of aborting the rest of the grid.
pub fn run_matrix(
    resolved: &ResolvedManifest,
    systems: &[ModelKind],
    modes: &[TrainingMode],
    options: &MatrixOptions,
) -> MatrixReport {
    let started = std::time::Instant::now();
    let mut cells = Vec::new();
    for &kind in systems {
        for mode in modes {
            let mut spec = ExperimentSpec::new(
                ModelConfig::new(kind, options.seed),
                mode.clone(),
            );
            spec.schedule = options.schedule.clone();
            spec.frame_stride = options.frame_stride;
            let rooms = eval_rooms(mode, resolved);
            match train(&spec, resolved) {
                Ok((model, _report)) => {
                    for room in rooms {
                        cells.push(cell_for(
                            &model, resolved, kind, mode, &room,
                        ));
                    }
                }
                Err(e) => {
                    for room in rooms {
                        cells.push(MatrixCell {
                            model: kind,
                            mode: mode.clone(),
                            room_id: room,
                            rmse_deg: None,
                            chunks: 0,
                            error: Some(e.to_string()),
                        });
                    }
                }
            }
        }
    }
    MatrixReport {
        cells,
        wall_secs: started.elapsed().as_secs_f64(),
    }
}

fn cell_for(
    model: &crate::nn::ModelGraph<f32>,
    resolved: &ResolvedManifest,
    kind: ModelKind,
    mode: &TrainingMode,
    room: &str,
) -> MatrixCell {
    match evaluate_chunks(model, resolved, Split::Test, Some(room)) {
        Ok(summary) => MatrixCell {
            model: kind,
            mode: mode.clone(),
            room_id: room.to_string(),
            rmse_deg: Some(summary.rmse_deg),
            chunks: summary.results.len(),
            error: None,
        },
        Err(e) => MatrixCell {
            model: kind,
            mode: mode.clone(),
            room_id: room.to_string(),
            rmse_deg: None,
            chunks: 0,
            error: Some(e.to_string()),
        },
    }
}

fn mode_label(mode: &TrainingMode) -> String {
    match mode {
        TrainingMode::AnechoicOnly => "anechoic-only".to_string(),
        TrainingMode::Mct { test_room } => format!("mct(-{test_room})"),
    }
}

impl MatrixReport {
    /// Aligned plain-text table, one row per cell, with reference context.
    pub fn render(&self) -> String {
        let mut rows: Vec<[String; 5]> = vec![[
            "system".into(),
            "training".into(),
            "room".into(),
            "rmse_deg".into(),
            "chunks".into(),
        ]];
        for c in &self.cells {
            rows.push([
                c.model.as_str().to_string(),
                mode_label(&c.mode),
                c.room_id.clone(),
                match (c.rmse_deg, &c.error) {
                    (Some(r), _) => format!("{r:.1}"),
                    (None, Some(e)) => format!("failed: {e}"),
                    (None, None) => "-".into(),
                },
                c.chunks.to_string(),
            ]);
        }
        let widths: Vec<usize> = (0..5)
            .map(|i| rows.iter().map(|r| r[i].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &rows {
            for (i, cell) in row.iter().enumerate() {
                out.push_str(&format!("{cell:<w$}  ", w = widths[i]));
            }
            out.push('\n');
        }
        out.push('\n');
        out.push_str("reference (anechoic-only training, rooms anechoic/A/B/C/D):\n");
        for (kind, vals) in REFERENCE_ANECHOIC_TRAINED {
            out.push_str(&format!(
                "  {:<12} {}\n",
                kind.as_str(),
                vals.map(|v| format!("{v:.1}")).join(" / ")
            ));
        }
        out.push_str("reference (multi-conditional training, held-out rooms A/B/C/D):\n");
        for (kind, vals) in REFERENCE_MCT {
            out.push_str(&format!(
                "  {:<12} {}\n",
                kind.as_str(),
                vals.map(|v| format!("{v:.1}")).join(" / ")
            ));
        }
        out
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| crate::error::Error::io(path, e))
    }
}

/// Every MCT mode in the manifest: one per reverberant room.
pub fn mct_modes(resolved: &ResolvedManifest) -> Vec<TrainingMode> {
    resolved
        .entries
        .iter()
        .map(|e| e.scene.room_id.clone())
        .filter(|r| r != ANECHOIC_ID)
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .map(|test_room| TrainingMode::Mct { test_room })
        .collect()
}
