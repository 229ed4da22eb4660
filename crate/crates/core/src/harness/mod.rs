//! Training and evaluation harness: frame pooling, experiment runs,
//! chunk-based scoring, kernel-spectrum export and the experiment matrix.

pub mod data;
pub mod eval;
pub mod matrix;
pub mod spectra;
pub mod train;

pub use data::{load_pool, FramePool};
pub use eval::{chunk_estimate, evaluate_chunks, rmse_deg, ChunkResult, EvalSummary, CHUNK_FRAMES};
pub use matrix::{mct_modes, run_matrix, MatrixCell, MatrixOptions, MatrixReport};
pub use spectra::{band_pass_fraction, export_kernel_spectra, write_spectra};
pub use train::{train, EpochStats, ExperimentReport, ExperimentSpec, TrainingMode};
