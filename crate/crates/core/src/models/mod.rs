//! The three concrete architectures, frame-level prediction, and the
//! azimuth class grid.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMetadata, LoadedCheckpoint};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{BinauralFrame, FRAME_LEN, SAMPLE_RATE};
use crate::dsp::gammatone::{design_gammatone_bank, NUM_CHANNELS};
use crate::dsp::{GccFeature, GCC_LAGS};
use crate::error::{Error, Result};
use crate::nn::{Activation, ConvSpec, InputKind, Layer, Mode, ModelGraph, Tensor};

pub const NUM_CLASSES: usize = 37;
/// Azimuth grid spacing in degrees.
pub const AZIMUTH_STEP: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    WavelocGtf,
    WavelocConv,
    GccBaseline,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::WavelocGtf => "waveloc_gtf",
            ModelKind::WavelocConv => "waveloc_conv",
            ModelKind::GccBaseline => "gcc_baseline",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "waveloc_gtf" | "gtf" => Ok(ModelKind::WavelocGtf),
            "waveloc_conv" | "conv" => Ok(ModelKind::WavelocConv),
            "gcc_baseline" | "baseline" => Ok(ModelKind::GccBaseline),
            other => Err(Error::Config(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Per-band 2x18 kernel count in the GTF variant.
    pub gtf_band_kernels_2d: usize,
    /// Per-band 1x6 kernel count in the GTF variant.
    pub gtf_band_kernels_1d: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(kind: ModelKind, seed: u64) -> Self {
        Self {
            kind,
            gtf_band_kernels_2d: 6,
            gtf_band_kernels_1d: 6,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gtf_band_kernels_2d == 0 || self.gtf_band_kernels_1d == 0 {
            return Err(Error::Config(
                "per-band kernel counts must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Azimuth in degrees for a class index (0 -> -90, 18 -> 0, 36 -> +90).
pub fn azimuth_of_class(class: usize) -> f64 {
    -90.0 + AZIMUTH_STEP * class as f64
}

/// Nearest class index for an azimuth in [-90, +90] degrees.
pub fn class_of_azimuth(azimuth: f64) -> Result<usize> {
    if !(-90.0..=90.0).contains(&azimuth) {
        return Err(Error::InvalidInput(format!(
            "azimuth {azimuth} outside [-90, 90]"
        )));
    }
    Ok(((azimuth + 90.0) / AZIMUTH_STEP).round() as usize)
}

fn dropout_half() -> Layer<f32> {
    Layer::dropout(0.5).expect("0.5 is a valid rate")
}

pub fn build_waveloc_gtf(config: &ModelConfig) -> Result<ModelGraph<f32>> {
    if config.kind != ModelKind::WavelocGtf {
        return Err(Error::Config(format!(
            "build_waveloc_gtf called with kind {}",
            config.kind.as_str()
        )));
    }
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let bank = design_gammatone_bank();
    let mut kernels = Vec::with_capacity(NUM_CHANNELS * FRAME_LEN);
    for k in bank.kernels() {
        kernels.extend_from_slice(k);
    }
    let frozen = Layer::conv_fixed(
        ConvSpec {
            kernel_rows: 1,
            kernel_len: FRAME_LEN,
            in_maps: 1,
            out_maps: NUM_CHANNELS,
            activation: Activation::Linear,
        },
        Tensor::from_vec(&[NUM_CHANNELS, 1, FRAME_LEN], kernels)?,
    )?;

    let (k2d, k1d) = (config.gtf_band_kernels_2d, config.gtf_band_kernels_1d);
    let stacks: Vec<Vec<Layer<f32>>> = (0..NUM_CHANNELS)
        .map(|_| {
            vec![
                Layer::conv(
                    ConvSpec {
                        kernel_rows: 2,
                        kernel_len: 18,
                        in_maps: 1,
                        out_maps: k2d,
                        activation: Activation::Relu,
                    },
                    &mut rng,
                ),
                Layer::max_pool(4),
                Layer::conv(
                    ConvSpec {
                        kernel_rows: 1,
                        kernel_len: 6,
                        in_maps: k2d,
                        out_maps: k1d,
                        activation: Activation::Relu,
                    },
                    &mut rng,
                ),
                Layer::max_pool(4),
            ]
        })
        .collect();
    // Per band: 2x320 -> pool2 -> 2x160 -> ear conv -> 1x160 -> pool4 ->
    // 1x40 -> conv -> 1x40 -> pool4 -> 1x10, flattened to 10*k1d values.
    let concat_width = NUM_CHANNELS * 10 * k1d;

    ModelGraph::new(
        InputKind::Frames,
        vec![
            frozen,
            Layer::peak_norm(),
            Layer::max_pool(2),
            Layer::band_split(stacks),
            Layer::dense(concat_width, 1024, Activation::Relu, &mut rng),
            dropout_half(),
            Layer::dense(1024, 1024, Activation::Relu, &mut rng),
            dropout_half(),
            Layer::dense(1024, NUM_CLASSES, Activation::Linear, &mut rng),
            Layer::softmax(),
        ],
    )
}

/// Trainable front-end kernels initialised as random-phase Hann-windowed
/// cosines on a jittered ERB-spaced grid, the usual starting point for
/// waveform front ends: band-limited from the first step, free to move.
fn band_limited_kernels(out_maps: usize, len: usize, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    use crate::dsp::gammatone::{erb_rate, erb_rate_to_hz, FREQ_HI, FREQ_LO};
    use std::f64::consts::PI;

    let (e_lo, e_hi) = (erb_rate(FREQ_LO), erb_rate(FREQ_HI));
    let e_step = (e_hi - e_lo) / (out_maps - 1) as f64;
    let mut data = Vec::with_capacity(out_maps * len);
    for ch in 0..out_maps {
        let jitter = rng.random_range(-0.5..0.5) * e_step;
        let freq = erb_rate_to_hz(e_lo + ch as f64 * e_step + jitter);
        let phase = rng.random_range(0.0..2.0 * PI);
        let kernel: Vec<f64> = (0..len)
            .map(|t| {
                let window = 0.5 - 0.5 * (2.0 * PI * t as f64 / (len - 1) as f64).cos();
                window * (2.0 * PI * freq * t as f64 / SAMPLE_RATE as f64 + phase).cos()
            })
            .collect();
        // Unit L2 energy keeps the band-limited component well above the
        // optimiser's per-step drift.
        let norm = kernel.iter().map(|v| v * v).sum::<f64>().sqrt();
        data.extend(kernel.iter().map(|v| (v / norm) as f32));
    }
    Tensor::from_vec(&[out_maps, 1, len], data).expect("consistent kernel layout")
}

pub fn build_waveloc_conv(config: &ModelConfig) -> Result<ModelGraph<f32>> {
    if config.kind != ModelKind::WavelocConv {
        return Err(Error::Config(format!(
            "build_waveloc_conv called with kind {}",
            config.kind.as_str()
        )));
    }
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let front = band_limited_kernels(64, 256, &mut rng);
    // 2x320x1 -> 2x320x64 -> 2x160x64 -> 1x160x64 -> 1x40x64 -> 1x40x64
    // -> 1x10x64 -> 640 -> 1024 -> 1024 -> 37
    ModelGraph::new(
        InputKind::Frames,
        vec![
            Layer::conv_init(
                ConvSpec {
                    kernel_rows: 1,
                    kernel_len: 256,
                    in_maps: 1,
                    out_maps: 64,
                    activation: Activation::Linear,
                },
                front,
            )?,
            Layer::max_pool(2),
            Layer::conv(
                ConvSpec {
                    kernel_rows: 2,
                    kernel_len: 18,
                    in_maps: 64,
                    out_maps: 64,
                    activation: Activation::Relu,
                },
                &mut rng,
            ),
            Layer::max_pool(4),
            Layer::conv(
                ConvSpec {
                    kernel_rows: 1,
                    kernel_len: 6,
                    in_maps: 64,
                    out_maps: 64,
                    activation: Activation::Relu,
                },
                &mut rng,
            ),
            Layer::max_pool(4),
            Layer::flatten(),
            Layer::dense(640, 1024, Activation::Relu, &mut rng),
            dropout_half(),
            Layer::dense(1024, 1024, Activation::Relu, &mut rng),
            dropout_half(),
            Layer::dense(1024, NUM_CLASSES, Activation::Linear, &mut rng),
            Layer::softmax(),
        ],
    )
}

pub fn build_gcc_baseline(config: &ModelConfig) -> Result<ModelGraph<f32>> {
    if config.kind != ModelKind::GccBaseline {
        return Err(Error::Config(format!(
            "build_gcc_baseline called with kind {}",
            config.kind.as_str()
        )));
    }
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    ModelGraph::new(
        InputKind::Features(GCC_LAGS),
        vec![
            Layer::dense(GCC_LAGS, 1024, Activation::Sigmoid, &mut rng),
            dropout_half(),
            Layer::dense(1024, 1024, Activation::Sigmoid, &mut rng),
            dropout_half(),
            Layer::dense(1024, NUM_CLASSES, Activation::Linear, &mut rng),
            Layer::softmax(),
        ],
    )
}

pub fn build_model(config: &ModelConfig) -> Result<ModelGraph<f32>> {
    match config.kind {
        ModelKind::WavelocGtf => build_waveloc_gtf(config),
        ModelKind::WavelocConv => build_waveloc_conv(config),
        ModelKind::GccBaseline => build_gcc_baseline(config),
    }
}

/// Frame-level model input: raw binaural samples or GCC-PHAT features.
#[derive(Debug, Clone, Copy)]
pub enum ModelInput<'a> {
    Frame(&'a BinauralFrame),
    Gcc(&'a GccFeature),
}

pub fn input_tensor(frames: &[ModelInput<'_>]) -> Result<Tensor<f32>> {
    if frames.is_empty() {
        return Err(Error::EmptyInput("no items to batch".into()));
    }
    match frames[0] {
        ModelInput::Frame(_) => {
            let mut t = Tensor::zeros(&[frames.len(), 2, FRAME_LEN, 1]);
            for (i, item) in frames.iter().enumerate() {
                let ModelInput::Frame(f) = item else {
                    return Err(Error::InvalidInput("mixed input kinds in batch".into()));
                };
                let base = i * 2 * FRAME_LEN;
                t.data_mut()[base..base + FRAME_LEN].copy_from_slice(f.left());
                t.data_mut()[base + FRAME_LEN..base + 2 * FRAME_LEN].copy_from_slice(f.right());
            }
            Ok(t)
        }
        ModelInput::Gcc(_) => {
            let mut t = Tensor::zeros(&[frames.len(), GCC_LAGS]);
            for (i, item) in frames.iter().enumerate() {
                let ModelInput::Gcc(g) = item else {
                    return Err(Error::InvalidInput("mixed input kinds in batch".into()));
                };
                t.data_mut()[i * GCC_LAGS..(i + 1) * GCC_LAGS].copy_from_slice(g.values());
            }
            Ok(t)
        }
    }
}

/// Softmax posterior over the 37 azimuth classes for one frame.
pub fn predict_frame(model: &ModelGraph<f32>, input: ModelInput<'_>) -> Result<[f32; NUM_CLASSES]> {
    let kind_ok = matches!(
        (model.input_kind(), input),
        (InputKind::Frames, ModelInput::Frame(_))
            | (InputKind::Features(GCC_LAGS), ModelInput::Gcc(_))
    );
    if !kind_ok {
        return Err(Error::InvalidInput(
            "input kind does not match the model's expected input".into(),
        ));
    }
    let x = input_tensor(&[input])?;
    let out = model.forward(&x, Mode::Infer, None)?;
    let mut posterior = [0.0f32; NUM_CLASSES];
    posterior.copy_from_slice(out.data());
    Ok(posterior)
}

/// Number of trainable scalar parameters.
pub fn trainable_parameter_count(model: &ModelGraph<f32>) -> usize {
    let mut n = 0;
    model.for_each_param(&mut |meta, t| {
        if meta.trainable {
            n += t.len();
        }
    });
    n
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(kind: ModelKind) -> ModelConfig {
        ModelConfig::new(kind, 1234)
    }

    #[test]
    fn azimuth_grid_is_a_bijection() {
        assert_eq!(azimuth_of_class(0), -90.0);
        assert_eq!(azimuth_of_class(18), 0.0);
        assert_eq!(azimuth_of_class(36), 90.0);
        for i in 0..NUM_CLASSES {
            assert_eq!(class_of_azimuth(azimuth_of_class(i)).unwrap(), i);
        }
        assert!(class_of_azimuth(95.0).is_err());
    }

    #[test]
    fn baseline_parameter_count_is_exact() {
        let m = build_gcc_baseline(&config(ModelKind::GccBaseline)).unwrap();
        // 37*1024+1024 + 1024*1024+1024 + 1024*37+37
        assert_eq!(trainable_parameter_count(&m), 1_126_437);
    }

    #[test]
    fn conv_parameter_count_matches_closed_form() {
        let m = build_waveloc_conv(&config(ModelKind::WavelocConv)).unwrap();
        let conv1 = 64 * 256 + 64;
        let conv2 = 64 * (2 * 64 * 18) + 64;
        let conv3 = 64 * (64 * 6) + 64;
        let dense = (640 * 1024 + 1024) + (1024 * 1024 + 1024) + (1024 * 37 + 37);
        assert_eq!(trainable_parameter_count(&m), conv1 + conv2 + conv3 + dense);
        assert_eq!(trainable_parameter_count(&m), 1_932_517);
    }

    #[test]
    fn gtf_parameter_count_matches_closed_form() {
        let m = build_waveloc_gtf(&config(ModelKind::WavelocGtf)).unwrap();
        let per_band = (6 * (2 * 18) + 6) + (6 * (6 * 6) + 6);
        let dense = (1920 * 1024 + 1024) + (1024 * 1024 + 1024) + (1024 * 37 + 37);
        assert_eq!(
            trainable_parameter_count(&m),
            32 * per_band + dense
        );
        assert_eq!(trainable_parameter_count(&m), 3_068_837);
    }

    #[test]
    fn conv_first_layer_shape_and_activation() {
        let m = build_waveloc_conv(&config(ModelKind::WavelocConv)).unwrap();
        let mut found = false;
        m.for_each_param(&mut |meta, t| {
            if meta.name == "layer0.weight" {
                assert_eq!(t.shape(), [64, 1, 256]);
                assert!(meta.trainable);
                found = true;
            }
        });
        assert!(found);
    }

    #[test]
    fn gtf_gammatone_layer_is_frozen_and_matches_designed_bank() {
        let m = build_waveloc_gtf(&config(ModelKind::WavelocGtf)).unwrap();
        let bank = design_gammatone_bank();
        let mut checked = false;
        m.for_each_param(&mut |meta, t| {
            if meta.name == "layer0.weight" {
                assert!(!meta.trainable);
                assert_eq!(t.shape(), [32, 1, 320]);
                for (c, k) in bank.kernels().iter().enumerate() {
                    assert_eq!(&t.data()[c * 320..(c + 1) * 320], &k[..]);
                }
                checked = true;
            }
        });
        assert!(checked);
    }

    #[test]
    fn all_three_graphs_run_a_two_item_batch() {
        let frame = BinauralFrame::from_slices(&[0.1; FRAME_LEN], &[-0.1; FRAME_LEN]).unwrap();
        for kind in [ModelKind::WavelocGtf, ModelKind::WavelocConv] {
            let m = build_model(&config(kind)).unwrap();
            let x = input_tensor(&[ModelInput::Frame(&frame), ModelInput::Frame(&frame)]).unwrap();
            let out = m.forward(&x, Mode::Infer, None).unwrap();
            assert_eq!(out.shape(), [2, NUM_CLASSES]);
            assert!(out.all_finite());
        }
        let g = crate::dsp::gcc_phat(&frame);
        let m = build_model(&config(ModelKind::GccBaseline)).unwrap();
        let x = input_tensor(&[ModelInput::Gcc(&g), ModelInput::Gcc(&g)]).unwrap();
        let out = m.forward(&x, Mode::Infer, None).unwrap();
        assert_eq!(out.shape(), [2, NUM_CLASSES]);
    }

    #[test]
    fn zeroed_baseline_head_gives_uniform_posterior() {
        let mut m = build_gcc_baseline(&config(ModelKind::GccBaseline)).unwrap();
        m.for_each_param_mut(&mut |meta, t| {
            if meta.name.starts_with("layer4") {
                t.fill(0.0);
            }
        });
        let frame = BinauralFrame::from_slices(&[0.3; FRAME_LEN], &[0.2; FRAME_LEN]).unwrap();
        let g = crate::dsp::gcc_phat(&frame);
        let p = predict_frame(&m, ModelInput::Gcc(&g)).unwrap();
        for v in p {
            assert!((v - 1.0 / 37.0).abs() < 1e-6);
        }
    }

    #[test]
    fn input_kind_mismatch_is_rejected() {
        let m = build_waveloc_conv(&config(ModelKind::WavelocConv)).unwrap();
        let frame = BinauralFrame::from_slices(&[0.0; FRAME_LEN], &[0.0; FRAME_LEN]).unwrap();
        let g = crate::dsp::gcc_phat(&frame);
        assert!(predict_frame(&m, ModelInput::Gcc(&g)).is_err());
    }

    #[test]
    fn peak_norm_makes_gtf_gain_invariant() {
        let m = build_waveloc_gtf(&config(ModelKind::WavelocGtf)).unwrap();
        let mut left = [0.0f32; FRAME_LEN];
        let mut right = [0.0f32; FRAME_LEN];
        for i in 0..FRAME_LEN {
            left[i] = (i as f32 * 0.13).sin() * 0.2;
            right[i] = (i as f32 * 0.11).cos() * 0.15;
        }
        let f1 = BinauralFrame::from_slices(&left, &right).unwrap();
        let scaled_l: Vec<f32> = left.iter().map(|v| v * 7.5).collect();
        let scaled_r: Vec<f32> = right.iter().map(|v| v * 7.5).collect();
        let f2 = BinauralFrame::from_slices(&scaled_l, &scaled_r).unwrap();
        let p1 = predict_frame(&m, ModelInput::Frame(&f1)).unwrap();
        let p2 = predict_frame(&m, ModelInput::Frame(&f2)).unwrap();
        for (a, b) in p1.iter().zip(&p2) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}
