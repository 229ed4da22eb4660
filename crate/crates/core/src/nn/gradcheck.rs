//! Finite-difference verification of the backward pass.
//!
//! Runs in double precision with central differences (step 1e-5) over a
//! battery of deliberately small models, one per layer kind. Dropout is kept
//! deterministic across evaluations by cloning the RNG.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{InputKind, ModelGraph};
use super::layer::{Activation, ConvSpec, Layer};
use super::tensor::Tensor;
use crate::audio::FRAME_LEN;
use crate::error::{Error, Result};

pub const DEFAULT_TOLERANCE: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct ModelCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub checked_params: usize,
    /// Parameter tensors skipped because they are non-trainable.
    pub skipped: Vec<String>,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub checks: Vec<ModelCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn loss_of(model: &ModelGraph<f64>, input: &Tensor<f64>, labels: &[usize], rng: &ChaCha8Rng) -> Result<f64> {
    let (loss, _) = model.loss_and_grads(input, labels, &mut rng.clone())?;
    Ok(loss)
}

fn set_param_element(model: &mut ModelGraph<f64>, slot: usize, index: usize, value: f64) {
    model.for_each_param_mut(&mut |meta, t| {
        if meta.slot == slot {
            t.data_mut()[index] = value;
        }
    });
}

/// Compare analytic gradients against central finite differences for every
/// trainable parameter of `model`.
pub fn check_model(
    name: &str,
    model: &mut ModelGraph<f64>,
    input: &Tensor<f64>,
    labels: &[usize],
    tolerance: f64,
) -> Result<ModelCheck> {
    let rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let (_, analytic) = model.loss_and_grads(input, labels, &mut rng.clone())?;
    for (slot, g) in analytic.iter().enumerate() {
        if !g.all_finite() {
            return Err(Error::Numerical(format!(
                "non-finite analytic gradient in {name}, slot {slot}"
            )));
        }
    }

    let mut meta = Vec::new();
    model.for_each_param(&mut |m, t| meta.push((m, t.len())));
    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    let mut skipped = Vec::new();
    for (m, len) in meta {
        if !m.trainable {
            skipped.push(m.name.clone());
            continue;
        }
        for i in 0..len {
            let orig = {
                let mut v = 0.0;
                model.for_each_param(&mut |mm, t| {
                    if mm.slot == m.slot {
                        v = t.data()[i];
                    }
                });
                v
            };
            set_param_element(model, m.slot, i, orig + FD_STEP);
            let lp = loss_of(model, input, labels, &rng)?;
            set_param_element(model, m.slot, i, orig - FD_STEP);
            let lm = loss_of(model, input, labels, &rng)?;
            set_param_element(model, m.slot, i, orig);
            let numeric = (lp - lm) / (2.0 * FD_STEP);
            let a = analytic[m.slot].data()[i];
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            let rel = (a - numeric).abs() / denom;
            if rel > max_rel {
                max_rel = rel;
            }
            checked += 1;
        }
    }
    Ok(ModelCheck {
        name: name.into(),
        max_rel_error: max_rel,
        checked_params: checked,
        skipped,
        passed: max_rel < tolerance,
    })
}

fn frame_input(rng: &mut ChaCha8Rng, batch: usize) -> Tensor<f64> {
    let mut t = Tensor::zeros(&[batch, 2, FRAME_LEN, 1]);
    for v in t.data_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    t
}

fn feature_input(rng: &mut ChaCha8Rng, batch: usize, n: usize) -> Tensor<f64> {
    let mut t = Tensor::zeros(&[batch, n]);
    for v in t.data_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    t
}

/// The standard battery: one small model per layer kind.
pub fn gradcheck(tolerance: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut checks = Vec::new();

    // dense + relu
    {
        let mut model = ModelGraph::new(
            InputKind::Features(9),
            vec![
                Layer::dense(9, 8, Activation::Relu, &mut rng),
                Layer::dense(8, 5, Activation::Linear, &mut rng),
                Layer::softmax(),
            ],
        )?;
        let x = feature_input(&mut rng, 3, 9);
        checks.push(check_model("dense_relu", &mut model, &x, &[0, 2, 4], tolerance)?);
    }

    // dense + sigmoid + dropout (baseline-shaped)
    {
        let mut model = ModelGraph::new(
            InputKind::Features(7),
            vec![
                Layer::dense(7, 6, Activation::Sigmoid, &mut rng),
                Layer::dropout(0.5)?,
                Layer::dense(6, 4, Activation::Linear, &mut rng),
                Layer::softmax(),
            ],
        )?;
        let x = feature_input(&mut rng, 3, 7);
        checks.push(check_model("sigmoid_dropout", &mut model, &x, &[1, 3, 0], tolerance)?);
    }

    // 1-D time conv + max pool (ties broken by perturbation-free argmax)
    {
        let mut model = ModelGraph::new(
            InputKind::Frames,
            vec![
                Layer::conv(
                    ConvSpec {
                        kernel_rows: 1,
                        kernel_len: 7,
                        in_maps: 1,
                        out_maps: 3,
                        activation: Activation::Linear,
                    },
                    &mut rng,
                ),
                Layer::max_pool(80),
                Layer::flatten(),
                Layer::dense(2 * 4 * 3, 3, Activation::Linear, &mut rng),
                Layer::softmax(),
            ],
        )?;
        let x = frame_input(&mut rng, 2, );
        checks.push(check_model("time_conv_max_pool", &mut model, &x, &[0, 2], tolerance)?);
    }

    // trainable conv below peak_normalise
    {
        let mut model = ModelGraph::new(
            InputKind::Frames,
            vec![
                Layer::conv(
                    ConvSpec {
                        kernel_rows: 1,
                        kernel_len: 5,
                        in_maps: 1,
                        out_maps: 2,
                        activation: Activation::Linear,
                    },
                    &mut rng,
                ),
                Layer::peak_norm(),
                Layer::max_pool(80),
                Layer::flatten(),
                Layer::dense(2 * 4 * 2, 3, Activation::Linear, &mut rng),
                Layer::softmax(),
            ],
        )?;
        let x = frame_input(&mut rng, 2);
        checks.push(check_model("peak_normalise", &mut model, &x, &[1, 2], tolerance)?);
    }

    // 2-row ear convolution inside a per-band split
    {
        let stacks = (0..2)
            .map(|_| {
                vec![
                    Layer::conv(
                        ConvSpec {
                            kernel_rows: 2,
                            kernel_len: 4,
                            in_maps: 1,
                            out_maps: 2,
                            activation: Activation::Relu,
                        },
                        &mut rng,
                    ),
                    Layer::max_pool(64),
                ]
            })
            .collect();
        let mut model = ModelGraph::new(
            InputKind::Frames,
            vec![
                Layer::conv(
                    ConvSpec {
                        kernel_rows: 1,
                        kernel_len: 5,
                        in_maps: 1,
                        out_maps: 2,
                        activation: Activation::Linear,
                    },
                    &mut rng,
                ),
                Layer::band_split(stacks),
                Layer::dense(2 * 5 * 2, 3, Activation::Linear, &mut rng),
                Layer::softmax(),
            ],
        )?;
        let x = frame_input(&mut rng, 2);
        checks.push(check_model("ear_conv_band_split", &mut model, &x, &[0, 1], tolerance)?);
    }

    // frozen first layer is reported as skipped
    {
        let mut wrng = ChaCha8Rng::seed_from_u64(5);
        let mut fixed = Tensor::zeros(&[2, 1, 5]);
        for v in fixed.data_mut() {
            *v = wrng.random_range(-1.0..1.0);
        }
        let mut model = ModelGraph::new(
            InputKind::Frames,
            vec![
                Layer::conv_fixed(
                    ConvSpec {
                        kernel_rows: 1,
                        kernel_len: 5,
                        in_maps: 1,
                        out_maps: 2,
                        activation: Activation::Linear,
                    },
                    fixed,
                )?,
                Layer::max_pool(80),
                Layer::flatten(),
                Layer::dense(2 * 4 * 2, 3, Activation::Linear, &mut rng),
                Layer::softmax(),
            ],
        )?;
        let x = frame_input(&mut rng, 2);
        let check = check_model("frozen_first_layer", &mut model, &x, &[1, 2], tolerance)?;
        if check.skipped.len() != 2 {
            return Err(Error::Numerical(
                "frozen layer parameters were not reported as skipped".into(),
            ));
        }
        checks.push(check);
    }

    Ok(GradCheckReport { tolerance, checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn battery_passes_at_default_tolerance() {
        let report = gradcheck(DEFAULT_TOLERANCE).unwrap();
        for c in &report.checks {
            assert!(
                c.passed,
                "{}: max rel error {} over {} params",
                c.name, c.max_rel_error, c.checked_params
            );
            assert!(c.checked_params > 0);
        }
        assert!(report.passed());
    }
}
