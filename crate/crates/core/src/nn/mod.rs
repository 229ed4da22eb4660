//! A small CPU neural-network engine: tensors, layers, a layer-stack graph
//! with exact backprop, Adam, and the training schedule.

pub mod adam;
pub mod gradcheck;
pub mod graph;
pub mod layer;
pub mod scalar;
pub mod schedule;
pub mod tensor;

pub use adam::OptimizerState;
pub use gradcheck::{gradcheck, GradCheckReport, ModelCheck, DEFAULT_TOLERANCE};
pub use graph::{InputKind, Mode, ModelGraph, ParamMeta};
pub use layer::{Activation, ConvSpec, Layer, LayerKind};
pub use scalar::Scalar;
pub use schedule::{best_epoch, schedule_step, ScheduleDecision, TrainingSchedule, LR_FLOOR};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn classifier(outputs: usize) -> ModelGraph<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        ModelGraph::new(
            InputKind::Features(5),
            vec![
                Layer::dense(5, 16, Activation::Relu, &mut rng),
                Layer::dense(16, outputs, Activation::Linear, &mut rng),
                Layer::softmax(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let model = classifier(37);
        let mut x = Tensor::zeros(&[4, 5]);
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            *v = (i as f64 * 0.37).sin();
        }
        let out = model.forward(&x, Mode::Infer, None).unwrap();
        assert_eq!(out.shape(), [4, 37]);
        for row in out.data().chunks(37) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn equal_logits_give_uniform_posterior_and_ln_k_loss() {
        // A zero-weight final dense layer yields identical logits, so the
        // posterior is 1/37 = 0.0270... and the loss is ln 37 = 3.6109...
        let mut model = classifier(37);
        model.for_each_param_mut(&mut |meta, t| {
            if meta.name.starts_with("layer1") {
                t.fill(0.0);
            }
        });
        let x = Tensor::from_vec(&[2, 5], vec![0.3; 10]).unwrap();
        let out = model.forward(&x, Mode::Infer, None).unwrap();
        for &p in out.data() {
            assert!((p - 1.0 / 37.0).abs() < 1e-12);
        }
        let loss = model.cross_entropy(&x, &[0, 36]).unwrap();
        assert!((loss - (37.0f64).ln()).abs() < 1e-12);
        assert!((loss - 3.6109).abs() < 1e-4);
    }

    #[test]
    fn infer_mode_is_deterministic_with_dropout_present() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let model = ModelGraph::<f64>::new(
            InputKind::Features(6),
            vec![
                Layer::dense(6, 10, Activation::Sigmoid, &mut rng),
                Layer::dropout(0.5).unwrap(),
                Layer::dense(10, 4, Activation::Linear, &mut rng),
                Layer::softmax(),
            ],
        )
        .unwrap();
        let x = Tensor::from_vec(&[3, 6], (0..18).map(|i| i as f64 / 18.0).collect()).unwrap();
        let a = model.forward(&x, Mode::Infer, None).unwrap();
        let b = model.forward(&x, Mode::Infer, None).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn softmax_is_invariant_to_logit_shift() {
        let mut model = classifier(5);
        let x = Tensor::from_vec(&[1, 5], vec![0.1, -0.4, 0.9, 0.0, 2.0]).unwrap();
        let before = model.forward(&x, Mode::Infer, None).unwrap();
        // Shift every final-layer bias by a constant: posteriors unchanged.
        model.for_each_param_mut(&mut |meta, t| {
            if meta.name == "layer1.bias" {
                for v in t.data_mut() {
                    *v += 10.0;
                }
            }
        });
        let after = model.forward(&x, Mode::Infer, None).unwrap();
        for (a, b) in before.data().iter().zip(after.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn max_pool_output_length_is_floor_division() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = ModelGraph::<f64>::new(
            InputKind::Frames,
            vec![
                Layer::conv(
                    ConvSpec {
                        kernel_rows: 1,
                        kernel_len: 3,
                        in_maps: 1,
                        out_maps: 2,
                        activation: Activation::Relu,
                    },
                    &mut rng,
                ),
                Layer::max_pool(6), // 320 / 6 = 53 (floor)
                Layer::flatten(),
                Layer::dense(2 * 53 * 2, 4, Activation::Linear, &mut rng),
                Layer::softmax(),
            ],
        )
        .unwrap();
        let x = Tensor::zeros(&[1, 2, crate::audio::FRAME_LEN, 1]);
        let out = model.forward(&x, Mode::Infer, None).unwrap();
        assert_eq!(out.shape(), [1, 4]);
    }
}
