//! Adam optimiser with bias correction.

use super::graph::ModelGraph;
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Per-parameter moment accumulators plus step count and learning rate.
#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    trainable: Vec<bool>,
    step: u64,
    pub learning_rate: f64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(graph: &ModelGraph<T>, learning_rate: f64) -> Result<Self> {
        if learning_rate <= 0.0 {
            return Err(Error::Config(format!(
                "learning rate {learning_rate} must be positive"
            )));
        }
        let mut shapes: Vec<Vec<usize>> = vec![Vec::new(); graph.num_slots()];
        let mut trainable = vec![false; graph.num_slots()];
        graph.for_each_param(&mut |meta, t| {
            shapes[meta.slot] = t.shape().to_vec();
            trainable[meta.slot] = meta.trainable;
        });
        Ok(Self {
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            trainable,
            step: 0,
            learning_rate,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update over every trainable parameter.
    ///
    /// m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2;
    /// theta <- theta - lr * mhat / (sqrt(vhat) + eps)
    pub fn step(&mut self, graph: &mut ModelGraph<T>, grads: &[Tensor<T>]) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(Error::Config(format!(
                "{} gradient slots for optimiser with {}",
                grads.len(),
                self.m.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        let lr = self.learning_rate;
        let (b1, b2) = (T::from_f64(BETA1), T::from_f64(BETA2));
        let (ib1, ib2) = (T::from_f64(1.0 - BETA1), T::from_f64(1.0 - BETA2));

        let m = &mut self.m;
        let v = &mut self.v;
        let trainable = &self.trainable;
        let mut result = Ok(());
        graph.for_each_param_mut(&mut |meta, theta| {
            if !trainable[meta.slot] {
                return;
            }
            let g = &grads[meta.slot];
            if g.shape() != theta.shape() {
                result = Err(Error::ShapeMismatch {
                    expected: format!("{:?}", theta.shape()),
                    actual: format!("{:?}", g.shape()),
                    context: format!("gradient for {}", meta.name),
                });
                return;
            }
            let md = m[meta.slot].data_mut();
            let vd = v[meta.slot].data_mut();
            for ((th, &gi), (mi, vi)) in theta
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(md.iter_mut().zip(vd.iter_mut()))
            {
                *mi = b1 * *mi + ib1 * gi;
                *vi = b2 * *vi + ib2 * gi * gi;
                let mhat = mi.to_f64() / bc1;
                let vhat = vi.to_f64() / bc2;
                let delta = lr * mhat / (vhat.sqrt() + EPSILON);
                *th = *th - T::from_f64(delta);
            }
        });
        result
    }
}
