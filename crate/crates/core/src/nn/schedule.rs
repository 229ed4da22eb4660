//! Learning-rate decay and early stopping driven by validation loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TrainingSchedule {
    pub base_lr: f64,
    pub lr_decay_factor: f64,
    /// Epochs without a new best before the learning rate is decayed.
    pub lr_patience: u32,
    /// Stop when no new best for more than this many epochs.
    pub early_stop_patience: u32,
    pub max_epochs: u32,
    pub batch_size: usize,
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        Self {
            base_lr: 1e-3,
            lr_decay_factor: 0.2,
            lr_patience: 2,
            early_stop_patience: 5,
            max_epochs: 50,
            batch_size: 128,
        }
    }
}

impl TrainingSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.base_lr <= 0.0
            || self.lr_decay_factor <= 0.0
            || self.lr_patience == 0
            || self.early_stop_patience == 0
            || self.max_epochs == 0
            || self.batch_size == 0
        {
            return Err(Error::Config(format!("invalid schedule {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleDecision {
    Continue { learning_rate: f64 },
    /// Training ends; best-validation weights should be restored.
    Stop { restore_best: bool },
}

/// Decide what to do after the epoch whose validation loss is last in
/// `val_losses`. Improvement means a strictly lower loss than any before it.
pub fn schedule_step(schedule: &TrainingSchedule, val_losses: &[f64]) -> Result<ScheduleDecision> {
    if val_losses.is_empty() {
        return Err(Error::InvalidInput(
            "schedule_step needs at least one completed epoch".into(),
        ));
    }
    schedule.validate()?;
    let mut best = f64::INFINITY;
    let mut lr = schedule.base_lr;
    let mut wait = 0u32;
    let mut since_best = 0u32;
    for &loss in val_losses {
        if loss < best {
            best = loss;
            wait = 0;
            since_best = 0;
        } else {
            wait += 1;
            since_best += 1;
            if wait >= schedule.lr_patience {
                lr = (lr * schedule.lr_decay_factor).max(LR_FLOOR);
                wait = 0;
            }
        }
    }
    if since_best > schedule.early_stop_patience || val_losses.len() >= schedule.max_epochs as usize
    {
        Ok(ScheduleDecision::Stop { restore_best: true })
    } else {
        Ok(ScheduleDecision::Continue { learning_rate: lr })
    }
}

/// Index of the epoch with the best (first-reached lowest) validation loss.
pub fn best_epoch(val_losses: &[f64]) -> usize {
    let mut best = f64::INFINITY;
    let mut idx = 0;
    for (i, &l) in val_losses.iter().enumerate() {
        if l < best {
            best = l;
            idx = i;
        }
    }
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monotone_improvement_keeps_lr() {
        let s = TrainingSchedule::default();
        assert_eq!(
            schedule_step(&s, &[1.0, 0.9, 0.8]).unwrap(),
            ScheduleDecision::Continue { learning_rate: 1e-3 }
        );
    }

    #[test]
    fn two_flat_epochs_decay_lr() {
        let s = TrainingSchedule::default();
        match schedule_step(&s, &[1.0, 1.1, 1.2]).unwrap() {
            ScheduleDecision::Continue { learning_rate } => {
                assert!((learning_rate - 2e-4).abs() < 1e-12)
            }
            d => panic!("unexpected {d:?}"),
        }
    }

    #[test]
    fn six_non_improving_epochs_stop() {
        let s = TrainingSchedule::default();
        let mut losses = vec![1.0];
        for _ in 0..5 {
            losses.push(1.0);
            assert!(matches!(
                schedule_step(&s, &losses).unwrap(),
                ScheduleDecision::Continue { .. }
            ));
        }
        losses.push(1.0); // 6th non-improving epoch
        assert_eq!(
            schedule_step(&s, &losses).unwrap(),
            ScheduleDecision::Stop { restore_best: true }
        );
    }

    #[test]
    fn max_epochs_stops() {
        let s = TrainingSchedule {
            max_epochs: 4,
            ..Default::default()
        };
        let losses = vec![4.0, 3.0, 2.0, 1.0];
        assert_eq!(
            schedule_step(&s, &losses).unwrap(),
            ScheduleDecision::Stop { restore_best: true }
        );
    }

    #[test]
    fn lr_never_below_floor() {
        let s = TrainingSchedule::default();
        let losses: Vec<f64> = std::iter::once(1.0).chain(vec![2.0; 5]).collect();
        // plateau of 5: decays at 2 and 4 -> 1e-3 * 0.04
        match schedule_step(&s, &losses).unwrap() {
            ScheduleDecision::Continue { learning_rate } => {
                assert!((learning_rate - 4e-5).abs() < 1e-12)
            }
            d => panic!("unexpected {d:?}"),
        }
        let many: Vec<f64> = std::iter::once(1.0).chain(vec![2.0; 4]).collect();
        let tight = TrainingSchedule {
            lr_decay_factor: 1e-4,
            ..s
        };
        match schedule_step(&tight, &many).unwrap() {
            ScheduleDecision::Continue { learning_rate } => assert_eq!(learning_rate, LR_FLOOR),
            d => panic!("unexpected {d:?}"),
        }
    }

    #[test]
    fn best_epoch_is_first_minimum() {
        assert_eq!(best_epoch(&[3.0, 1.0, 1.0, 2.0]), 1);
        assert_eq!(best_epoch(&[5.0]), 0);
    }
}
