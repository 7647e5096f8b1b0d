//! Training plumbing shared by both detectors: the 80/20 track split,
//! mini-batch Adam with early stopping, and small statistics helpers.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState, Params, SeededRng};
use crate::stream::Track;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub val_fraction: f64,
    pub adam: AdamConfig,
    /// Field detector refuses corpora with fewer plots.
    pub min_plots: usize,
    /// Timing detector refuses corpora with fewer windows.
    pub min_windows: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 500,
            patience: 20,
            batch_size: 64,
            val_fraction: 0.2,
            adam: AdamConfig::default(),
            min_plots: 500,
            min_windows: 200,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::InvalidConfig("val_fraction must lie in (0, 1)".into()));
        }
        if self.adam.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Tracks partitioned into training and validation sets.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSplit {
    pub tr: Vec<Track>,
    pub val: Vec<Track>,
}

/// Seeded shuffle of whole tracks, `val_fraction` of them (rounded, at
/// least one when there are two or more tracks) going to validation.
pub fn split_tracks(tracks: &[Track], val_fraction: f64, rng: &mut SeededRng) -> DataSplit {
    let mut order: Vec<usize> = (0..tracks.len()).collect();
    order.shuffle(rng);
    let n = tracks.len();
    let mut n_val = (n as f64 * val_fraction).round() as usize;
    if n >= 2 {
        n_val = n_val.clamp(1, n - 1);
    } else {
        n_val = 0;
    }
    let val = order[..n_val].iter().map(|&i| tracks[i].clone()).collect();
    let tr = order[n_val..].iter().map(|&i| tracks[i].clone()).collect();
    DataSplit { tr, val }
}

/// A network trainable on per-example losses.
pub trait Trainable: Params + Clone {
    type Example;
    type Grads: Params;

    fn zero_grads(&self) -> Self::Grads;

    /// Adds the gradient of this example's loss into `grads` and returns the loss.
    fn accumulate(&self, example: &Self::Example, grads: &mut Self::Grads) -> f64;

    fn example_loss(&self, example: &Self::Example) -> f64;

    fn mean_loss(&self, examples: &[Self::Example]) -> f64 {
        examples.iter().map(|e| self.example_loss(e)).sum::<f64>() / examples.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitHistory {
    /// Validation loss before the first update.
    pub initial_val_loss: f64,
    /// Validation loss after each epoch.
    pub val_losses: Vec<f64>,
    pub train_losses: Vec<f64>,
    /// 0 means the untrained weights were never beaten.
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Mini-batch Adam on `train`, keeping the weights with the lowest
/// validation loss and stopping after `patience` epochs without improvement.
pub fn fit<M: Trainable>(
    mut model: M,
    train: &[M::Example],
    val: &[M::Example],
    config: &TrainConfig,
    rng: &mut SeededRng,
) -> Result<(M, FitHistory)> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::InsufficientData(
            "training and validation sets must both be non-empty".into(),
        ));
    }
    let initial = model.mean_loss(val);
    if !initial.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: 0 });
    }
    let mut best = model.clone();
    let mut history = FitHistory {
        initial_val_loss: initial,
        val_losses: Vec::new(),
        train_losses: Vec::new(),
        best_epoch: 0,
        best_val_loss: initial,
    };
    let mut adam = AdamState::for_params(config.adam, &model);
    let mut grads = model.zero_grads();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut stale = 0;
    for epoch in 1..=config.max_epochs {
        order.shuffle(rng);
        let mut train_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            grads.zero();
            for &i in batch {
                train_loss += model.accumulate(&train[i], &mut grads);
            }
            grads.scale(1.0 / batch.len() as f64);
            adam.step_params(&mut model, &grads)?;
        }
        train_loss /= train.len() as f64;
        let val_loss = model.mean_loss(val);
        if !train_loss.is_finite() || !val_loss.is_finite() || !model.all_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        history.train_losses.push(train_loss);
        history.val_losses.push(val_loss);
        if val_loss < history.best_val_loss {
            history.best_val_loss = val_loss;
            history.best_epoch = epoch;
            best = model.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    log::debug!(
        "fit: best val {:.6} at epoch {} of {}",
        history.best_val_loss,
        history.best_epoch,
        history.val_losses.len()
    );
    Ok((best, history))
}

/// Per-column min-max scaling fit on training data. Values outside the
/// fitted range extrapolate linearly; constant columns only shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Option<Self> {
        let mut iter = rows.into_iter();
        let first = iter.next()?;
        let mut min = first.to_vec();
        let mut max = first.to_vec();
        for row in iter {
            for (j, &v) in row.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        Some(Self { min, max })
    }

    pub fn width(&self) -> usize {
        self.min.len()
    }

    #[inline]
    pub fn scale_value(&self, j: usize, v: f64) -> f64 {
        let range = self.max[j] - self.min[j];
        if range > 0.0 {
            (v - self.min[j]) / range
        } else {
            v - self.min[j]
        }
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter().enumerate().map(|(j, &v)| self.scale_value(j, v)).collect()
    }
}

/// Nearest-rank percentile, `q` in (0, 100].
pub fn nearest_rank_percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (q * sorted.len() as f64 / 100.0).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n − 1 denominator).
pub fn sample_std(values: &[f64]) -> f64 {
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::seeded_rng;

    fn track(id: u64) -> Track {
        Track {
            session_id: "S".into(),
            track_id: id,
            plots: Vec::new(),
        }
    }

    #[test]
    fn split_is_disjoint_eighty_twenty() {
        let tracks: Vec<Track> = (0..50).map(track).collect();
        let split = split_tracks(&tracks, 0.2, &mut seeded_rng(1));
        assert_eq!(split.val.len(), 10);
        assert_eq!(split.tr.len(), 40);
        let mut ids: Vec<u64> = split.tr.iter().chain(&split.val).map(|t| t.track_id).collect();
        ids.sort();
        assert_eq!(ids, (0..50).collect::<Vec<_>>());
        let again = split_tracks(&tracks, 0.2, &mut seeded_rng(1));
        assert_eq!(split, again);
    }

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(nearest_rank_percentile(&v, 99.0), Some(99.0));
        assert_eq!(nearest_rank_percentile(&[4.0; 7], 99.0), Some(4.0));
        assert_eq!(nearest_rank_percentile(&[2.5], 99.0), Some(2.5));
        assert_eq!(nearest_rank_percentile(&[], 99.0), None);
    }

    #[test]
    fn scaler_extrapolates_without_clipping() {
        let rows = [vec![0.0, 5.0], vec![10.0, 5.0]];
        let s = MinMaxScaler::fit(rows.iter().map(Vec::as_slice)).unwrap();
        assert_eq!(s.transform(&[5.0, 5.0]), vec![0.5, 0.0]);
        assert_eq!(s.transform(&[30.0, 7.0]), vec![3.0, 2.0]);
    }

    #[test]
    fn sample_std_uses_n_minus_one() {
        assert_eq!(sample_std(&[1.0, 2.0, 3.0]), 1.0);
        assert_eq!(sample_std(&[0.0, 2.0]), 2f64.sqrt());
    }
}
