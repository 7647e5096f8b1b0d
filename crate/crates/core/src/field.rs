//! Field manipulation detection: a plot-level embedding autoencoder and a
//! track-level aggregator of its scores.
//!
//! Each plot's categoricals pass through one-dimensional embeddings and are
//! concatenated with the min-max scaled numericals. A sigmoid stacked
//! autoencoder (widths 27-20-15-10-15-20-27 for the default schema) feeds
//! a split head: linear outputs reconstruct the numericals, and one softmax
//! group per categorical predicts its value. The per-plot score is the
//! training loss itself, `MSE(numericals) + Σ SCCE(categoricals)`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::gradcheck::Differentiable;
use crate::nn::loss::{mse_grad, scce_grad, PROB_FLOOR};
use crate::nn::{seeded_rng, Activation, DenseGrads, DenseLayer, EmbeddingGrads, EmbeddingLayer, Params};
use crate::schema::FeatureSchema;
use crate::stream::{PlotRecord, Track};
use crate::train::{fit, mean, nearest_rank_percentile, split_tracks, DataSplit, FitHistory, MinMaxScaler, TrainConfig, Trainable};

/// Inner widths of the stacked autoencoder; the outer layers match the
/// concatenated input width.
pub const AE_INNER_WIDTHS: [usize; 5] = [20, 15, 10, 15, 20];

pub const PLOT_THRESHOLD_PERCENTILE: f64 = 99.0;

/// One training example: raw categorical codes and scaled numericals.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldExample {
    pub cats: Vec<usize>,
    pub nums: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldNet {
    pub cardinalities: Vec<usize>,
    pub n_numerical: usize,
    pub embedding: EmbeddingLayer,
    pub layers: Vec<DenseLayer>,
    pub head: DenseLayer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrads {
    pub embedding: EmbeddingGrads,
    pub layers: Vec<DenseGrads>,
    pub head: DenseGrads,
}

/// Activations of one forward pass; `acts[i]` is the input of layer `i`
/// and the last entry feeds the head.
#[derive(Debug, Clone)]
pub struct FieldPass {
    acts: Vec<Vec<f64>>,
    out: Vec<f64>,
}

impl FieldPass {
    pub fn output(&self) -> &[f64] {
        &self.out
    }
}

impl FieldNet {
    pub fn new(cardinalities: &[usize], n_numerical: usize, inner_widths: &[usize], seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let width = cardinalities.len() + n_numerical;
        let embedding = EmbeddingLayer::new(cardinalities, &mut rng);
        let mut widths = vec![width];
        widths.extend_from_slice(inner_widths);
        widths.push(width);
        let layers = widths
            .windows(2)
            .map(|w| DenseLayer::new(w[0], w[1], Activation::Sigmoid, &mut rng))
            .collect();
        let outputs = n_numerical + cardinalities.iter().sum::<usize>();
        let head = DenseLayer::new(
            width,
            outputs,
            Activation::SoftmaxGroups {
                linear_prefix: n_numerical,
                groups: cardinalities.to_vec(),
            },
            &mut rng,
        );
        Self {
            cardinalities: cardinalities.to_vec(),
            n_numerical,
            embedding,
            layers,
            head,
        }
    }

    /// Neuron counts of the stacked autoencoder, input layer included.
    pub fn ae_widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].inputs()];
        w.extend(self.layers.iter().map(DenseLayer::outputs));
        w
    }

    pub fn input_width(&self) -> usize {
        self.cardinalities.len() + self.n_numerical
    }

    pub fn check_shapes(&self) -> Result<()> {
        let width = self.input_width();
        if self.embedding.tables.len() != self.cardinalities.len()
            || self
                .embedding
                .tables
                .iter()
                .zip(&self.cardinalities)
                .any(|(t, &l)| t.len() != l)
        {
            return Err(Error::ShapeMismatch("embedding tables disagree with cardinalities".into()));
        }
        let mut prev = width;
        for layer in &self.layers {
            layer.check_shapes()?;
            if layer.inputs() != prev {
                return Err(Error::ShapeMismatch("autoencoder layers do not chain".into()));
            }
            prev = layer.outputs();
        }
        self.head.check_shapes()?;
        if prev != width || self.head.inputs() != width {
            return Err(Error::ShapeMismatch("autoencoder must end at the input width".into()));
        }
        if self.head.outputs() != self.n_numerical + self.cardinalities.iter().sum::<usize>() {
            return Err(Error::ShapeMismatch("head arity must be numericals + Σ cardinalities".into()));
        }
        Ok(())
    }

    pub fn forward(&self, ex: &FieldExample) -> FieldPass {
        let n_cat = self.cardinalities.len();
        let mut input = vec![0.0; n_cat + self.n_numerical];
        self.embedding.forward_into(&ex.cats, &mut input[..n_cat]);
        input[n_cat..].copy_from_slice(&ex.nums);
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut x = input;
        for layer in &self.layers {
            let mut y = Vec::with_capacity(layer.outputs());
            layer.forward_into(&x, &mut y);
            acts.push(std::mem::replace(&mut x, y));
        }
        let mut out = Vec::with_capacity(self.head.outputs());
        self.head.forward_into(&x, &mut out);
        acts.push(x);
        FieldPass { acts, out }
    }

    /// `MSE(numericals) + Σ SCCE(categoricals)` for a finished pass.
    pub fn loss(&self, pass: &FieldPass, ex: &FieldExample) -> f64 {
        let n = self.n_numerical;
        let recon: f64 = pass.out[..n]
            .iter()
            .zip(&ex.nums)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n as f64;
        let mut ce = 0.0;
        let mut start = n;
        for (&l, &c) in self.cardinalities.iter().zip(&ex.cats) {
            ce -= pass.out[start + c].max(PROB_FLOOR).ln();
            start += l;
        }
        recon + ce
    }

    /// Categorical probabilities of a pass, one vector per feature.
    pub fn categorical_probs(&self, pass: &FieldPass) -> Vec<Vec<f64>> {
        let mut start = self.n_numerical;
        self.cardinalities
            .iter()
            .map(|&l| {
                let p = pass.out[start..start + l].to_vec();
                start += l;
                p
            })
            .collect()
    }

    pub fn backward(&self, pass: &FieldPass, ex: &FieldExample, grads: &mut FieldGrads) {
        let n = self.n_numerical;
        let mut dy = vec![0.0; pass.out.len()];
        mse_grad(&pass.out[..n], &ex.nums, &mut dy[..n]);
        let mut start = n;
        for (&l, &c) in self.cardinalities.iter().zip(&ex.cats) {
            scce_grad(&pass.out[start..start + l], c, &mut dy[start..start + l]);
            start += l;
        }
        let last = pass.acts.len() - 1;
        let mut dx = self.head.backward(&pass.acts[last], &pass.out, &dy, &mut grads.head);
        for i in (0..self.layers.len()).rev() {
            dx = self.layers[i].backward(&pass.acts[i], &pass.acts[i + 1], &dx, &mut grads.layers[i]);
        }
        let n_cat = self.cardinalities.len();
        self.embedding.backward(&ex.cats, &dx[..n_cat], &mut grads.embedding);
    }
}

impl Params for FieldNet {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut v = self.embedding.tensors();
        for l in &self.layers {
            v.extend(l.tensors());
        }
        v.extend(self.head.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.embedding.tensors_mut();
        for l in &mut self.layers {
            v.extend(l.tensors_mut());
        }
        v.extend(self.head.tensors_mut());
        v
    }
}

impl Params for FieldGrads {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut v = self.embedding.tensors();
        for l in &self.layers {
            v.extend(l.tensors());
        }
        v.extend(self.head.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.embedding.tensors_mut();
        for l in &mut self.layers {
            v.extend(l.tensors_mut());
        }
        v.extend(self.head.tensors_mut());
        v
    }
}

impl Trainable for FieldNet {
    type Example = FieldExample;
    type Grads = FieldGrads;

    fn zero_grads(&self) -> FieldGrads {
        FieldGrads {
            embedding: self.embedding.zero_grads(),
            layers: self.layers.iter().map(DenseLayer::zero_grads).collect(),
            head: self.head.zero_grads(),
        }
    }

    fn accumulate(&self, ex: &FieldExample, grads: &mut FieldGrads) -> f64 {
        let pass = self.forward(ex);
        self.backward(&pass, ex, grads);
        self.loss(&pass, ex)
    }

    fn example_loss(&self, ex: &FieldExample) -> f64 {
        self.loss(&self.forward(ex), ex)
    }
}

impl Differentiable for FieldNet {
    type Sample = Vec<FieldExample>;

    fn loss(&self, batch: &Vec<FieldExample>) -> f64 {
        self.mean_loss(batch)
    }

    fn gradient(&self, batch: &Vec<FieldExample>) -> Vec<Vec<f64>> {
        let mut g = self.zero_grads();
        for ex in batch {
            self.accumulate(ex, &mut g);
        }
        g.scale(1.0 / batch.len() as f64);
        g.flatten()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        Params::tensors_mut(self)
    }
}

/// Trained plot-level autoencoder plus its calibrated thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldModel {
    pub scaler: MinMaxScaler,
    pub net: FieldNet,
    pub plot_threshold: Option<f64>,
    pub track_threshold: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldVerdict {
    pub plot_score: f64,
    pub plot_alert: bool,
    pub track_avg: f64,
    pub track_alert: bool,
}

/// Result of training: the model, the track split it saw and the loss curve.
#[derive(Debug, Clone)]
pub struct FieldTraining {
    pub model: FieldModel,
    pub split: DataSplit,
    pub history: FitHistory,
}

impl FieldModel {
    pub fn is_trained(&self) -> bool {
        self.plot_threshold.is_some() && self.track_threshold.is_some()
    }

    fn check_plot(&self, plot: &PlotRecord) -> Result<()> {
        let cards = &self.net.cardinalities;
        if plot.cat_values.len() != cards.len() || plot.num_values.len() != self.net.n_numerical {
            return Err(Error::SchemaViolation(format!(
                "plot has {}+{} features, model expects {}+{}",
                plot.cat_values.len(),
                plot.num_values.len(),
                cards.len(),
                self.net.n_numerical
            )));
        }
        if let Some((i, v)) = plot
            .cat_values
            .iter()
            .enumerate()
            .find(|&(i, &v)| v >= cards[i])
        {
            return Err(Error::SchemaViolation(format!(
                "categorical {i} = {v} exceeds cardinality {}",
                cards[i]
            )));
        }
        Ok(())
    }

    pub fn example(&self, plot: &PlotRecord) -> FieldExample {
        FieldExample {
            cats: plot.cat_values.clone(),
            nums: self.scaler.transform(&plot.num_values),
        }
    }

    /// Reconstruction loss of the plot against itself; needs only weights.
    pub fn raw_score(&self, plot: &PlotRecord) -> Result<f64> {
        self.check_plot(plot)?;
        let ex = self.example(plot);
        Ok(self.net.example_loss(&ex))
    }
}

/// Anomaly score of one plot under a trained model.
pub fn score_plot(model: &FieldModel, plot: &PlotRecord) -> Result<f64> {
    if !model.is_trained() {
        return Err(Error::UntrainedModel);
    }
    model.raw_score(plot)
}

/// Nearest-rank 99th percentile of validation plot scores.
pub fn calibrate_plot_threshold(val_scores: &[f64]) -> Result<f64> {
    nearest_rank_percentile(val_scores, PLOT_THRESHOLD_PERCENTILE).ok_or(Error::EmptyValidation)
}

/// Maximum over tracks of their average plot score.
pub fn max_track_average(track_averages: &[f64]) -> Result<f64> {
    track_averages
        .iter()
        .copied()
        .reduce(f64::max)
        .ok_or(Error::EmptyValidation)
}

/// Mean plot score of every track.
pub fn track_averages(model: &FieldModel, tracks: &[Track]) -> Result<Vec<f64>> {
    tracks
        .iter()
        .filter(|t| !t.is_empty())
        .map(|t| {
            let scores = t
                .plots
                .iter()
                .map(|p| model.raw_score(p))
                .collect::<Result<Vec<_>>>()?;
            Ok(mean(&scores))
        })
        .collect()
}

pub fn calibrate_track_threshold(model: &FieldModel, val_tracks: &[Track]) -> Result<f64> {
    max_track_average(&track_averages(model, val_tracks)?)
}

/// Architecture knobs; the defaults give the 27-20-15-10-15-20-27 network
/// for the radar schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub inner_widths: Vec<usize>,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            inner_widths: AE_INNER_WIDTHS.to_vec(),
        }
    }
}

/// Trains the autoencoder on benign tracks with an 80/20 track split and
/// calibrates both thresholds on the validation tracks.
pub fn train_field_model(
    tracks: &[Track],
    schema: &FeatureSchema,
    field_config: &FieldConfig,
    config: &TrainConfig,
    seed: u64,
) -> Result<FieldTraining> {
    let n_plots: usize = tracks.iter().map(Track::len).sum();
    if n_plots < config.min_plots.max(2) {
        return Err(Error::InsufficientData(format!(
            "field detector needs at least {} plots, got {n_plots}",
            config.min_plots.max(2)
        )));
    }
    for p in tracks.iter().flat_map(|t| &t.plots) {
        p.validate(schema)?;
    }
    let mut rng = seeded_rng(seed);
    let split = split_tracks(tracks, config.val_fraction, &mut rng);
    let tr_plots: Vec<&PlotRecord> = split.tr.iter().flat_map(|t| &t.plots).collect();
    let val_plots: Vec<&PlotRecord> = split.val.iter().flat_map(|t| &t.plots).collect();
    if tr_plots.is_empty() || val_plots.is_empty() {
        return Err(Error::InsufficientData("need plots on both sides of the split".into()));
    }
    let scaler = MinMaxScaler::fit(tr_plots.iter().map(|p| p.num_values.as_slice()))
        .ok_or_else(|| Error::InsufficientData("no training plots".into()))?;
    let to_examples = |plots: &[&PlotRecord]| -> Vec<FieldExample> {
        plots
            .iter()
            .map(|p| FieldExample {
                cats: p.cat_values.clone(),
                nums: scaler.transform(&p.num_values),
            })
            .collect()
    };
    let tr = to_examples(&tr_plots);
    let val = to_examples(&val_plots);
    let net = FieldNet::new(
        &schema.cardinalities(),
        schema.n_numerical(),
        &field_config.inner_widths,
        rand::Rng::random(&mut rng),
    );
    let (net, history) = fit(net, &tr, &val, config, &mut rng)?;
    let mut model = FieldModel {
        scaler,
        net,
        plot_threshold: None,
        track_threshold: None,
    };
    let val_scores: Vec<f64> = val.iter().map(|e| model.net.example_loss(e)).collect();
    model.plot_threshold = Some(calibrate_plot_threshold(&val_scores)?);
    model.track_threshold = Some(calibrate_track_threshold(&model, &split.val)?);
    log::info!(
        "field model: {} tr / {} val tracks, plot thr {:.4}, track thr {:.4}",
        split.tr.len(),
        split.val.len(),
        model.plot_threshold.unwrap(),
        model.track_threshold.unwrap()
    );
    Ok(FieldTraining {
        model,
        split,
        history,
    })
}

type TrackKey = (String, u64);

/// Running sum and count of plot scores per track.
#[derive(Debug, Clone, Default)]
pub struct TrackScoreCollector {
    tracks: HashMap<TrackKey, (f64, usize)>,
}

impl TrackScoreCollector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a score and returns the track's running average.
    pub fn add(&mut self, session: &str, track_id: u64, score: f64) -> f64 {
        let entry = self
            .tracks
            .entry((session.to_string(), track_id))
            .or_insert((0.0, 0));
        entry.0 += score;
        entry.1 += 1;
        entry.0 / entry.1 as f64
    }

    pub fn track_score(&self, session: &str, track_id: u64) -> Result<f64> {
        self.tracks
            .get(&(session.to_string(), track_id))
            .map(|&(sum, n)| sum / n as f64)
            .ok_or_else(|| Error::UnknownTrack {
                session: session.to_string(),
                track_id,
            })
    }

    pub fn remove(&mut self, session: &str, track_id: u64) {
        self.tracks.remove(&(session.to_string(), track_id));
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }
}

/// Scores a plot, updates its track's running average and applies both
/// thresholds with strict inequality.
pub fn detect(model: &FieldModel, plot: &PlotRecord, collector: &mut TrackScoreCollector) -> Result<FieldVerdict> {
    let (Some(plot_thr), Some(track_thr)) = (model.plot_threshold, model.track_threshold) else {
        return Err(Error::UntrainedModel);
    };
    let plot_score = model.raw_score(plot)?;
    let track_avg = collector.add(&plot.session_id, plot.track_id, plot_score);
    Ok(FieldVerdict {
        plot_score,
        plot_alert: plot_score > plot_thr,
        track_avg,
        track_alert: track_avg > track_thr,
    })
}
