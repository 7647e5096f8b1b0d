//! Timing-based anomaly detection.
//!
//! Each plot becomes `[num1 ‖ one-hot(objectType) ‖ one-hot(signalQuality)
//! ‖ one-hot(trackType) ‖ UpdatingPeriod]` with num1 and the period min-max
//! scaled. An LSTM (five hidden units) reads K consecutive plots of a track
//! and a linear neuron predicts the scaled period of the next plot. The
//! alert threshold is the mean plus sample standard deviation of the
//! squared validation errors.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::gradcheck::Differentiable;
use crate::nn::{seeded_rng, Activation, DenseGrads, DenseLayer, LstmCell, LstmGrads, Params};
use crate::schema::FeatureSchema;
use crate::stream::{periods_from_times, PlotRecord, Track};
use crate::train::{fit, mean, sample_std, split_tracks, DataSplit, FitHistory, MinMaxScaler, TrainConfig, Trainable};

pub const DEFAULT_K: usize = 5;
pub const HIDDEN_UNITS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingConfig {
    /// Window length.
    pub k: usize,
    pub hidden: usize,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            hidden: HIDDEN_UNITS,
        }
    }
}

impl TimingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.hidden == 0 {
            return Err(Error::InvalidConfig("k and hidden must be at least 1".into()));
        }
        Ok(())
    }
}

/// Where the timing inputs live in a plot and how wide the one-hots are.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingLayout {
    pub numerical: usize,
    pub categorical: [usize; 3],
    pub cardinalities: [usize; 3],
}

impl TimingLayout {
    pub fn from_schema(schema: &FeatureSchema) -> Result<Self> {
        let cols = schema.timing_columns()?;
        let cards = schema.cardinalities();
        Ok(Self {
            numerical: cols.numerical,
            categorical: cols.categorical,
            cardinalities: cols.categorical.map(|i| cards[i]),
        })
    }

    /// 1 + Σ cardinalities + 1
    pub fn input_dim(&self) -> usize {
        2 + self.cardinalities.iter().sum::<usize>()
    }

    /// Raw `[num1, period]` pair used to fit the scaler.
    fn raw(&self, plot: &PlotRecord, period: f64) -> [f64; 2] {
        [plot.num_values[self.numerical], period]
    }

    fn check(&self, plot: &PlotRecord) -> Result<()> {
        if plot.num_values.len() <= self.numerical {
            return Err(Error::SchemaViolation("plot lacks the timing numerical".into()));
        }
        for (&i, &l) in self.categorical.iter().zip(&self.cardinalities) {
            match plot.cat_values.get(i) {
                Some(&v) if v < l => {}
                _ => {
                    return Err(Error::SchemaViolation(format!(
                        "timing categorical {i} missing or ≥ {l}"
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn plot_vector(&self, scaler: &MinMaxScaler, plot: &PlotRecord, period: f64) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.input_dim());
        v.push(scaler.scale_value(0, plot.num_values[self.numerical]));
        for (&i, &l) in self.categorical.iter().zip(&self.cardinalities) {
            v.extend((0..l).map(|k| if k == plot.cat_values[i] { 1.0 } else { 0.0 }));
        }
        v.push(scaler.scale_value(1, period));
        v
    }
}

/// K consecutive preprocessed plots of one track and the scaled period of
/// the plot that follows them.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowExample {
    pub inputs: Vec<Vec<f64>>,
    pub target: f64,
    /// Position of the target plot within its track.
    pub target_index: usize,
}

/// Sliding windows (stride 1) over one track: `len − K` examples.
pub fn preprocess_track(
    track: &Track,
    layout: &TimingLayout,
    config: &TimingConfig,
    scaler: &MinMaxScaler,
) -> Result<Vec<WindowExample>> {
    let k = config.k;
    if track.len() < k + 1 {
        return Err(Error::TrackTooShort {
            len: track.len(),
            needed: k + 1,
        });
    }
    for p in &track.plots {
        layout.check(p)?;
    }
    let periods = periods_from_times(&track.times())?;
    let vectors: Vec<Vec<f64>> = track
        .plots
        .iter()
        .zip(&periods)
        .map(|(p, &dt)| layout.plot_vector(scaler, p, dt))
        .collect();
    Ok((k..track.len())
        .map(|n| WindowExample {
            inputs: vectors[n - k..n].to_vec(),
            target: scaler.scale_value(1, periods[n]),
            target_index: n,
        })
        .collect())
}

/// LSTM followed by one linear output neuron.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingNet {
    pub lstm: LstmCell,
    pub out: DenseLayer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingGrads {
    pub lstm: LstmGrads,
    pub out: DenseGrads,
}

impl TimingNet {
    pub fn new(input_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        Self {
            lstm: LstmCell::new(input_dim, hidden, &mut rng),
            out: DenseLayer::new(hidden, 1, Activation::Linear, &mut rng),
        }
    }

    pub fn predict(&self, window: &[Vec<f64>]) -> Result<f64> {
        let (h, _) = self.lstm.forward(window)?;
        Ok(self.out.forward(&h)?[0])
    }
}

impl Params for TimingNet {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut v = self.lstm.tensors();
        v.extend(self.out.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.lstm.tensors_mut();
        v.extend(self.out.tensors_mut());
        v
    }
}

impl Params for TimingGrads {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut v = self.lstm.tensors();
        v.extend(self.out.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.lstm.tensors_mut();
        v.extend(self.out.tensors_mut());
        v
    }
}

impl Trainable for TimingNet {
    type Example = WindowExample;
    type Grads = TimingGrads;

    fn zero_grads(&self) -> TimingGrads {
        TimingGrads {
            lstm: self.lstm.zero_grads(),
            out: self.out.zero_grads(),
        }
    }

    fn accumulate(&self, ex: &WindowExample, grads: &mut TimingGrads) -> f64 {
        let (h, trace) = self.lstm.forward(&ex.inputs).expect("window shape");
        let y = self.out.forward(&h).expect("hidden shape");
        let err = y[0] - ex.target;
        let dh = self.out.backward(&h, &y, &[2.0 * err], &mut grads.out);
        self.lstm.backward(&trace, &dh, &mut grads.lstm).expect("hidden shape");
        err * err
    }

    fn example_loss(&self, ex: &WindowExample) -> f64 {
        let e = self.predict(&ex.inputs).expect("window shape") - ex.target;
        e * e
    }
}

impl Differentiable for TimingNet {
    type Sample = Vec<WindowExample>;

    fn loss(&self, batch: &Vec<WindowExample>) -> f64 {
        self.mean_loss(batch)
    }

    fn gradient(&self, batch: &Vec<WindowExample>) -> Vec<Vec<f64>> {
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

/// Trained regressor, its scaler state, K and the alert threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingModel {
    pub layout: TimingLayout,
    pub k: usize,
    /// Columns: [num1, UpdatingPeriod].
    pub scaler: MinMaxScaler,
    pub net: TimingNet,
    pub thr: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingVerdict {
    /// Predicted period, scaled.
    pub predicted: f64,
    /// Observed period, scaled.
    pub actual: f64,
    pub squared_error: f64,
    pub alert: bool,
}

#[derive(Debug, Clone)]
pub struct TimingTraining {
    pub model: TimingModel,
    pub split: DataSplit,
    pub history: FitHistory,
    /// Squared errors on the validation windows used for `thr`.
    pub val_errors: Vec<f64>,
}

impl TimingModel {
    pub fn is_trained(&self) -> bool {
        self.thr.is_some_and(f64::is_finite)
    }

    pub fn config(&self) -> TimingConfig {
        TimingConfig {
            k: self.k,
            hidden: self.net.lstm.hidden,
        }
    }

    pub fn windows(&self, track: &Track) -> Result<Vec<WindowExample>> {
        preprocess_track(track, &self.layout, &self.config(), &self.scaler)
    }

    pub fn squared_error(&self, ex: &WindowExample) -> Result<f64> {
        let e = self.net.predict(&ex.inputs)? - ex.target;
        Ok(e * e)
    }
}

/// Sample mean plus sample standard deviation (n − 1) of the errors.
pub fn calibrate_thr(val_errors: &[f64]) -> Result<f64> {
    if val_errors.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "threshold needs at least two validation errors, got {}",
            val_errors.len()
        )));
    }
    Ok(mean(val_errors) + sample_std(val_errors))
}

/// Scores one window against the observed raw period of the next plot.
pub fn score_window(model: &TimingModel, window: &[Vec<f64>], actual_next_period: f64) -> Result<TimingVerdict> {
    let thr = model.thr.ok_or(Error::UntrainedModel)?;
    if window.len() != model.k {
        return Err(Error::ShapeMismatch(format!(
            "window has {} plots, model uses K = {}",
            window.len(),
            model.k
        )));
    }
    let predicted = model.net.predict(window)?;
    let actual = model.scaler.scale_value(1, actual_next_period);
    let squared_error = (predicted - actual) * (predicted - actual);
    Ok(TimingVerdict {
        predicted,
        actual,
        squared_error,
        alert: squared_error > thr,
    })
}

/// Trains on benign tracks (80/20 split); tracks shorter than K + 1 are
/// skipped.
pub fn train_timing_model(
    tracks: &[Track],
    schema: &FeatureSchema,
    timing: &TimingConfig,
    config: &TrainConfig,
    seed: u64,
) -> Result<TimingTraining> {
    timing.validate()?;
    let layout = TimingLayout::from_schema(schema)?;
    let k = timing.k;
    let n_windows: usize = tracks.iter().map(|t| t.len().saturating_sub(k)).sum();
    if n_windows < config.min_windows.max(2) {
        return Err(Error::InsufficientData(format!(
            "timing detector needs at least {} windows, got {n_windows}",
            config.min_windows.max(2)
        )));
    }
    let mut rng = seeded_rng(seed);
    let split = split_tracks(tracks, config.val_fraction, &mut rng);
    let eligible = |ts: &[Track]| -> Vec<Track> { ts.iter().filter(|t| t.len() > k).cloned().collect() };
    let tr_tracks = eligible(&split.tr);
    let val_tracks = eligible(&split.val);

    let mut raw_rows = Vec::new();
    for t in &tr_tracks {
        for p in &t.plots {
            layout.check(p)?;
        }
        let periods = periods_from_times(&t.times())?;
        raw_rows.extend(t.plots.iter().zip(&periods).map(|(p, &dt)| layout.raw(p, dt)));
    }
    let scaler = MinMaxScaler::fit(raw_rows.iter().map(|r| r.as_slice()))
        .ok_or_else(|| Error::InsufficientData("no training windows".into()))?;

    let windows = |ts: &[Track]| -> Result<Vec<WindowExample>> {
        let mut out = Vec::new();
        for t in ts {
            out.extend(preprocess_track(t, &layout, timing, &scaler)?);
        }
        Ok(out)
    };
    let tr = windows(&tr_tracks)?;
    let val = windows(&val_tracks)?;
    if tr.is_empty() || val.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "split left {} training and {} validation windows",
            tr.len(),
            val.len()
        )));
    }
    let net = TimingNet::new(layout.input_dim(), timing.hidden, rand::Rng::random(&mut rng));
    let (net, history) = fit(net, &tr, &val, config, &mut rng)?;
    let val_errors: Vec<f64> = val.iter().map(|e| net.example_loss(e)).collect();
    let thr = calibrate_thr(&val_errors)?;
    log::info!(
        "timing model: {} tr / {} val windows, thr {:.6}",
        tr.len(),
        val.len(),
        thr
    );
    Ok(TimingTraining {
        model: TimingModel {
            layout,
            k,
            scaler,
            net,
            thr: Some(thr),
        },
        split,
        history,
        val_errors,
    })
}

#[derive(Debug, Clone)]
struct TrackHistory {
    /// Period assigned to the first plot (copy of the second plot's).
    first_period: Option<f64>,
    /// Last K + 1 plots: (index, time, plot).
    recent: VecDeque<(usize, u64, PlotRecord)>,
    seen: usize,
    last_time: u64,
}

/// Per-track sliding state for streaming timing verdicts. Produces the same
/// windows as [`preprocess_track`] on the completed track.
#[derive(Debug, Clone, Default)]
pub struct TimingTracker {
    tracks: HashMap<(String, u64), TrackHistory>,
}

impl TimingTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    /// Feeds the next plot of its track. Returns the plot's index within
    /// the track and, once K earlier plots exist, its verdict.
    pub fn push(&mut self, model: &TimingModel, plot: &PlotRecord) -> Result<(usize, Option<TimingVerdict>)> {
        model.layout.check(plot)?;
        let k = model.k;
        let h = self
            .tracks
            .entry((plot.session_id.clone(), plot.track_id))
            .or_insert_with(|| TrackHistory {
                first_period: None,
                recent: VecDeque::with_capacity(k + 2),
                seen: 0,
                last_time: plot.update_time,
            });
        let n = h.seen;
        if n == 1 {
            h.first_period = Some(plot.update_time as f64 - h.last_time as f64);
        }
        let mut verdict = None;
        if n >= k {
            let window: Vec<Vec<f64>> = h
                .recent
                .iter()
                .enumerate()
                .skip(h.recent.len() - k)
                .map(|(pos, (idx, t, p))| {
                    let period = if *idx == 0 {
                        h.first_period.expect("second plot seen")
                    } else {
                        *t as f64 - h.recent[pos - 1].1 as f64
                    };
                    model.layout.plot_vector(&model.scaler, p, period)
                })
                .collect();
            let actual = plot.update_time as f64 - h.last_time as f64;
            verdict = Some(score_window(model, &window, actual)?);
        }
        h.recent.push_back((n, plot.update_time, plot.clone()));
        while h.recent.len() > k + 1 {
            h.recent.pop_front();
        }
        h.seen += 1;
        h.last_time = plot.update_time;
        Ok((n, verdict))
    }

    pub fn last_time(&self, session: &str, track_id: u64) -> Option<u64> {
        self.tracks.get(&(session.to_string(), track_id)).map(|h| h.last_time)
    }

    pub fn remove(&mut self, session: &str, track_id: u64) {
        self.tracks.remove(&(session.to_string(), track_id));
    }
}
