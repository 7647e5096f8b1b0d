//! One experiment = (setup, examined session, attack): train the matching
//! detector on the train split, forge the attack on the test split, score.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attack::{drop_plots, manipulate_categorical, LabeledTestSet, DEFAULT_DROP_C};
use crate::error::{Error, Result};
use crate::eval::metrics::{curve_report, rate_at_threshold, CurveReport, ThresholdRates};
use crate::eval::split::{make_split, EvalSetup, EvalSplit, SetupKind};
use crate::field::{train_field_model, FieldConfig, FieldModel};
use crate::model_file::ModelFile;
use crate::schema::FeatureSchema;
use crate::stream::SessionStore;
use crate::timing::{train_timing_model, TimingConfig, TimingModel, DEFAULT_K};
use crate::train::{mean, TrainConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackSpec {
    Manipulate { feature: String },
    Drop { c: usize, k: usize },
}

impl AttackSpec {
    pub fn drop_default() -> Self {
        AttackSpec::Drop {
            c: DEFAULT_DROP_C,
            k: DEFAULT_K,
        }
    }

    pub fn detector(&self) -> Detector {
        match self {
            AttackSpec::Manipulate { .. } => Detector::Field,
            AttackSpec::Drop { .. } => Detector::Timing,
        }
    }

    pub fn forge(&self, test: &SessionStore, schema: &FeatureSchema, seed: u64) -> Result<LabeledTestSet> {
        match self {
            AttackSpec::Manipulate { feature } => manipulate_categorical(test, schema, feature, seed),
            AttackSpec::Drop { c, k } => drop_plots(test, *c, *k, seed),
        }
    }
}

impl fmt::Display for AttackSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttackSpec::Manipulate { feature } => write!(f, "manipulate:{feature}"),
            AttackSpec::Drop { .. } => f.write_str("drop"),
        }
    }
}

impl FromStr for AttackSpec {
    type Err = Error;

    /// `manipulate:<feature>` or `drop` (c = 10, K = 5).
    fn from_str(s: &str) -> Result<Self> {
        if s == "drop" {
            return Ok(Self::drop_default());
        }
        match s.strip_prefix("manipulate:") {
            Some(f) if !f.is_empty() => Ok(AttackSpec::Manipulate { feature: f.into() }),
            _ => Err(Error::InvalidConfig(format!(
                "unknown attack `{s}` (expected manipulate:<feature> or drop)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detector {
    Field,
    Timing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub field: FieldConfig,
    pub timing: TimingConfig,
    /// Detectors train with this seed, attacks use `seed + 1`.
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            field: FieldConfig::default(),
            timing: TimingConfig::default(),
            seed: 42,
        }
    }
}

impl ExperimentConfig {
    pub fn attack_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }
}

#[derive(Debug, Clone)]
pub enum TrainedDetector {
    Field(FieldModel),
    Timing(TimingModel),
}

/// Trains `detector` on the tracks wholly inside the train split.
pub fn train_detector(
    split: &EvalSplit,
    schema: &FeatureSchema,
    detector: Detector,
    config: &ExperimentConfig,
) -> Result<TrainedDetector> {
    let tracks = split.complete_train_tracks();
    Ok(match detector {
        Detector::Field => TrainedDetector::Field(
            train_field_model(&tracks, schema, &config.field, &config.train, config.seed)?.model,
        ),
        Detector::Timing => TrainedDetector::Timing(
            train_timing_model(&tracks, schema, &config.timing, &config.train, config.seed)?.model,
        ),
    })
}

/// Per-track mean plot score, label 1 for manipulated tracks.
pub fn score_tracks(model: &FieldModel, set: &LabeledTestSet) -> Result<Vec<(f64, u8)>> {
    set.tracks
        .iter()
        .filter(|t| !t.is_empty())
        .map(|t| {
            let s = t.plots.iter().map(|p| model.raw_score(p)).collect::<Result<Vec<_>>>()?;
            Ok((mean(&s), u8::from(t.is_malicious())))
        })
        .collect()
}

/// Squared prediction error of every plot with K predecessors in its track,
/// carrying that plot's label. The first K plots of a track are unscored.
pub fn score_windows(model: &TimingModel, set: &LabeledTestSet) -> Result<Vec<(f64, u8)>> {
    let mut out = Vec::new();
    for t in set.tracks.iter().filter(|t| t.len() > model.k) {
        for w in model.windows(&t.track())? {
            out.push((model.squared_error(&w)?, t.labels[w.target_index]));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub setup: SetupKind,
    pub session: String,
    pub attack: String,
    pub detector: Detector,
    /// "track" for the field detector, "plot" for the timing detector.
    pub level: String,
    pub train_seed: u64,
    pub attack_seed: u64,
    pub train_plots: usize,
    pub test_plots: usize,
    pub positives: usize,
    pub negatives: usize,
    pub balanced: bool,
    pub threshold: f64,
    pub at_threshold: ThresholdRates,
    pub curve: CurveReport,
}

/// Detector, level, threshold and `(score, label)` pairs.
type Scored = (Detector, &'static str, f64, Vec<(f64, u8)>);

fn score_set(trained: &TrainedDetector, set: &LabeledTestSet) -> Result<Scored> {
    Ok(match trained {
        TrainedDetector::Field(m) => (
            Detector::Field,
            "track",
            m.track_threshold.ok_or(Error::UntrainedModel)?,
            score_tracks(m, set)?,
        ),
        TrainedDetector::Timing(m) => (
            Detector::Timing,
            "plot",
            m.thr.ok_or(Error::UntrainedModel)?,
            score_windows(m, set)?,
        ),
    })
}

/// Scores an already trained detector against the attacked test split.
pub fn evaluate(
    trained: &TrainedDetector,
    split: &EvalSplit,
    schema: &FeatureSchema,
    attack: &AttackSpec,
    setup: &EvalSetup,
    config: &ExperimentConfig,
) -> Result<ExperimentReport> {
    let set = attack.forge(&split.test, schema, config.attack_seed())?;
    let (detector, level, threshold, scores) = score_set(trained, &set)?;
    if detector != attack.detector() {
        return Err(Error::InvalidConfig(format!("{attack} is not scored by the {detector:?} detector")));
    }
    let positives = scores.iter().filter(|s| s.1 == 1).count();
    Ok(ExperimentReport {
        setup: setup.kind,
        session: setup.session.clone(),
        attack: attack.to_string(),
        detector,
        level: level.into(),
        train_seed: config.seed,
        attack_seed: config.attack_seed(),
        train_plots: split.train.n_plots(),
        test_plots: set.n_plots(),
        positives,
        negatives: scores.len() - positives,
        balanced: set.n_positive() * 2 == set.n_plots(),
        threshold,
        at_threshold: rate_at_threshold(&scores, threshold),
        curve: curve_report(&scores),
    })
}

/// Metrics of a persisted model against a stored labeled test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSetReport {
    pub attack: String,
    pub detector: Detector,
    pub level: String,
    pub test_plots: usize,
    pub positives: usize,
    pub negatives: usize,
    pub threshold: f64,
    pub at_threshold: ThresholdRates,
    pub curve: CurveReport,
}

pub fn evaluate_test_set(model: &ModelFile, set: &LabeledTestSet) -> Result<TestSetReport> {
    let attack: AttackSpec = set.provenance.tag().parse()?;
    let trained = match attack.detector() {
        Detector::Field => TrainedDetector::Field(model.field.clone()),
        Detector::Timing => TrainedDetector::Timing(model.timing.clone()),
    };
    let (detector, level, threshold, scores) = score_set(&trained, set)?;
    let positives = scores.iter().filter(|s| s.1 == 1).count();
    Ok(TestSetReport {
        attack: attack.to_string(),
        detector,
        level: level.into(),
        test_plots: set.n_plots(),
        positives,
        negatives: scores.len() - positives,
        threshold,
        at_threshold: rate_at_threshold(&scores, threshold),
        curve: curve_report(&scores),
    })
}

pub fn run_experiment(
    corpus: &SessionStore,
    schema: &FeatureSchema,
    attack: &AttackSpec,
    setup: &EvalSetup,
    config: &ExperimentConfig,
) -> Result<ExperimentReport> {
    let split = make_split(corpus, setup)?;
    let trained = train_detector(&split, schema, attack.detector(), config)?;
    evaluate(&trained, &split, schema, attack, setup, config)
}
