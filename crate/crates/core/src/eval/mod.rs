//! Evaluation protocols, metrics and the per-session battery.

pub mod experiment;
pub mod metrics;
pub mod split;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use experiment::{
    evaluate, evaluate_test_set, run_experiment, score_tracks, score_windows, train_detector, AttackSpec, Detector, ExperimentConfig,
    ExperimentReport, TestSetReport, TrainedDetector,
};
pub use metrics::{average_precision, curve, rate_at_threshold, roc_auc, CurvePoint, CurveReport, ThresholdRates};
pub use split::{make_split, EvalSetup, EvalSplit, SetupKind};

use crate::error::{Error, Result};
use crate::schema::FeatureSchema;
use crate::stream::SessionStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryConfig {
    pub setups: Vec<SetupKind>,
    pub attacks: Vec<AttackSpec>,
    /// Sessions to examine; every session when empty.
    #[serde(default)]
    pub sessions: Vec<String>,
    #[serde(default)]
    pub experiment: ExperimentConfig,
}

impl BatteryConfig {
    pub fn new(setups: Vec<SetupKind>, attacks: Vec<AttackSpec>, seed: u64) -> Self {
        Self {
            setups,
            attacks,
            sessions: Vec::new(),
            experiment: ExperimentConfig {
                seed,
                ..ExperimentConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedExperiment {
    pub setup: SetupKind,
    pub session: String,
    pub attack: String,
    pub reason: String,
}

/// Averages over the experiments of one (setup, attack) pair; metrics that
/// are undefined for an experiment (one class only) are left out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub setup: SetupKind,
    pub attack: String,
    pub experiments: usize,
    pub avg_auc: Option<f64>,
    pub avg_ap: Option<f64>,
    pub avg_tpr: Option<f64>,
    pub avg_fpr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryReport {
    pub config: BatteryConfig,
    pub sessions: Vec<String>,
    pub experiments: Vec<ExperimentReport>,
    pub skipped: Vec<SkippedExperiment>,
    pub summary: Vec<SummaryRow>,
}

fn avg(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn summarize(config: &BatteryConfig, experiments: &[ExperimentReport]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for &setup in &config.setups {
        for attack in &config.attacks {
            let name = attack.to_string();
            let group: Vec<&ExperimentReport> = experiments
                .iter()
                .filter(|e| e.setup == setup && e.attack == name)
                .collect();
            let r = |e: &&ExperimentReport| e.at_threshold;
            rows.push(SummaryRow {
                setup,
                attack: name,
                experiments: group.len(),
                avg_auc: avg(group.iter().map(|e| e.curve.auc)),
                avg_ap: avg(group.iter().map(|e| e.curve.ap)),
                avg_tpr: avg(group.iter().map(r).map(|t| (!t.no_positives).then_some(t.tpr))),
                avg_fpr: avg(group.iter().map(r).map(|t| (!t.no_negatives).then_some(t.fpr))),
            });
        }
    }
    rows
}

type JobOutcome = (Vec<ExperimentReport>, Vec<SkippedExperiment>);

/// All attacks for one (setup, session); each detector trains once.
fn run_job(
    corpus: &SessionStore,
    schema: &FeatureSchema,
    config: &BatteryConfig,
    setup: &EvalSetup,
) -> Result<JobOutcome> {
    let mut reports = Vec::new();
    let mut skipped = Vec::new();
    let skip_all = |reason: &str, which: Option<Detector>, skipped: &mut Vec<SkippedExperiment>| {
        for a in config.attacks.iter().filter(|a| which.is_none_or(|d| a.detector() == d)) {
            skipped.push(SkippedExperiment {
                setup: setup.kind,
                session: setup.session.clone(),
                attack: a.to_string(),
                reason: reason.to_string(),
            });
        }
    };
    let split = match make_split(corpus, setup) {
        Ok(s) => s,
        Err(e @ Error::SingleSession) => {
            skip_all(&e.to_string(), None, &mut skipped);
            return Ok((reports, skipped));
        }
        Err(e) => return Err(e),
    };
    let mut detectors: Vec<Detector> = config.attacks.iter().map(AttackSpec::detector).collect();
    detectors.sort();
    detectors.dedup();
    for d in detectors {
        let trained = match train_detector(&split, schema, d, &config.experiment) {
            Ok(t) => t,
            Err(e @ Error::InsufficientData(_)) => {
                log::warn!("{} {}: {d:?} detector not trained: {e}", setup.kind, setup.session);
                skip_all(&e.to_string(), Some(d), &mut skipped);
                continue;
            }
            Err(e) => return Err(e),
        };
        for a in config.attacks.iter().filter(|a| a.detector() == d) {
            let report = evaluate(&trained, &split, schema, a, setup, &config.experiment)?;
            log::info!(
                "{} {} {}: auc {:?} tpr {:.3} fpr {:.3}",
                setup.kind,
                setup.session,
                report.attack,
                report.curve.auc,
                report.at_threshold.tpr,
                report.at_threshold.fpr
            );
            reports.push(report);
        }
    }
    Ok((reports, skipped))
}

/// Every (setup, session, attack) combination. Jobs run on separate threads
/// but each is single-threaded and results are collected in a fixed order,
/// so the report is a pure function of the inputs.
pub fn run_battery(corpus: &SessionStore, schema: &FeatureSchema, config: &BatteryConfig) -> Result<BatteryReport> {
    let sessions = if config.sessions.is_empty() {
        corpus.session_ids()
    } else {
        config.sessions.clone()
    };
    for s in &sessions {
        if corpus.session(s).is_none() {
            return Err(Error::UnknownSession(s.clone()));
        }
    }
    let setups: Vec<EvalSetup> = config
        .setups
        .iter()
        .flat_map(|&k| sessions.iter().map(move |s| EvalSetup::new(k, s.clone())))
        .collect();
    let outcomes: Vec<Result<JobOutcome>> = std::thread::scope(|scope| {
        let handles: Vec<_> = setups
            .iter()
            .map(|setup| scope.spawn(move || run_job(corpus, schema, config, setup)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("experiment thread panicked")).collect()
    });
    let mut experiments = Vec::new();
    let mut skipped = Vec::new();
    for o in outcomes {
        let (r, s) = o?;
        experiments.extend(r);
        skipped.extend(s);
    }
    Ok(BatteryReport {
        summary: summarize(config, &experiments),
        config: config.clone(),
        sessions,
        experiments,
        skipped,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Writes report.json, roc.csv, prc.csv and summary.csv into `dir`.
pub fn write_battery(report: &BatteryReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    fs::write(dir.join("report.json"), json)?;

    let mut roc = csv::Writer::from_path(dir.join("roc.csv")).map_err(csv_err)?;
    let mut prc = csv::Writer::from_path(dir.join("prc.csv")).map_err(csv_err)?;
    roc.write_record(["setup", "session", "attack", "threshold", "fpr", "tpr"]).map_err(csv_err)?;
    prc.write_record(["setup", "session", "attack", "threshold", "recall", "precision"])
        .map_err(csv_err)?;
    for e in &report.experiments {
        let head = [e.setup.to_string(), e.session.clone(), e.attack.clone()];
        for p in &e.curve.points {
            let row = |a: f64, b: f64| {
                let mut r = head.to_vec();
                r.extend([p.threshold.to_string(), a.to_string(), b.to_string()]);
                r
            };
            roc.write_record(row(p.fpr, p.tpr)).map_err(csv_err)?;
            prc.write_record(row(p.recall, p.precision)).map_err(csv_err)?;
        }
    }
    roc.flush()?;
    prc.flush()?;

    let mut sum = csv::Writer::from_path(dir.join("summary.csv")).map_err(csv_err)?;
    sum.write_record(["setup", "attack", "experiments", "avg_auc", "avg_ap", "avg_tpr", "avg_fpr"])
        .map_err(csv_err)?;
    for r in &report.summary {
        sum.write_record([
            r.setup.to_string(),
            r.attack.clone(),
            r.experiments.to_string(),
            fmt_opt(r.avg_auc),
            fmt_opt(r.avg_ap),
            fmt_opt(r.avg_tpr),
            fmt_opt(r.avg_fpr),
        ])
        .map_err(csv_err)?;
    }
    sum.flush()?;
    Ok(())
}
