//! Streaming deployment of both detectors between the radar and its
//! consumers. Each plot is scored by the field detector (plot and track
//! verdicts), then by the timing detector once its track has K earlier
//! plots; every alert is written before the next line is read.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::field::{detect, TrackScoreCollector};
use crate::model_file::ModelFile;
use crate::stream::{plot_from_object, PlotRecord};
use crate::timing::TimingTracker;
use crate::train::{mean, nearest_rank_percentile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AlertKind {
    FieldPlot,
    FieldTrack,
    Timing,
}

/// One alert; `score > threshold` always holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertRecord {
    pub timestamp: u64,
    pub session_id: String,
    pub track_id: u64,
    /// Position of the triggering plot within its track, from 0.
    pub plot_index: usize,
    pub kind: AlertKind,
    pub score: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonitorConfig {
    /// Tracks silent for longer than this (stream milliseconds) are
    /// forgotten; a later plot starts the track afresh. `None` keeps all.
    pub horizon_ms: Option<u64>,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            horizon_ms: Some(600_000),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitorStats {
    pub lines: u64,
    pub plots: u64,
    pub malformed: u64,
    pub field_plot_alerts: u64,
    pub field_track_alerts: u64,
    pub timing_alerts: u64,
    pub evicted: u64,
}

type TrackKey = (String, u64);

pub struct Monitor<'m> {
    model: &'m ModelFile,
    config: MonitorConfig,
    collector: TrackScoreCollector,
    tracker: TimingTracker,
    last_seen: HashMap<TrackKey, u64>,
    clock: u64,
    next_sweep: u64,
    stats: MonitorStats,
}

impl<'m> Monitor<'m> {
    pub fn new(model: &'m ModelFile, config: MonitorConfig) -> Self {
        Self {
            model,
            config,
            collector: TrackScoreCollector::new(),
            tracker: TimingTracker::new(),
            last_seen: HashMap::new(),
            clock: 0,
            next_sweep: 0,
            stats: MonitorStats::default(),
        }
    }

    pub fn stats(&self) -> MonitorStats {
        self.stats
    }

    /// Tracks currently held in memory.
    pub fn tracked(&self) -> usize {
        self.last_seen.len()
    }

    fn evict_idle(&mut self) {
        let Some(horizon) = self.config.horizon_ms else {
            return;
        };
        if self.clock < self.next_sweep {
            return;
        }
        self.next_sweep = self.clock + (horizon / 4).max(1);
        let clock = self.clock;
        let idle: Vec<TrackKey> = self
            .last_seen
            .iter()
            .filter(|(_, &t)| clock.saturating_sub(t) > horizon)
            .map(|(k, _)| k.clone())
            .collect();
        for (s, id) in idle {
            self.collector.remove(&s, id);
            self.tracker.remove(&s, id);
            self.last_seen.remove(&(s, id));
            self.stats.evicted += 1;
        }
    }

    /// Scores one validated plot and returns its alerts in emission order.
    pub fn process(&mut self, plot: &PlotRecord) -> Result<Vec<AlertRecord>> {
        self.clock = self.clock.max(plot.update_time);
        self.evict_idle();
        let field = detect(&self.model.field, plot, &mut self.collector)?;
        let (index, timing) = self.tracker.push(&self.model.timing, plot)?;
        self.last_seen
            .insert((plot.session_id.clone(), plot.track_id), plot.update_time);
        self.stats.plots += 1;

        let th = &self.model.thresholds;
        let alert = |kind, score, threshold| AlertRecord {
            timestamp: plot.update_time,
            session_id: plot.session_id.clone(),
            track_id: plot.track_id,
            plot_index: index,
            kind,
            score,
            threshold,
        };
        let mut out = Vec::new();
        if field.plot_alert {
            out.push(alert(AlertKind::FieldPlot, field.plot_score, th.field_plot));
            self.stats.field_plot_alerts += 1;
        }
        if field.track_alert {
            out.push(alert(AlertKind::FieldTrack, field.track_avg, th.field_track));
            self.stats.field_track_alerts += 1;
        }
        if let Some(v) = timing.filter(|v| v.alert) {
            out.push(alert(AlertKind::Timing, v.squared_error, th.timing));
            self.stats.timing_alerts += 1;
        }
        Ok(out)
    }

    /// Parses and scores one NDJSON line. Lines that are not plots are
    /// logged, counted and skipped; a plot whose feature arity differs from
    /// the model's schema is a schema mismatch and aborts.
    pub fn process_line(&mut self, line: &str) -> Result<Vec<AlertRecord>> {
        if line.trim().is_empty() {
            return Ok(Vec::new());
        }
        self.stats.lines += 1;
        match self.parse(line) {
            Ok(plot) => self.process(&plot),
            Err(e @ Error::SchemaViolation(_)) if self.arity_mismatch(line) => Err(e),
            Err(e) => {
                self.stats.malformed += 1;
                log::warn!("skipping line {}: {e}", self.stats.lines);
                Ok(Vec::new())
            }
        }
    }

    fn parse(&self, line: &str) -> Result<PlotRecord> {
        let value: Value = serde_json::from_str(line).map_err(|e| Error::MalformedLine(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::MalformedLine("expected a JSON object".into()))?;
        plot_from_object(obj, &self.model.schema)
    }

    fn arity_mismatch(&self, line: &str) -> bool {
        let Ok(v) = serde_json::from_str::<Value>(line) else {
            return false;
        };
        let len = |key: &str| v.get(key).and_then(Value::as_array).map(Vec::len);
        let schema = &self.model.schema;
        matches!(len("cat"), Some(n) if n != schema.n_categorical())
            || matches!(len("num"), Some(n) if n != schema.n_numerical())
    }
}

/// Reads plots from `input` until EOF, writing each alert as one NDJSON
/// line and flushing before the next plot is read.
pub fn run_monitor<R: BufRead, W: Write>(
    model: &ModelFile,
    config: MonitorConfig,
    input: R,
    mut output: W,
) -> Result<MonitorStats> {
    let mut monitor = Monitor::new(model, config);
    for line in input.lines() {
        let alerts = monitor.process_line(&line?)?;
        if !alerts.is_empty() {
            for a in &alerts {
                serde_json::to_writer(&mut output, a)?;
                output.write_all(b"\n")?;
            }
            output.flush()?;
        }
    }
    output.flush()?;
    let stats = monitor.stats();
    log::info!(
        "monitor: {} plots, {} malformed, alerts field_plot {} field_track {} timing {}",
        stats.plots,
        stats.malformed,
        stats.field_plot_alerts,
        stats.field_track_alerts,
        stats.timing_alerts
    );
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub plots: usize,
    pub seconds: f64,
    pub mean_latency_us: f64,
    pub p99_latency_us: f64,
    pub plots_per_sec: f64,
    pub alerts: usize,
}

/// Single-threaded scoring throughput over `plots` in the given order.
pub fn bench_monitor<'a>(
    model: &ModelFile,
    plots: impl IntoIterator<Item = &'a PlotRecord>,
) -> Result<BenchReport> {
    let mut monitor = Monitor::new(model, MonitorConfig::default());
    let mut latencies = Vec::new();
    let mut alerts = 0;
    let start = Instant::now();
    for p in plots {
        let t0 = Instant::now();
        alerts += monitor.process(p)?.len();
        latencies.push(t0.elapsed().as_secs_f64() * 1e6);
    }
    let seconds = start.elapsed().as_secs_f64();
    if latencies.is_empty() {
        return Err(Error::InsufficientData("no plots to benchmark".into()));
    }
    Ok(BenchReport {
        plots: latencies.len(),
        seconds,
        mean_latency_us: mean(&latencies),
        p99_latency_us: nearest_rank_percentile(&latencies, 99.0).expect("non-empty"),
        plots_per_sec: latencies.len() as f64 / seconds,
        alerts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{FieldModel, FieldNet};
    use crate::schema::FeatureSchema;
    use crate::timing::{TimingLayout, TimingModel, TimingNet};
    use crate::train::MinMaxScaler;

    /// Untrained weights with thresholds chosen so that every plot raises
    /// both field alerts and every scored window a timing alert.
    fn trigger_happy() -> ModelFile {
        let schema = FeatureSchema::default_radar();
        let field = FieldModel {
            scaler: MinMaxScaler {
                min: vec![0.0; 17],
                max: vec![1.0; 17],
            },
            net: FieldNet::new(&schema.cardinalities(), 17, &[4], 3),
            plot_threshold: Some(0.0),
            track_threshold: Some(0.0),
        };
        let layout = TimingLayout::from_schema(&schema).unwrap();
        let timing = TimingModel {
            net: TimingNet::new(layout.input_dim(), 5, 4),
            layout,
            k: 5,
            scaler: MinMaxScaler {
                min: vec![0.0, 0.0],
                max: vec![1.0, 1.0],
            },
            thr: Some(0.0),
        };
        ModelFile::new(&schema, field, timing, 1).unwrap()
    }

    fn plot(track: u64, t: u64) -> PlotRecord {
        PlotRecord {
            session_id: "R1".into(),
            track_id: track,
            update_time: t,
            cat_values: vec![0; 10],
            num_values: vec![0.5; 17],
        }
    }

    #[test]
    fn alert_order_and_first_k_silence() {
        let model = trigger_happy();
        let mut m = Monitor::new(&model, MonitorConfig::default());
        for j in 0..8u64 {
            let alerts = m.process(&plot(1, 1000 * j)).unwrap();
            let kinds: Vec<AlertKind> = alerts.iter().map(|a| a.kind).collect();
            if j < 5 {
                assert_eq!(kinds, [AlertKind::FieldPlot, AlertKind::FieldTrack]);
            } else {
                assert_eq!(kinds, [AlertKind::FieldPlot, AlertKind::FieldTrack, AlertKind::Timing]);
            }
            assert!(alerts.iter().all(|a| a.plot_index == j as usize && a.score > a.threshold));
        }
        assert_eq!(m.stats().timing_alerts, 3);
    }

    #[test]
    fn idle_tracks_are_evicted() {
        let model = trigger_happy();
        let mut m = Monitor::new(&model, MonitorConfig { horizon_ms: Some(10_000) });
        m.process(&plot(1, 0)).unwrap();
        m.process(&plot(2, 0)).unwrap();
        m.process(&plot(2, 20_000)).unwrap();
        assert_eq!(m.tracked(), 1);
        assert_eq!(m.stats().evicted, 2);
        // track 2 restarted with the plot that triggered the sweep
        let a = m.process(&plot(2, 21_000)).unwrap();
        assert_eq!(a[0].plot_index, 1);
        let mut keep = Monitor::new(&model, MonitorConfig { horizon_ms: None });
        keep.process(&plot(1, 0)).unwrap();
        keep.process(&plot(2, u64::MAX / 2)).unwrap();
        assert_eq!(keep.tracked(), 2);
    }

    #[test]
    fn malformed_lines_are_counted_and_schema_mismatch_aborts() {
        let model = trigger_happy();
        let good = plot(1, 0).to_line();
        let input = format!("{good}\nnot json\n{{\"session\":\"R1\"}}\n\n{good}\n");
        let mut out = Vec::new();
        let stats = run_monitor(&model, MonitorConfig::default(), input.as_bytes(), &mut out).unwrap();
        assert_eq!((stats.lines, stats.plots, stats.malformed), (4, 2, 2));
        let lines: Vec<AlertRecord> = String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 4);

        let mut short = plot(1, 0);
        short.num_values.pop();
        let err = run_monitor(&model, MonitorConfig::default(), short.to_line().as_bytes(), Vec::new());
        assert!(matches!(err, Err(Error::SchemaViolation(_))));
    }

    #[test]
    fn alert_wire_format() {
        let a = AlertRecord {
            timestamp: 5,
            session_id: "R1".into(),
            track_id: 3,
            plot_index: 7,
            kind: AlertKind::FieldTrack,
            score: 2.5,
            threshold: 1.0,
        };
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            r#"{"timestamp":5,"session_id":"R1","track_id":3,"plot_index":7,"kind":"FIELD_TRACK","score":2.5,"threshold":1.0}"#
        );
    }

    #[test]
    fn bench_reports_shape() {
        let model = trigger_happy();
        let plots: Vec<PlotRecord> = (0..50).map(|j| plot(j % 3, 1000 * j)).collect();
        let r = bench_monitor(&model, &plots).unwrap();
        assert_eq!(r.plots, 50);
        assert!(r.plots_per_sec > 0.0 && r.p99_latency_us >= 0.0);
        assert!(bench_monitor(&model, &[]).is_err());
    }
}
