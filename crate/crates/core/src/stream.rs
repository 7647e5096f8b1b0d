//! Plot/Track data model, the NDJSON wire format and track assembly.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::schema::FeatureSchema;

/// One detection message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRecord {
    #[serde(rename = "session")]
    pub session_id: String,
    pub track_id: u64,
    #[serde(rename = "t")]
    pub update_time: u64,
    #[serde(rename = "cat")]
    pub cat_values: Vec<usize>,
    #[serde(rename = "num")]
    pub num_values: Vec<f64>,
}

impl PlotRecord {
    pub fn validate(&self, schema: &FeatureSchema) -> Result<()> {
        if self.cat_values.len() != schema.n_categorical() {
            return Err(Error::SchemaViolation(format!(
                "expected {} categorical values, got {}",
                schema.n_categorical(),
                self.cat_values.len()
            )));
        }
        if self.num_values.len() != schema.n_numerical() {
            return Err(Error::SchemaViolation(format!(
                "expected {} numerical values, got {}",
                schema.n_numerical(),
                self.num_values.len()
            )));
        }
        for (value, feature) in self.cat_values.iter().zip(&schema.categorical) {
            if *value >= feature.cardinality {
                return Err(Error::SchemaViolation(format!(
                    "`{}` = {} exceeds cardinality {}",
                    feature.name, value, feature.cardinality
                )));
            }
        }
        if let Some(i) = self.num_values.iter().position(|v| !v.is_finite()) {
            return Err(Error::SchemaViolation(format!(
                "`{}` is not finite",
                schema.numerical[i]
            )));
        }
        Ok(())
    }

    pub fn key(&self) -> (&str, u64) {
        (&self.session_id, self.track_id)
    }

    /// Serializes to one NDJSON line (no trailing newline).
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("plot serializes")
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("plot serializes")
    }
}

fn field<'a>(obj: &'a serde_json::Map<String, Value>, key: &str) -> Result<&'a Value> {
    obj.get(key)
        .ok_or_else(|| Error::SchemaViolation(format!("missing field `{key}`")))
}

fn as_index(v: &Value, what: &str) -> Result<u64> {
    match v {
        Value::Number(n) => {
            if let Some(u) = n.as_u64() {
                Ok(u)
            } else {
                Err(Error::SchemaViolation(format!(
                    "`{what}` must be a non-negative integer, got {n}"
                )))
            }
        }
        other => Err(Error::SchemaViolation(format!(
            "`{what}` must be a non-negative integer, got {other}"
        ))),
    }
}

/// Parses one NDJSON plot line and validates it against `schema`.
/// Unknown keys are ignored, so labeled test-set lines parse too.
pub fn parse_plot_line(line: &str, schema: &FeatureSchema) -> Result<PlotRecord> {
    let value: Value =
        serde_json::from_str(line).map_err(|e| Error::MalformedLine(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::MalformedLine("expected a JSON object".into()))?;
    plot_from_object(obj, schema)
}

pub(crate) fn plot_from_object(
    obj: &serde_json::Map<String, Value>,
    schema: &FeatureSchema,
) -> Result<PlotRecord> {
    let session_id = match field(obj, "session")? {
        Value::String(s) => s.clone(),
        other => {
            return Err(Error::SchemaViolation(format!(
                "`session` must be a string, got {other}"
            )))
        }
    };
    let track_id = as_index(field(obj, "track_id")?, "track_id")?;
    let update_time = as_index(field(obj, "t")?, "t")?;
    let cat_values = match field(obj, "cat")? {
        Value::Array(items) => items
            .iter()
            .map(|v| as_index(v, "cat").map(|u| u as usize))
            .collect::<Result<Vec<_>>>()?,
        _ => return Err(Error::SchemaViolation("`cat` must be an array".into())),
    };
    let num_values = match field(obj, "num")? {
        Value::Array(items) => items
            .iter()
            .map(|v| {
                v.as_f64()
                    .ok_or_else(|| Error::SchemaViolation(format!("`num` entry {v} is not a number")))
            })
            .collect::<Result<Vec<_>>>()?,
        _ => return Err(Error::SchemaViolation("`num` must be an array".into())),
    };
    let plot = PlotRecord {
        session_id,
        track_id,
        update_time,
        cat_values,
        num_values,
    };
    plot.validate(schema)?;
    Ok(plot)
}

/// Time-ordered plots of one object within one session.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub session_id: String,
    pub track_id: u64,
    pub plots: Vec<PlotRecord>,
}

impl Track {
    pub fn len(&self) -> usize {
        self.plots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plots.is_empty()
    }

    pub fn times(&self) -> Vec<u64> {
        self.plots.iter().map(|p| p.update_time).collect()
    }
}

/// Tracks grouped by recording session. Sessions and tracks iterate in
/// sorted order so everything downstream is deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SessionStore {
    pub sessions: BTreeMap<String, Vec<Track>>,
}

impl SessionStore {
    pub fn session_ids(&self) -> Vec<String> {
        self.sessions.keys().cloned().collect()
    }

    pub fn tracks(&self) -> impl Iterator<Item = &Track> {
        self.sessions.values().flatten()
    }

    pub fn session(&self, session: &str) -> Option<&[Track]> {
        self.sessions.get(session).map(Vec::as_slice)
    }

    pub fn n_tracks(&self) -> usize {
        self.sessions.values().map(Vec::len).sum()
    }

    pub fn n_plots(&self) -> usize {
        self.tracks().map(Track::len).sum()
    }

    pub fn session_plot_count(&self, session: &str) -> usize {
        self.sessions
            .get(session)
            .map(|ts| ts.iter().map(Track::len).sum())
            .unwrap_or(0)
    }

    /// All plots, track by track.
    pub fn plots(&self) -> impl Iterator<Item = &PlotRecord> {
        self.tracks().flat_map(|t| t.plots.iter())
    }

    /// Plots of every session merged into one stream ordered by
    /// (update_time, session, track), the order a live link would see.
    pub fn interleaved(&self) -> Vec<&PlotRecord> {
        let mut all: Vec<&PlotRecord> = self.plots().collect();
        all.sort_by(|a, b| {
            (a.update_time, &a.session_id, a.track_id).cmp(&(b.update_time, &b.session_id, b.track_id))
        });
        all
    }

    pub fn from_tracks(tracks: impl IntoIterator<Item = Track>) -> Self {
        let mut store = SessionStore::default();
        for t in tracks {
            store.sessions.entry(t.session_id.clone()).or_default().push(t);
        }
        for tracks in store.sessions.values_mut() {
            tracks.sort_by_key(|t| t.track_id);
        }
        store
    }
}

/// Groups plots by (session, track) and orders each track by update time,
/// keeping arrival order among equal times.
pub fn assemble_tracks<I>(plots: I) -> SessionStore
where
    I: IntoIterator<Item = PlotRecord>,
{
    let mut groups: HashMap<(String, u64), Vec<PlotRecord>> = HashMap::new();
    for p in plots {
        groups
            .entry((p.session_id.clone(), p.track_id))
            .or_default()
            .push(p);
    }
    let tracks = groups.into_iter().map(|((session_id, track_id), mut plots)| {
        plots.sort_by_key(|p| p.update_time);
        Track {
            session_id,
            track_id,
            plots,
        }
    });
    SessionStore::from_tracks(tracks)
}

/// Time differences between consecutive plots. The first plot has no
/// predecessor and copies the second plot's period, so the output has the
/// same length as the track.
pub fn updating_periods(track: &Track) -> Result<Vec<f64>> {
    periods_from_times(&track.times())
}

pub fn periods_from_times(times: &[u64]) -> Result<Vec<f64>> {
    if times.len() < 2 {
        return Err(Error::TrackTooShort {
            len: times.len(),
            needed: 2,
        });
    }
    let mut out = Vec::with_capacity(times.len());
    out.push(0.0);
    for w in times.windows(2) {
        out.push(w[1] as f64 - w[0] as f64);
    }
    out[0] = out[1];
    Ok(out)
}

/// Reads every non-blank line of an NDJSON document.
pub fn parse_plots(text: &str, schema: &FeatureSchema) -> Result<Vec<PlotRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| parse_plot_line(l, schema))
        .collect()
}

/// Loads a corpus from one NDJSON file or from every `*.ndjson` file of a
/// directory, in file-name order.
pub fn read_corpus(path: &Path, schema: &FeatureSchema) -> Result<SessionStore> {
    let files = if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        files.retain(|f| f.extension().is_some_and(|x| x == "ndjson"));
        files.sort();
        files
    } else {
        vec![path.to_path_buf()]
    };
    let mut plots = Vec::new();
    for f in &files {
        let text = std::fs::read_to_string(f)?;
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            plots.push(parse_plot_line(line, schema).map_err(|e| match e {
                Error::MalformedLine(m) => Error::MalformedLine(format!("{}:{}: {m}", f.display(), n + 1)),
                Error::SchemaViolation(m) => Error::SchemaViolation(format!("{}:{}: {m}", f.display(), n + 1)),
                other => other,
            })?);
        }
    }
    Ok(assemble_tracks(plots))
}

/// Writes `<session>.ndjson` per session into `dir`, plots in stream order.
pub fn write_sessions(store: &SessionStore, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (id, tracks) in &store.sessions {
        let one = SessionStore::from_tracks(tracks.iter().cloned());
        let path = dir.join(format!("{id}.ndjson"));
        let mut w = std::io::BufWriter::new(std::fs::File::create(&path)?);
        write_plots(&mut w, one.interleaved())?;
        std::io::Write::flush(&mut w)?;
        written.push(path);
    }
    Ok(written)
}

pub fn write_plots<'a, W: std::io::Write>(
    mut w: W,
    plots: impl IntoIterator<Item = &'a PlotRecord>,
) -> std::io::Result<()> {
    for p in plots {
        writeln!(w, "{}", p.to_line())?;
    }
    Ok(())
}
