//! Labeled attack test sets forged from benign sessions.
//!
//! * Manipulation: every track is duplicated and the copy gets one
//!   categorical overwritten with a value other than the track's modal one.
//!   Copies are labeled 1, so the set is balanced.
//! * Dropping: from each long enough track, `d ≥ c` consecutive plots are
//!   removed and the plot right after the gap is labeled 1.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::nn::seeded_rng;
use crate::schema::FeatureSchema;
use crate::stream::{plot_from_object, PlotRecord, SessionStore, Track};

/// Appended to the session id of manipulated copies so they never merge
/// with their originals.
pub const MANIPULATED_SUFFIX: &str = "#m";

pub const DEFAULT_DROP_C: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledTrack {
    pub session_id: String,
    pub track_id: u64,
    pub plots: Vec<PlotRecord>,
    /// One 0/1 label per plot.
    pub labels: Vec<u8>,
}

impl LabeledTrack {
    pub fn benign(track: &Track) -> Self {
        Self {
            session_id: track.session_id.clone(),
            track_id: track.track_id,
            plots: track.plots.clone(),
            labels: vec![0; track.len()],
        }
    }

    pub fn track(&self) -> Track {
        Track {
            session_id: self.session_id.clone(),
            track_id: self.track_id,
            plots: self.plots.clone(),
        }
    }

    pub fn is_malicious(&self) -> bool {
        self.labels.contains(&1)
    }

    pub fn len(&self) -> usize {
        self.plots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plots.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManipulatedTrack {
    pub session_id: String,
    pub track_id: u64,
    pub modal: usize,
    pub value: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedSpan {
    pub session_id: String,
    pub track_id: u64,
    /// Original track length.
    pub len: usize,
    /// First dropped index.
    pub i: usize,
    /// Drawn budget.
    pub r: usize,
    /// Plots actually dropped.
    pub d: usize,
}

/// What was done to produce a test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "attack", rename_all = "snake_case")]
pub enum Provenance {
    Manipulation {
        feature: String,
        seed: u64,
        tracks: Vec<ManipulatedTrack>,
    },
    Drop {
        c: usize,
        k: usize,
        seed: u64,
        tracks: Vec<DroppedSpan>,
        ineligible_tracks: usize,
    },
}

impl Provenance {
    /// Value of the "attack" key on labeled lines.
    pub fn tag(&self) -> String {
        match self {
            Provenance::Manipulation { feature, .. } => format!("manipulate:{feature}"),
            Provenance::Drop { .. } => "drop".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledTestSet {
    pub tracks: Vec<LabeledTrack>,
    pub provenance: Provenance,
}

impl LabeledTestSet {
    pub fn n_plots(&self) -> usize {
        self.tracks.iter().map(LabeledTrack::len).sum()
    }

    pub fn n_positive(&self) -> usize {
        self.tracks.iter().flat_map(|t| &t.labels).filter(|&&l| l == 1).count()
    }

    pub fn plots(&self) -> impl Iterator<Item = (&PlotRecord, u8)> {
        self.tracks.iter().flat_map(|t| t.plots.iter().zip(t.labels.iter().copied()))
    }

    /// Labeled NDJSON: the plot keys plus "label" and "attack".
    pub fn write_ndjson<W: Write>(&self, mut w: W) -> Result<()> {
        let tag = Value::String(self.provenance.tag());
        for (plot, label) in self.plots() {
            let mut v = plot.to_value();
            let obj = v.as_object_mut().expect("plot serializes to an object");
            obj.insert("label".into(), Value::from(label));
            obj.insert("attack".into(), tag.clone());
            writeln!(w, "{v}")?;
        }
        Ok(())
    }

    /// Reads labeled NDJSON back, grouping by (session, track) in order of
    /// first appearance within each session.
    pub fn read_ndjson<R: BufRead>(r: R, schema: &FeatureSchema, provenance: Provenance) -> Result<Self> {
        let mut groups: BTreeMap<(String, u64), LabeledTrack> = BTreeMap::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let value: Value = serde_json::from_str(&line).map_err(|e| Error::MalformedLine(e.to_string()))?;
            let obj = value
                .as_object()
                .ok_or_else(|| Error::MalformedLine("line is not a JSON object".into()))?;
            let label = match obj.get("label").and_then(Value::as_u64) {
                Some(l @ (0 | 1)) => l as u8,
                _ => return Err(Error::SchemaViolation("\"label\" must be 0 or 1".into())),
            };
            let plot = plot_from_object(obj, schema)?;
            let entry = groups
                .entry((plot.session_id.clone(), plot.track_id))
                .or_insert_with(|| LabeledTrack {
                    session_id: plot.session_id.clone(),
                    track_id: plot.track_id,
                    plots: Vec::new(),
                    labels: Vec::new(),
                });
            entry.plots.push(plot);
            entry.labels.push(label);
        }
        Ok(Self {
            tracks: groups.into_values().collect(),
            provenance,
        })
    }
}

/// Most frequent value, smallest on ties.
fn modal_value(values: impl Iterator<Item = usize>, cardinality: usize) -> usize {
    let mut counts = vec![0usize; cardinality];
    for v in values {
        counts[v] += 1;
    }
    let best = *counts.iter().max().unwrap_or(&0);
    counts.iter().position(|&c| c == best).unwrap_or(0)
}

/// B ∪ B′ where B′ copies every benign track with `feature` overwritten by
/// a uniformly drawn non-modal value.
pub fn manipulate_categorical(
    benign: &SessionStore,
    schema: &FeatureSchema,
    feature: &str,
    seed: u64,
) -> Result<LabeledTestSet> {
    let f = schema
        .categorical_index(feature)
        .ok_or_else(|| Error::UnknownFeature(feature.to_string()))?;
    let card = schema.categorical[f].cardinality;
    if card < 2 {
        return Err(Error::CardinalityOne(feature.to_string()));
    }
    let mut rng = seeded_rng(seed);
    let mut originals = Vec::new();
    let mut copies = Vec::new();
    let mut plan = Vec::new();
    for track in benign.tracks() {
        let modal = modal_value(track.plots.iter().map(|p| p.cat_values[f]), card);
        let mut value = rng.random_range(0..card - 1);
        if value >= modal {
            value += 1;
        }
        let session_id = format!("{}{MANIPULATED_SUFFIX}", track.session_id);
        let plots: Vec<PlotRecord> = track
            .plots
            .iter()
            .map(|p| {
                let mut q = p.clone();
                q.session_id = session_id.clone();
                q.cat_values[f] = value;
                q
            })
            .collect();
        plan.push(ManipulatedTrack {
            session_id: session_id.clone(),
            track_id: track.track_id,
            modal,
            value,
        });
        originals.push(LabeledTrack::benign(track));
        copies.push(LabeledTrack {
            session_id,
            track_id: track.track_id,
            labels: vec![1; plots.len()],
            plots,
        });
    }
    originals.extend(copies);
    Ok(LabeledTestSet {
        tracks: originals,
        provenance: Provenance::Manipulation {
            feature: feature.to_string(),
            seed,
            tracks: plan,
        },
    })
}

/// Removes one gap of at least `c` plots from every track with
/// `|T| ≥ k + c + 2` and labels the plot after the gap.
pub fn drop_plots(benign: &SessionStore, c: usize, k: usize, seed: u64) -> Result<LabeledTestSet> {
    if c == 0 {
        return Err(Error::InvalidConfig("drop budget c must be at least 1".into()));
    }
    let mut rng = seeded_rng(seed);
    let mut tracks = Vec::with_capacity(benign.n_tracks());
    let mut spans = Vec::new();
    let mut ineligible = 0;
    for track in benign.tracks() {
        let n = track.len();
        if n < k + c + 2 {
            ineligible += 1;
            tracks.push(LabeledTrack::benign(track));
            continue;
        }
        let i = rng.random_range(k..=n - c - 2);
        let r = rng.random_range(c..=n - 1);
        spans.push(DroppedSpan {
            session_id: track.session_id.clone(),
            track_id: track.track_id,
            len: n,
            i,
            r,
            d: (n - i - 1).min(r),
        });
        tracks.push(drop_span(track, i, r)?);
    }
    if spans.is_empty() {
        log::warn!("drop attack: no track is long enough (need {} plots)", k + c + 2);
    }
    Ok(LabeledTestSet {
        tracks,
        provenance: Provenance::Drop {
            c,
            k,
            seed,
            tracks: spans,
            ineligible_tracks: ineligible,
        },
    })
}

/// Applies the drop rule to one track with fixed `i` and `r`.
pub fn drop_span(track: &Track, i: usize, r: usize) -> Result<LabeledTrack> {
    let n = track.len();
    if i + 1 >= n {
        return Err(Error::IndexOutOfRange { index: i, len: n });
    }
    let d = (n - i - 1).min(r);
    let mut out = LabeledTrack {
        session_id: track.session_id.clone(),
        track_id: track.track_id,
        plots: Vec::new(),
        labels: Vec::new(),
    };
    for (j, p) in track.plots.iter().enumerate() {
        if !(i..i + d).contains(&j) {
            out.plots.push(p.clone());
            out.labels.push(u8::from(j == i + d));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn track(session: &str, id: u64, n: usize, objtype: impl Fn(usize) -> usize) -> Track {
        let schema = FeatureSchema::default_radar();
        Track {
            session_id: session.into(),
            track_id: id,
            plots: (0..n)
                .map(|j| {
                    let mut cat_values = vec![0; schema.n_categorical()];
                    cat_values[1] = objtype(j);
                    PlotRecord {
                        session_id: session.into(),
                        track_id: id,
                        update_time: 1000 * j as u64,
                        cat_values,
                        num_values: vec![j as f64; schema.n_numerical()],
                    }
                })
                .collect(),
        }
    }

    fn store(lens: &[usize]) -> SessionStore {
        SessionStore::from_tracks(lens.iter().enumerate().map(|(i, &n)| track("S", i as u64, n, |j| j % 2)))
    }

    #[test]
    fn binary_feature_takes_the_other_value() {
        let schema = FeatureSchema::default_radar();
        let b = SessionStore::from_tracks([track("S", 1, 8, |_| 0)]);
        let set = manipulate_categorical(&b, &schema, "alertRaised", 3).unwrap();
        let f = schema.categorical_index("alertRaised").unwrap();
        let copy = &set.tracks[1];
        assert!(copy.plots.iter().all(|p| p.cat_values[f] == 1));
        assert_eq!(copy.labels, vec![1; 8]);
    }

    #[test]
    fn manipulation_is_balanced_and_changes_one_column() {
        let schema = FeatureSchema::default_radar();
        let b = store(&[100, 150, 250]);
        let set = manipulate_categorical(&b, &schema, "objectType", 9).unwrap();
        assert_eq!(set.n_plots(), 1000);
        assert_eq!(set.n_positive(), 500);
        let Provenance::Manipulation { tracks: plan, .. } = &set.provenance else {
            panic!("wrong provenance")
        };
        for (orig, (copy, m)) in set.tracks[..3].iter().zip(set.tracks[3..].iter().zip(plan)) {
            assert_ne!(m.value, m.modal);
            assert!(copy.session_id.ends_with(MANIPULATED_SUFFIX));
            for (p, q) in orig.plots.iter().zip(&copy.plots) {
                assert_eq!(q.cat_values[1], m.value);
                assert_eq!(p.num_values, q.num_values);
                assert_eq!(p.update_time, q.update_time);
                for j in (0..p.cat_values.len()).filter(|&j| j != 1) {
                    assert_eq!(p.cat_values[j], q.cat_values[j]);
                }
            }
        }
        assert_eq!(set, manipulate_categorical(&b, &schema, "objectType", 9).unwrap());
    }

    #[test]
    fn manipulation_errors() {
        let schema = FeatureSchema::default_radar();
        let b = store(&[10]);
        assert!(matches!(
            manipulate_categorical(&b, &schema, "nope", 1),
            Err(Error::UnknownFeature(_))
        ));
        let mut one = schema.clone();
        one.categorical[5].cardinality = 1;
        assert!(matches!(
            manipulate_categorical(&b, &one, "alertRaised", 1),
            Err(Error::CardinalityOne(_))
        ));
    }

    #[test]
    fn drop_rule_arithmetic() {
        let t = track("S", 1, 40, |_| 0);
        let out = drop_span(&t, 12, 15).unwrap();
        assert_eq!(out.len(), 25);
        let pos: Vec<usize> = out.labels.iter().enumerate().filter(|(_, &l)| l == 1).map(|(j, _)| j).collect();
        assert_eq!(pos, vec![12]);
        // the labeled plot is original index 27
        assert_eq!(out.plots[12].update_time, 27_000);
    }

    #[test]
    fn short_tracks_pass_through() {
        let b = store(&[12]);
        let set = drop_plots(&b, 10, 5, 1).unwrap();
        assert_eq!(set.n_positive(), 0);
        assert_eq!(set.tracks[0].len(), 12);
        assert!(matches!(set.provenance, Provenance::Drop { ineligible_tracks: 1, .. }));
        assert!(drop_plots(&b, 0, 5, 1).is_err());
    }

    #[test]
    fn one_positive_per_eligible_track() {
        let b = store(&[12, 17, 40, 25, 16, 60]);
        let set = drop_plots(&b, 10, 5, 4).unwrap();
        assert_eq!(set.n_positive(), 4);
    }

    #[test]
    fn labeled_ndjson_round_trip() {
        let schema = FeatureSchema::default_radar();
        let set = drop_plots(&store(&[20, 30]), 10, 5, 2).unwrap();
        let mut buf = Vec::new();
        set.write_ndjson(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().all(|l| l.contains("\"attack\":\"drop\"")));
        let back = LabeledTestSet::read_ndjson(buf.as_slice(), &schema, set.provenance.clone()).unwrap();
        assert_eq!(back, set);
    }

    proptest! {
        #[test]
        fn drop_invariants(lens in proptest::collection::vec(1usize..80, 1..12), c in 1usize..12, seed: u64) {
            let b = store(&lens);
            let set = drop_plots(&b, c, 5, seed).unwrap();
            let eligible = lens.iter().filter(|&&n| n >= 5 + c + 2).count();
            prop_assert_eq!(set.n_positive(), eligible);
            for (orig, out) in b.tracks().zip(&set.tracks) {
                let d = orig.len() - out.len();
                if out.is_malicious() {
                    prop_assert!(d >= c);
                    let at = out.labels.iter().position(|&l| l == 1).unwrap();
                    prop_assert!(at >= 5);
                } else {
                    prop_assert_eq!(d, 0);
                }
                prop_assert!(out.plots.windows(2).all(|w| w[0].update_time <= w[1].update_time));
            }
        }
    }
}
