//! Train/test protocols over recording sessions.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stream::{SessionStore, Track};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetupKind {
    /// Train on every other session, test on the examined one.
    CrossSession,
    /// Train on the early part of the examined session, test on the rest.
    Chronological,
    /// Other sessions plus the first slice of the examined one.
    Transfer,
}

impl SetupKind {
    pub const ALL: [SetupKind; 3] = [SetupKind::CrossSession, SetupKind::Chronological, SetupKind::Transfer];

    pub fn short_name(self) -> &'static str {
        match self {
            SetupKind::CrossSession => "cross",
            SetupKind::Chronological => "chrono",
            SetupKind::Transfer => "transfer",
        }
    }
}

impl fmt::Display for SetupKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SetupKind::CrossSession => "cross_session",
            SetupKind::Chronological => "chronological",
            SetupKind::Transfer => "transfer",
        })
    }
}

impl FromStr for SetupKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross" | "cross_session" => Ok(SetupKind::CrossSession),
            "chrono" | "chronological" => Ok(SetupKind::Chronological),
            "transfer" => Ok(SetupKind::Transfer),
            _ => Err(Error::InvalidConfig(format!("unknown setup `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSetup {
    pub kind: SetupKind,
    pub session: String,
    /// Chronological trains on this leading share of the examined session;
    /// transfer adds the complementary `1 − fraction` leading share.
    pub fraction: f64,
}

impl EvalSetup {
    pub fn new(kind: SetupKind, session: impl Into<String>) -> Self {
        Self {
            kind,
            session: session.into(),
            fraction: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSplit {
    pub train: SessionStore,
    pub test: SessionStore,
    /// Tracks with plots on both sides of the boundary.
    pub straddling: BTreeSet<(String, u64)>,
}

impl EvalSplit {
    /// Training tracks that lie entirely in the train split.
    pub fn complete_train_tracks(&self) -> Vec<Track> {
        self.train
            .tracks()
            .filter(|t| !self.straddling.contains(&(t.session_id.clone(), t.track_id)))
            .cloned()
            .collect()
    }
}

/// Splits one session's plots at a share of its time-ordered stream.
fn split_by_time(tracks: &[Track], head_share: f64) -> (Vec<Track>, Vec<Track>, BTreeSet<(String, u64)>) {
    let mut order: Vec<(u64, u64, usize)> = tracks
        .iter()
        .flat_map(|t| (0..t.len()).map(move |j| (t.plots[j].update_time, t.track_id, j)))
        .collect();
    order.sort();
    let n_head = (head_share * order.len() as f64).round() as usize;
    let head: BTreeSet<(u64, usize)> = order[..n_head].iter().map(|&(_, id, j)| (id, j)).collect();
    let (mut early, mut late, mut straddling) = (Vec::new(), Vec::new(), BTreeSet::new());
    for t in tracks {
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for (j, p) in t.plots.iter().enumerate() {
            if head.contains(&(t.track_id, j)) {
                a.push(p.clone());
            } else {
                b.push(p.clone());
            }
        }
        if !a.is_empty() && !b.is_empty() {
            straddling.insert((t.session_id.clone(), t.track_id));
        }
        for (side, plots) in [(&mut early, a), (&mut late, b)] {
            if !plots.is_empty() {
                side.push(Track {
                    session_id: t.session_id.clone(),
                    track_id: t.track_id,
                    plots,
                });
            }
        }
    }
    (early, late, straddling)
}

pub fn make_split(store: &SessionStore, setup: &EvalSetup) -> Result<EvalSplit> {
    if !(setup.fraction > 0.0 && setup.fraction < 1.0) {
        return Err(Error::InvalidConfig("split fraction must lie in (0, 1)".into()));
    }
    let examined = store
        .session(&setup.session)
        .ok_or_else(|| Error::UnknownSession(setup.session.clone()))?;
    let others = || {
        store
            .sessions
            .iter()
            .filter(|(id, _)| **id != setup.session)
            .flat_map(|(_, ts)| ts.iter().cloned())
    };
    if setup.kind != SetupKind::Chronological && store.sessions.len() < 2 {
        return Err(Error::SingleSession);
    }
    let (train, test, straddling) = match setup.kind {
        SetupKind::CrossSession => (others().collect(), examined.to_vec(), BTreeSet::new()),
        SetupKind::Chronological => split_by_time(examined, setup.fraction),
        SetupKind::Transfer => {
            let (head, tail, straddling) = split_by_time(examined, 1.0 - setup.fraction);
            (others().chain(head).collect::<Vec<_>>(), tail, straddling)
        }
    };
    Ok(EvalSplit {
        train: SessionStore::from_tracks(train),
        test: SessionStore::from_tracks(test),
        straddling,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::PlotRecord;

    fn store(sessions: &[(&str, usize, usize)]) -> SessionStore {
        // (session, tracks, plots per track); plots interleave in time
        let mut tracks = Vec::new();
        for &(s, n_tracks, len) in sessions {
            for k in 0..n_tracks {
                tracks.push(Track {
                    session_id: s.into(),
                    track_id: k as u64,
                    plots: (0..len)
                        .map(|j| PlotRecord {
                            session_id: s.into(),
                            track_id: k as u64,
                            update_time: (j * n_tracks + k) as u64,
                            cat_values: vec![],
                            num_values: vec![],
                        })
                        .collect(),
                });
            }
        }
        SessionStore::from_tracks(tracks)
    }

    fn keys(s: &SessionStore) -> BTreeSet<(String, u64, u64)> {
        s.plots().map(|p| (p.session_id.clone(), p.track_id, p.update_time)).collect()
    }

    #[test]
    fn cross_session_holds_out_the_examined_session() {
        let st = store(&[("A", 2, 5), ("B", 2, 5), ("C", 1, 5), ("D", 3, 5)]);
        let sp = make_split(&st, &EvalSetup::new(SetupKind::CrossSession, "D")).unwrap();
        assert_eq!(sp.train.session_ids(), vec!["A", "B", "C"]);
        assert_eq!(sp.test.session_ids(), vec!["D"]);
        assert_eq!(sp.test.n_plots(), 15);
    }

    #[test]
    fn chronological_ninety_ten() {
        let st = store(&[("A", 4, 25)]);
        let sp = make_split(&st, &EvalSetup::new(SetupKind::Chronological, "A")).unwrap();
        assert_eq!((sp.train.n_plots(), sp.test.n_plots()), (90, 10));
        let last_train = sp.train.plots().map(|p| p.update_time).max().unwrap();
        assert!(sp.test.plots().all(|p| p.update_time > last_train));
        assert_eq!(sp.straddling.len(), 4);
        assert!(sp.complete_train_tracks().is_empty());
    }

    #[test]
    fn transfer_adds_the_first_tenth() {
        let st = store(&[("A", 2, 10), ("B", 2, 10), ("C", 2, 10), ("D", 2, 50)]);
        let sp = make_split(&st, &EvalSetup::new(SetupKind::Transfer, "D")).unwrap();
        assert_eq!(sp.train.session_plot_count("D"), 10);
        assert_eq!(sp.train.n_plots(), 70);
        assert_eq!(sp.test.n_plots(), 90);
    }

    #[test]
    fn splits_partition_the_selected_plots() {
        let st = store(&[("A", 3, 17), ("B", 5, 9)]);
        for kind in SetupKind::ALL {
            let sp = make_split(&st, &EvalSetup::new(kind, "B")).unwrap();
            let (tr, te) = (keys(&sp.train), keys(&sp.test));
            assert!(tr.is_disjoint(&te));
            let selected: BTreeSet<_> = if kind == SetupKind::Chronological {
                keys(&st).into_iter().filter(|k| k.0 == "B").collect()
            } else {
                keys(&st)
            };
            assert_eq!(tr.union(&te).cloned().collect::<BTreeSet<_>>(), selected);
        }
    }

    #[test]
    fn errors() {
        let st = store(&[("A", 1, 5)]);
        assert!(matches!(
            make_split(&st, &EvalSetup::new(SetupKind::CrossSession, "Z")),
            Err(Error::UnknownSession(_))
        ));
        assert!(matches!(
            make_split(&st, &EvalSetup::new(SetupKind::Transfer, "A")),
            Err(Error::SingleSession)
        ));
        assert!(make_split(&st, &EvalSetup::new(SetupKind::Chronological, "A")).is_ok());
        assert_eq!("chrono".parse::<SetupKind>().unwrap(), SetupKind::Chronological);
    }
}
