//! Seeded generator of benign radar-style sessions.
//!
//! Each track draws a type, then its categorical values from that type's
//! tables. Numericals come from a latent kinematic state plus the values of
//! a few "role" categoricals (object kind, alert, category, RCS band), so
//! the reported fields are mutually predictable and a single-field
//! manipulation breaks the pattern. Update times follow the type's base
//! period with small jitter and rare late updates.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::FeatureSchema;
use crate::stream::{PlotRecord, SessionStore, Track};
use crate::timing::DEFAULT_K;

/// Number of numericals the generator knows how to derive.
pub const GENERATED_NUMERICALS: usize = 17;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackTypeDef {
    pub name: String,
    /// Relative frequency among tracks.
    pub weight: f64,
    /// Nominal UpdatingPeriod in time units (ms).
    pub base_period: f64,
    /// Periods stay within base_period × (1 ± jitter).
    pub jitter: f64,
    /// One probability row per schema categorical, in schema order.
    pub categorical_tables: Vec<Vec<f64>>,
    /// Initial range from the sensor, km.
    pub start_range_km: [f64; 2],
    /// Max |turn rate|, rad/s.
    pub max_turn_rate: f64,
}

/// Kinematic signature of one value of the object-kind categorical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectKinematics {
    /// m/s
    pub speed: [f64; 2],
    /// km
    pub altitude: [f64; 2],
    pub rcs_db: f64,
}

/// Categoricals whose values feed the numericals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRoles {
    pub object: String,
    pub alert: String,
    pub category: String,
    pub band: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub schema: FeatureSchema,
    pub track_types: Vec<TrackTypeDef>,
    pub roles: SynthRoles,
    /// Indexed by the object-kind value.
    pub object_kinematics: Vec<ObjectKinematics>,
    /// One entry per session.
    pub tracks_per_session: Vec<usize>,
    pub min_length: usize,
    pub max_length: usize,
    /// Chance that a plot reports one random categorical with a wrong value.
    pub flip_probability: f64,
    /// Relative sd of the gaussian noise on numericals.
    pub noise: f64,
    /// Chance that an update arrives late (up to the jitter bound).
    pub late_probability: f64,
    /// Mean number of simultaneously live tracks.
    pub concurrency: f64,
    pub seed: u64,
}

fn onehot_row(card: usize, hot: &[(usize, f64)]) -> Vec<f64> {
    let mut row = vec![0.0; card];
    for &(i, p) in hot {
        row[i] = p;
    }
    row
}

impl SynthConfig {
    /// Nine track types over the default radar schema, each with a fixed
    /// categorical signature, in four update-rate classes. Four sessions
    /// sized in the proportions 50.7 / 25.5 / 13.2 / 10.6 %.
    pub fn default_radar(seed: u64) -> Self {
        let schema = FeatureSchema::default_radar();
        let cards = schema.cardinalities();
        // trackType objectType signalQuality echoShape dopplerClass
        // alertRaised objectCategory polarization rcsBand beamId
        let types: [(&str, f64, [usize; 10]); 9] = [
            ("air-hostile", 0.15, [0, 0, 0, 0, 0, 1, 1, 0, 0, 0]),
            ("air-patrol", 0.10, [0, 0, 0, 0, 1, 0, 1, 1, 0, 1]),
            ("air-friendly", 0.10, [0, 0, 1, 0, 1, 0, 0, 0, 0, 0]),
            ("airliner", 0.15, [0, 1, 0, 1, 1, 0, 0, 1, 2, 0]),
            ("low-hostile", 0.12, [1, 2, 1, 1, 2, 1, 1, 2, 1, 1]),
            ("low-friendly", 0.13, [1, 2, 1, 2, 2, 0, 0, 3, 1, 1]),
            ("surface-hostile", 0.10, [2, 3, 2, 2, 4, 1, 1, 4, 2, 3]),
            ("surface-friendly", 0.10, [2, 3, 2, 2, 3, 0, 0, 5, 2, 2]),
            ("surveillance", 0.05, [3, 3, 2, 1, 3, 0, 0, 5, 2, 2]),
        ];
        // per trackType value: base period, start range, max turn rate
        let classes = [
            (1000.0, [40.0, 200.0], 0.02),
            (2500.0, [10.0, 80.0], 0.01),
            (4000.0, [5.0, 40.0], 0.005),
            (12000.0, [5.0, 40.0], 0.002),
        ];
        let track_types = types
            .iter()
            .map(|&(name, weight, values)| {
                let (base_period, start_range_km, max_turn_rate) = classes[values[0]];
                TrackTypeDef {
                    name: name.into(),
                    weight,
                    base_period,
                    jitter: 0.2,
                    categorical_tables: values
                        .iter()
                        .zip(&cards)
                        .map(|(&v, &c)| onehot_row(c, &[(v, 1.0)]))
                        .collect(),
                    start_range_km,
                    max_turn_rate,
                }
            })
            .collect();
        Self {
            schema,
            track_types,
            roles: SynthRoles {
                object: "objectType".into(),
                alert: "alertRaised".into(),
                category: "objectCategory".into(),
                band: "rcsBand".into(),
            },
            object_kinematics: vec![
                ObjectKinematics {
                    speed: [250.0, 320.0],
                    altitude: [8.0, 11.0],
                    rcs_db: 5.0,
                },
                ObjectKinematics {
                    speed: [180.0, 240.0],
                    altitude: [9.0, 12.0],
                    rcs_db: 20.0,
                },
                ObjectKinematics {
                    speed: [40.0, 70.0],
                    altitude: [0.3, 1.0],
                    rcs_db: 10.0,
                },
                ObjectKinematics {
                    speed: [5.0, 15.0],
                    altitude: [0.0, 0.05],
                    rcs_db: 25.0,
                },
            ],
            tracks_per_session: vec![143, 72, 37, 30],
            min_length: 7,
            max_length: 25,
            flip_probability: 0.01,
            noise: 0.01,
            late_probability: 0.02,
            concurrency: 4.0,
            seed,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(format!("synth config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    fn role_indices(&self) -> Result<[usize; 4]> {
        let r = &self.roles;
        let mut out = [0; 4];
        for (slot, (field, name)) in out.iter_mut().zip([
            ("roles.object", &r.object),
            ("roles.alert", &r.alert),
            ("roles.category", &r.category),
            ("roles.band", &r.band),
        ]) {
            *slot = self
                .schema
                .categorical_index(name)
                .ok_or_else(|| Error::InvalidConfig(format!("{field}: `{name}` is not a schema categorical")))?;
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        self.schema.validate()?;
        if self.schema.n_numerical() != GENERATED_NUMERICALS {
            return bad(format!(
                "schema.numerical: generator derives {GENERATED_NUMERICALS} numericals, schema has {}",
                self.schema.n_numerical()
            ));
        }
        let roles = self.role_indices()?;
        let cards = self.schema.cardinalities();
        if self.object_kinematics.len() != cards[roles[0]] {
            return bad(format!(
                "object_kinematics: need {} entries, one per `{}` value",
                cards[roles[0]], self.roles.object
            ));
        }
        for (i, k) in self.object_kinematics.iter().enumerate() {
            if !(k.speed[0] >= 0.0 && k.speed[0] <= k.speed[1] && k.altitude[0] >= 0.0 && k.altitude[0] <= k.altitude[1])
            {
                return bad(format!("object_kinematics[{i}]: ranges must be ordered and non-negative"));
            }
        }
        if self.track_types.is_empty() {
            return bad("track_types: at least one type is required".into());
        }
        for t in &self.track_types {
            let n = &t.name;
            if !(t.weight > 0.0 && t.weight.is_finite()) {
                return bad(format!("track_types[{n}].weight must be positive"));
            }
            if !(t.base_period > 0.0 && t.base_period.is_finite()) {
                return bad(format!("track_types[{n}].base_period must be positive"));
            }
            if !(0.0..0.5).contains(&t.jitter) {
                return bad(format!("track_types[{n}].jitter must lie in [0, 0.5)"));
            }
            if !(t.start_range_km[0] > 0.0 && t.start_range_km[0] <= t.start_range_km[1]) {
                return bad(format!("track_types[{n}].start_range_km must be positive and ordered"));
            }
            if !(t.max_turn_rate.is_finite() && t.max_turn_rate >= 0.0) {
                return bad(format!("track_types[{n}].max_turn_rate must be non-negative"));
            }
            if t.categorical_tables.len() != cards.len() {
                return bad(format!(
                    "track_types[{n}].categorical_tables: need {} rows, got {}",
                    cards.len(),
                    t.categorical_tables.len()
                ));
            }
            for (j, (row, &card)) in t.categorical_tables.iter().zip(&cards).enumerate() {
                let feature = &self.schema.categorical[j].name;
                if row.len() != card {
                    return bad(format!("track_types[{n}].categorical_tables[{feature}]: need {card} probabilities"));
                }
                if row.iter().any(|p| p.is_nan() || *p < 0.0) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return bad(format!(
                        "track_types[{n}].categorical_tables[{feature}]: probabilities must be non-negative and sum to 1"
                    ));
                }
            }
        }
        if self.tracks_per_session.is_empty() {
            return bad("tracks_per_session: at least one session is required".into());
        }
        if self.min_length < DEFAULT_K + 2 || self.min_length > self.max_length {
            return bad(format!(
                "min_length/max_length: need {} ≤ min_length ≤ max_length",
                DEFAULT_K + 2
            ));
        }
        for (name, p) in [
            ("flip_probability", self.flip_probability),
            ("late_probability", self.late_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1]"));
            }
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be non-negative".into());
        }
        if !(self.concurrency > 0.0 && self.concurrency.is_finite()) {
            return bad("concurrency must be positive".into());
        }
        Ok(())
    }

    pub fn session_id(&self, index: usize) -> String {
        format!("R{}", index + 1)
    }
}

fn pick(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    // rounding at the top end: last value with non-zero weight
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

fn lerp(range: [f64; 2], u: f64) -> f64 {
    range[0] + (range[1] - range[0]) * u
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Per-session generator; `set_stream` keeps sessions independent of each
/// other and of their generation order.
fn session_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

struct Kinematics {
    x: f64,
    y: f64,
    heading: f64,
    turn: f64,
    speed: f64,
    altitude: f64,
    phase: f64,
}

impl Kinematics {
    /// Noise-free numerical vector at `t` seconds since track start.
    fn quantities(&self, t: f64, object_rcs: f64, alert: f64, category: f64, band: f64) -> [f64; GENERATED_NUMERICALS] {
        let range = (self.x * self.x + self.y * self.y).sqrt().max(0.1);
        let vx = self.speed * self.heading.cos();
        let vy = self.speed * self.heading.sin();
        let wobble = 0.05 * self.altitude;
        let altitude = self.altitude + wobble * (0.1 * t + self.phase).sin();
        let climb = 1000.0 * wobble * 0.1 * (0.1 * t + self.phase).cos();
        let rcs = object_rcs + 3.0 * band;
        let threat = 0.15 + 0.5 * alert + 0.25 * category;
        [
            range,
            self.y.atan2(self.x) / PI,
            self.x,
            self.y,
            vx,
            vy,
            self.speed,
            altitude,
            climb,
            rcs,
            rcs - 20.0 * range.log10() + 60.0,
            (self.x * vx + self.y * vy) / range,
            threat,
            0.9 - 0.7 * category + 0.1 * alert,
            threat * self.speed / 100.0,
            0.5 * (self.speed / 100.0).powi(2) + altitude,
            altitude.atan2(range).to_degrees(),
        ]
    }

    fn advance(&mut self, dt: f64) {
        self.heading += self.turn * dt;
        self.x += self.speed * self.heading.cos() * dt / 1000.0;
        self.y += self.speed * self.heading.sin() * dt / 1000.0;
    }
}

/// Tracks of one session, ordered by track id. A pure function of
/// `(config.seed, index)`.
pub fn generate_session(config: &SynthConfig, index: usize) -> Result<Vec<Track>> {
    config.validate()?;
    let n_tracks = *config
        .tracks_per_session
        .get(index)
        .ok_or_else(|| Error::InvalidConfig(format!("session index {index} beyond tracks_per_session")))?;
    let roles = config.role_indices()?;
    let cards = config.schema.cardinalities();
    let n_cat = cards.len();
    let session_id = config.session_id(index);
    let mut rng = session_rng(config.seed, index);

    let weights: Vec<f64> = config.track_types.iter().map(|t| t.weight).collect();
    let mean_len = (config.min_length + config.max_length) as f64 / 2.0;
    let mean_duration = weights
        .iter()
        .zip(&config.track_types)
        .map(|(w, t)| w * t.base_period * mean_len)
        .sum::<f64>()
        / weights.iter().sum::<f64>();
    let span = n_tracks as f64 * mean_duration / config.concurrency;
    let origin = 10_000.0;

    let mut tracks = Vec::with_capacity(n_tracks);
    for k in 0..n_tracks {
        let ty = &config.track_types[pick(&mut rng, &weights)];
        let cats: Vec<usize> = ty.categorical_tables.iter().map(|row| pick(&mut rng, row)).collect();
        let len = rng.random_range(config.min_length..=config.max_length);
        let obj = &config.object_kinematics[cats[roles[0]]];
        let unit = |v: usize, card: usize| v as f64 / (card - 1) as f64;
        let alert = unit(cats[roles[1]], cards[roles[1]]);
        let category = unit(cats[roles[2]], cards[roles[2]]);
        let band = cats[roles[3]] as f64;

        let r0 = lerp(ty.start_range_km, rng.random());
        let az: f64 = rng.random_range(0.0..2.0 * PI);
        let mut kin = Kinematics {
            x: r0 * az.cos(),
            y: r0 * az.sin(),
            heading: rng.random_range(0.0..2.0 * PI),
            turn: if ty.max_turn_rate > 0.0 {
                rng.random_range(-ty.max_turn_rate..=ty.max_turn_rate)
            } else {
                0.0
            },
            speed: lerp(obj.speed, rng.random()),
            altitude: lerp(obj.altitude, rng.random()),
            phase: rng.random_range(0.0..2.0 * PI),
        };

        let start = origin + rng.random::<f64>() * span;
        let mut time = start.round() as u64;
        let mut plots = Vec::with_capacity(len);
        for n in 0..len {
            if n > 0 {
                let s = if rng.random::<f64>() < config.late_probability {
                    rng.random_range(0.6..=1.0)
                } else {
                    (0.02 * normal(&mut rng)).clamp(-1.0, 1.0)
                };
                let period = (ty.base_period * (1.0 + ty.jitter * s)).round().max(1.0);
                kin.advance(period / 1000.0);
                time += period as u64;
            }
            let t = (time as f64 - start) / 1000.0;
            let clean = kin.quantities(t, obj.rcs_db, alert, category, band);
            let num_values = clean.iter().map(|v| v * (1.0 + config.noise * normal(&mut rng))).collect();
            let mut cat_values = cats.clone();
            if rng.random::<f64>() < config.flip_probability {
                let j = rng.random_range(0..n_cat);
                let shift = rng.random_range(1..cards[j]);
                cat_values[j] = (cat_values[j] + shift) % cards[j];
            }
            plots.push(PlotRecord {
                session_id: session_id.clone(),
                track_id: 1000 + k as u64,
                update_time: time,
                cat_values,
                num_values,
            });
        }
        tracks.push(Track {
            session_id: session_id.clone(),
            track_id: 1000 + k as u64,
            plots,
        });
    }
    Ok(tracks)
}

/// Every session of `config`.
pub fn generate_corpus(config: &SynthConfig) -> Result<SessionStore> {
    let mut all = Vec::new();
    for i in 0..config.tracks_per_session.len() {
        all.extend(generate_session(config, i)?);
    }
    Ok(SessionStore::from_tracks(all))
}

/// Four sessions, three track types, default schema.
pub fn default_corpus(seed: u64) -> SessionStore {
    generate_corpus(&SynthConfig::default_radar(seed)).expect("default config is valid")
}
