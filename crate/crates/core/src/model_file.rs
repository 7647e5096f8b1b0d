//! The persisted detector pair: one versioned JSON document holding the
//! schema it was trained for, a "field" and a "timing" section, and their
//! alert thresholds.
//!
//! Weight matrices serialize as `{rows, cols, data}` with `data` row-major;
//! layers appear in forward order. Serialization is deterministic, so the
//! same training run always yields the same bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::ExperimentConfig;
use crate::field::{train_field_model, FieldModel, FieldTraining};
use crate::schema::FeatureSchema;
use crate::stream::{SessionStore, Track};
use crate::timing::{train_timing_model, TimingModel, TimingTraining};

pub const FORMAT: &str = "radarnomaly-model";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub field_plot: f64,
    pub field_track: f64,
    pub timing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub schema_fingerprint: String,
    pub schema: FeatureSchema,
    pub seed: u64,
    pub thresholds: Thresholds,
    pub field: FieldModel,
    pub timing: TimingModel,
}

impl ModelFile {
    pub fn new(schema: &FeatureSchema, field: FieldModel, timing: TimingModel, seed: u64) -> Result<Self> {
        let thresholds = Thresholds {
            field_plot: field.plot_threshold.ok_or(Error::UntrainedModel)?,
            field_track: field.track_threshold.ok_or(Error::UntrainedModel)?,
            timing: timing.thr.ok_or(Error::UntrainedModel)?,
        };
        Ok(Self {
            format: FORMAT.into(),
            version: VERSION,
            schema_fingerprint: schema.fingerprint(),
            schema: schema.clone(),
            seed,
            thresholds,
            field,
            timing,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text).map_err(|e| Error::ModelFile(e.to_string()))?;
        m.check()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Internal consistency: format, version, fingerprint, shapes and the
    /// threshold block against the sections it summarizes.
    fn check(&self) -> Result<()> {
        if self.format != FORMAT {
            return Err(Error::ModelFile(format!("unknown format `{}`", self.format)));
        }
        if self.version != VERSION {
            return Err(Error::ModelFile(format!(
                "version {} not supported (expected {VERSION})",
                self.version
            )));
        }
        self.schema.validate()?;
        if self.schema.fingerprint() != self.schema_fingerprint {
            return Err(Error::ModelFile("schema fingerprint does not match embedded schema".into()));
        }
        self.field.net.check_shapes()?;
        if self.field.net.cardinalities != self.schema.cardinalities()
            || self.field.net.n_numerical != self.schema.n_numerical()
        {
            return Err(Error::ModelFile("field section does not fit the schema".into()));
        }
        let t = &self.timing;
        t.net.out.check_shapes()?;
        let lstm = &t.net.lstm;
        let gates = 4 * lstm.hidden;
        if t.layout != crate::timing::TimingLayout::from_schema(&self.schema)?
            || lstm.input != t.layout.input_dim()
            || (lstm.w_input.rows, lstm.w_input.cols) != (gates, lstm.input)
            || (lstm.w_hidden.rows, lstm.w_hidden.cols) != (gates, lstm.hidden)
            || lstm.w_input.data.len() != gates * lstm.input
            || lstm.w_hidden.data.len() != gates * lstm.hidden
            || lstm.bias.len() != gates
            || t.net.out.inputs() != lstm.hidden
            || t.scaler.width() != 2
            || t.k == 0
        {
            return Err(Error::ModelFile("timing section does not fit the schema".into()));
        }
        let stated = (
            Some(self.thresholds.field_plot),
            Some(self.thresholds.field_track),
            Some(self.thresholds.timing),
        );
        if stated != (self.field.plot_threshold, self.field.track_threshold, self.timing.thr) {
            return Err(Error::ModelFile("threshold block disagrees with the model sections".into()));
        }
        Ok(())
    }

    /// Refuses a schema other than the one the model was trained for.
    pub fn check_schema(&self, schema: &FeatureSchema) -> Result<()> {
        let got = schema.fingerprint();
        if got != self.schema_fingerprint {
            return Err(Error::SchemaViolation(format!(
                "model expects schema {}, got {}",
                &self.schema_fingerprint[..12],
                &got[..12]
            )));
        }
        Ok(())
    }
}

/// Both trained detectors with their training byproducts.
#[derive(Debug, Clone)]
pub struct TrainedModels {
    pub file: ModelFile,
    pub field: FieldTraining,
    pub timing: TimingTraining,
}

/// Trains both detectors on every track of `store`.
pub fn train_models(store: &SessionStore, schema: &FeatureSchema, config: &ExperimentConfig) -> Result<TrainedModels> {
    let tracks: Vec<Track> = store.tracks().cloned().collect();
    let field = train_field_model(&tracks, schema, &config.field, &config.train, config.seed)?;
    let timing = train_timing_model(&tracks, schema, &config.timing, &config.train, config.seed)?;
    let file = ModelFile::new(schema, field.model.clone(), timing.model.clone(), config.seed)?;
    Ok(TrainedModels { file, field, timing })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldNet;
    use crate::nn::Matrix;
    use crate::timing::{TimingLayout, TimingNet};
    use crate::train::MinMaxScaler;

    fn tiny() -> ModelFile {
        let schema = FeatureSchema::default_radar();
        let field = FieldModel {
            scaler: MinMaxScaler {
                min: vec![0.0; 17],
                max: vec![1.0; 17],
            },
            net: FieldNet::new(&schema.cardinalities(), 17, &[4], 3),
            plot_threshold: Some(0.25),
            track_threshold: Some(0.125),
        };
        let layout = TimingLayout::from_schema(&schema).unwrap();
        let timing = TimingModel {
            net: TimingNet::new(layout.input_dim(), 5, 4),
            layout,
            k: 5,
            scaler: MinMaxScaler {
                min: vec![0.0, 900.0],
                max: vec![1.0, 1100.0],
            },
            thr: Some(0.1 + 0.2),
        };
        ModelFile::new(&schema, field, timing, 42).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = tiny();
        let text = m.to_json();
        let back = ModelFile::from_json(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json(), text);
        assert_eq!(back.thresholds.timing, 0.1 + 0.2);
    }

    #[test]
    fn file_contract() {
        let v: serde_json::Value = serde_json::from_str(&tiny().to_json()).unwrap();
        for key in ["field", "timing", "thresholds", "schema_fingerprint", "version"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        let w = &v["field"]["net"]["layers"][0]["weights"];
        assert_eq!((w["rows"].as_u64(), w["cols"].as_u64()), (Some(4), Some(27)));
        assert_eq!(w["data"].as_array().unwrap().len(), 4 * 27);
    }

    #[test]
    fn rejects_tampering() {
        let m = tiny();
        let mut bad = m.clone();
        bad.version = 9;
        assert!(matches!(ModelFile::from_json(&bad.to_json()), Err(Error::ModelFile(_))));
        let mut bad = m.clone();
        bad.thresholds.field_plot = 1.0;
        assert!(matches!(ModelFile::from_json(&bad.to_json()), Err(Error::ModelFile(_))));
        let mut bad = m.clone();
        bad.field.net.head.weights = Matrix::zeros(2, 2);
        assert!(ModelFile::from_json(&bad.to_json()).is_err());
        assert!(matches!(ModelFile::from_json("{}"), Err(Error::ModelFile(_))));
    }

    #[test]
    fn refuses_other_schema() {
        let m = tiny();
        assert!(m.check_schema(&FeatureSchema::default_radar()).is_ok());
        let mut other = FeatureSchema::default_radar();
        other.numerical[0] = "renamed".into();
        assert!(matches!(m.check_schema(&other), Err(Error::SchemaViolation(_))));
    }
}
