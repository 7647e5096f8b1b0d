//! Feature schema shared by every tensor shape in the pipeline.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoricalFeature {
    pub name: String,
    pub cardinality: usize,
}

/// Declares the categorical cardinalities, the numerical features and the
/// four features consumed by the timing detector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub categorical: Vec<CategoricalFeature>,
    pub numerical: Vec<String>,
    #[serde(rename = "timing")]
    pub timing_feature_names: Vec<String>,
}

/// Column indices of the timing subset, resolved against a schema.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimingColumns {
    pub numerical: usize,
    pub categorical: [usize; 3],
}

const DEFAULT_CATEGORICALS: [(&str, usize); 10] = [
    ("trackType", 4),
    ("objectType", 4),
    ("signalQuality", 3),
    ("echoShape", 3),
    ("dopplerClass", 5),
    ("alertRaised", 2),
    ("objectCategory", 2),
    ("polarization", 6),
    ("rcsBand", 3),
    ("beamId", 4),
];

impl FeatureSchema {
    pub fn new(
        categorical: Vec<CategoricalFeature>,
        numerical: Vec<String>,
        timing_feature_names: Vec<String>,
    ) -> Result<Self> {
        let schema = Self {
            categorical,
            numerical,
            timing_feature_names,
        };
        schema.validate()?;
        Ok(schema)
    }

    /// Ten categoricals and seventeen model numericals `num1..num17`; the
    /// update timestamp travels separately on every plot.
    pub fn default_radar() -> Self {
        let categorical = DEFAULT_CATEGORICALS
            .iter()
            .map(|&(name, cardinality)| CategoricalFeature {
                name: name.to_string(),
                cardinality,
            })
            .collect();
        let numerical = (1..=17).map(|i| format!("num{i}")).collect();
        let timing = ["num1", "objectType", "signalQuality", "trackType"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        Self::new(categorical, numerical, timing).expect("default schema is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.categorical.is_empty() || self.numerical.is_empty() {
            return Err(Error::InvalidConfig(
                "schema needs at least one categorical and one numerical feature".into(),
            ));
        }
        let mut names = HashSet::new();
        for c in &self.categorical {
            if c.cardinality < 2 {
                return Err(Error::InvalidConfig(format!(
                    "categorical `{}` has cardinality {} (< 2)",
                    c.name, c.cardinality
                )));
            }
            if !names.insert(c.name.as_str()) {
                return Err(Error::InvalidConfig(format!("duplicate feature `{}`", c.name)));
            }
        }
        for n in &self.numerical {
            if !names.insert(n.as_str()) {
                return Err(Error::InvalidConfig(format!("duplicate feature `{n}`")));
            }
        }
        self.timing_columns().map(|_| ())
    }

    pub fn timing_columns(&self) -> Result<TimingColumns> {
        if self.timing_feature_names.len() != 4 {
            return Err(Error::InvalidConfig(format!(
                "timing needs exactly four feature names, got {}",
                self.timing_feature_names.len()
            )));
        }
        let mut numerical = Vec::new();
        let mut categorical = Vec::new();
        for name in &self.timing_feature_names {
            if let Some(i) = self.numerical_index(name) {
                numerical.push(i);
            } else if let Some(i) = self.categorical_index(name) {
                categorical.push(i);
            } else {
                return Err(Error::InvalidConfig(format!(
                    "timing feature `{name}` is not declared"
                )));
            }
        }
        if numerical.len() != 1 || categorical.len() != 3 {
            return Err(Error::InvalidConfig(
                "timing features must be one numerical and three categoricals".into(),
            ));
        }
        Ok(TimingColumns {
            numerical: numerical[0],
            categorical: [categorical[0], categorical[1], categorical[2]],
        })
    }

    pub fn categorical_index(&self, name: &str) -> Option<usize> {
        self.categorical.iter().position(|c| c.name == name)
    }

    pub fn numerical_index(&self, name: &str) -> Option<usize> {
        self.numerical.iter().position(|n| n == name)
    }

    pub fn n_categorical(&self) -> usize {
        self.categorical.len()
    }

    pub fn n_numerical(&self) -> usize {
        self.numerical.len()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.categorical.iter().map(|c| c.cardinality).collect()
    }

    /// SHA-256 over the canonical JSON form, hex encoded.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("schema serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let schema: Self = serde_json::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("schema file: {e}")))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }
}

impl Default for FeatureSchema {
    fn default() -> Self {
        Self::default_radar()
    }
}
