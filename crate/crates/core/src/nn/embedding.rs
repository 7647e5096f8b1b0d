use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Params;
use crate::error::{Error, Result};

/// One scalar embedding per value of each categorical feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingLayer {
    pub tables: Vec<Vec<f64>>,
}

impl EmbeddingLayer {
    pub fn new<R: Rng + ?Sized>(cardinalities: &[usize], rng: &mut R) -> Self {
        let tables = cardinalities
            .iter()
            .map(|&l| {
                let limit = (6.0 / (l + 1) as f64).sqrt();
                (0..l).map(|_| rng.random_range(-limit..limit)).collect()
            })
            .collect();
        Self { tables }
    }

    pub fn features(&self) -> usize {
        self.tables.len()
    }

    pub fn forward(&self, values: &[usize]) -> Result<Vec<f64>> {
        if values.len() != self.tables.len() {
            return Err(Error::ShapeMismatch(format!(
                "embedding expects {} categoricals, got {}",
                self.tables.len(),
                values.len()
            )));
        }
        values
            .iter()
            .zip(&self.tables)
            .map(|(&v, table)| {
                table.get(v).copied().ok_or(Error::IndexOutOfRange {
                    index: v,
                    len: table.len(),
                })
            })
            .collect()
    }

    /// Writes embeddings into `out[..features]` without bounds reporting.
    pub fn forward_into(&self, values: &[usize], out: &mut [f64]) {
        for ((o, &v), table) in out.iter_mut().zip(values).zip(&self.tables) {
            *o = table[v];
        }
    }

    pub fn zero_grads(&self) -> EmbeddingGrads {
        EmbeddingGrads {
            tables: self.tables.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn backward(&self, values: &[usize], d_out: &[f64], grads: &mut EmbeddingGrads) {
        for ((&v, &d), g) in values.iter().zip(d_out).zip(grads.tables.iter_mut()) {
            g[v] += d;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingGrads {
    pub tables: Vec<Vec<f64>>,
}

impl Params for EmbeddingLayer {
    fn tensors(&self) -> Vec<&[f64]> {
        self.tables.iter().map(Vec::as_slice).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.tables.iter_mut().map(Vec::as_mut_slice).collect()
    }
}

impl Params for EmbeddingGrads {
    fn tensors(&self) -> Vec<&[f64]> {
        self.tables.iter().map(Vec::as_slice).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.tables.iter_mut().map(Vec::as_mut_slice).collect()
    }
}
