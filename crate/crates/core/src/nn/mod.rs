//! Minimal neural computation engine: exactly the layers, losses and
//! optimizer the two detectors need, on 64-bit reals.

pub mod adam;
pub mod dense;
pub mod embedding;
pub mod gradcheck;
pub mod loss;
pub mod lstm;
pub mod matrix;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use dense::{dense_backward, Activation, DenseGrads, DenseLayer};
pub use embedding::{EmbeddingGrads, EmbeddingLayer};
pub use gradcheck::{grad_check, Differentiable, GradCheckReport};
pub use loss::{mse, scce, softmax};
pub use lstm::{LstmCell, LstmGrads, LstmTrace};
pub use matrix::Matrix;

/// Ordered view over the parameter (or gradient) tensors of a model.
pub trait Params {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn zero(&mut self) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn flatten(&self) -> Vec<Vec<f64>> {
        self.tensors().iter().map(|t| t.to_vec()).collect()
    }
}

/// Seeded generator used for every stochastic choice in training.
pub type SeededRng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}
