//! Fixtures for the criterion benchmarks under `benches/`.

use radarnomaly::eval::ExperimentConfig;
use radarnomaly::model_file::{train_models, ModelFile};
use radarnomaly::synth::default_corpus;
use radarnomaly::{FeatureSchema, SessionStore};

/// The default corpus and a model trained on it for a few epochs. Weight
/// quality does not change scoring cost, so a short schedule suffices.
pub fn fixture() -> (SessionStore, ModelFile) {
    let store = default_corpus(42);
    let mut config = ExperimentConfig::default();
    config.train.max_epochs = 3;
    let trained = train_models(&store, &FeatureSchema::default_radar(), &config).expect("default corpus trains");
    (store, trained.file)
}
