//! Shared fixtures for the benchmarks.

use mosare::alignment::ClassGmms;
use mosare::encoders::EncodedInputs;
use mosare::{generate_synthetic, Dataset, Model, RunConfig, SyntheticSpec};

/// A model at its initial parameters together with prepared inputs.
pub struct Fixture {
    pub dataset: Dataset,
    pub config: RunConfig,
    pub model: Model,
    pub inputs: Vec<EncodedInputs>,
    pub labels: Vec<usize>,
    pub gmms: ClassGmms,
}

/// Default-sized synthetic data (3 classes, `per_class` samples each, D = 32).
pub fn fixture(per_class: usize) -> Fixture {
    let dataset = generate_synthetic(&SyntheticSpec {
        samples_per_class: per_class,
        ..Default::default()
    })
    .expect("synthetic data");
    let config = RunConfig::default();
    let model = Model::for_training(config.clone(), 3, dataset.manifest.dim, &dataset.records).expect("model");
    let inputs = model.prepare_all(&dataset.records).expect("inputs");
    let labels = dataset.labels();
    let gmms = ClassGmms::init_kmeans(model.embed(&inputs).view(), &labels, 3, config.align.m_comp, 0)
        .expect("class mixtures");
    Fixture {
        dataset,
        config,
        model,
        inputs,
        labels,
        gmms,
    }
}
