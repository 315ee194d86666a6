//! Shared fixtures for the criterion benchmarks.

use exitnet::rng::seeded;
use exitnet::signal::SEGMENT_LEN;
use exitnet::{Model, ModelConfig, Tensor, Variant};

/// A `[n, 1, T]` batch of deterministic multi-tone inputs.
pub fn input_batch(n: usize) -> Tensor<f32> {
    Tensor::from_fn(&[n, 1, SEGMENT_LEN], |i| {
        let t = (i % SEGMENT_LEN) as f32 / 250.0;
        let k = (i / SEGMENT_LEN) as f32;
        (2.0 * std::f32::consts::PI * (10.0 + k) * t).sin() + 0.3 * (2.0 * std::f32::consts::PI * 3.0 * t).cos()
    })
}

pub fn model(variant: Variant) -> Model {
    Model::build(ModelConfig::default().with_variant(variant), &mut seeded(0)).expect("default config is valid")
}
