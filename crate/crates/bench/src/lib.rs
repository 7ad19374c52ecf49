//! Shared fixtures for the criterion benches.

use vad_core::attention::{draw_feature_map, AttentionBundle, FeatureMapParams};
use vad_core::backbone::{Model, ModelConfig};
use vad_core::seeding::rng;
use vad_core::tensor::Tensor;

/// Seeded noise tensor, uniform in [-1, 1].
pub fn noise(shape: &[usize], seed: u64) -> Tensor<f32> {
    use rand::Rng;
    let mut r = rng(seed, 0xBE);
    Tensor::from_fn(shape, |_| r.random::<f32>() * 2.0 - 1.0)
}

/// Query/key/value triple of length `l` and width `c`.
pub fn bundle(l: usize, c: usize) -> AttentionBundle<f32> {
    AttentionBundle::new(noise(&[l, c], 1), noise(&[l, c], 2), noise(&[l, c], 3))
        .expect("bench bundle")
}

/// Orthogonal feature map for width `c` with `m` features.
pub fn feature_map(c: usize, m: usize) -> FeatureMapParams<f32> {
    draw_feature_map(c, m, 7, true)
}

/// Small-preset model and a matching input clip.
pub fn fast_model_and_clip() -> (Model<f32>, Tensor<f32>) {
    let cfg = ModelConfig::fast();
    let clip = noise(&cfg.input_shape, 11);
    let model = Model::init(cfg, 13).expect("bench model");
    (model, clip)
}
