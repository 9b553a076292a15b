//! Seeded synthesis of adapters, for testing and benchmarking without real
//! fine-tuning artifacts.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adapters::manifest::{hex_sha256, AdapterManifest};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::memory::analytics::expand_summary;
use crate::moe::checkpoint::gen_expert;

/// How many experts the synthetic adapter fine-tunes per layer.
#[derive(Debug, Clone, PartialEq)]
pub enum AdapterShape {
    /// Exact per-layer counts (length must match the model's layer count).
    PerLayerCounts(Vec<u32>),
    /// Match a `(max, avg)` summary; the per-layer counts realize the
    /// summary exactly up to rounding, assigned to layers in seeded order.
    Summary { max: u32, avg: f64 },
    /// Hit a target sparsity `1 − avg/max` for a given per-layer maximum.
    TargetSparsity { max: u32, sparsity: f64 },
}

/// Deterministically synthesize one adapter: which experts each layer
/// fine-tunes, and fresh weights for them. Same `(seed, model, name, shape)`
/// always yields byte-identical output.
pub fn generate_synthetic_adapter(
    seed: u64,
    model: &ModelConfig,
    name: &str,
    shape: &AdapterShape,
) -> Result<(AdapterManifest, Vec<u8>)> {
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = resolve_counts(shape, model, &mut rng)?;

    let m = model.experts_per_layer;
    let mut per_layer = Vec::with_capacity(model.layers);
    for &count in &counts {
        if count as usize > m {
            return Err(Error::Input(format!(
                "cannot fine-tune {} of {} experts in a layer",
                count, m
            )));
        }
        let mut ids: Vec<u32> = rand::seq::index::sample(&mut rng, m, count as usize)
            .into_iter()
            .map(|i| i as u32)
            .collect();
        ids.sort_unstable();
        per_layer.push(ids);
    }

    let h = model.hidden_dim;
    let i = model.intermediate_dim;
    let in_scale = 1.0 / (h as f32).sqrt();
    let down_scale = 1.0 / (i as f32).sqrt();
    let mut weights = Vec::new();
    for ids in &per_layer {
        for _ in ids {
            weights.extend_from_slice(&gen_expert(&mut rng, h, i, in_scale, down_scale).to_bytes());
        }
    }

    let manifest = AdapterManifest {
        name: name.to_string(),
        base_model_fingerprint: model.fingerprint(),
        dtype: model.dtype,
        hidden_dim: h,
        intermediate_dim: i,
        per_layer,
        weights_sha256: Some(hex_sha256(&weights)),
    };
    Ok((manifest, weights))
}

fn resolve_counts(
    shape: &AdapterShape,
    model: &ModelConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<u32>> {
    match shape {
        AdapterShape::PerLayerCounts(counts) => {
            if counts.len() != model.layers {
                return Err(Error::Input(format!(
                    "{} per-layer counts for a {}-layer model",
                    counts.len(),
                    model.layers
                )));
            }
            Ok(counts.clone())
        }
        AdapterShape::Summary { max, avg } => {
            let mut counts = expand_summary(*max, *avg, model.layers)?;
            counts.shuffle(rng);
            Ok(counts)
        }
        AdapterShape::TargetSparsity { max, sparsity } => {
            if !(0.0..1.0).contains(sparsity) {
                return Err(Error::Input(format!(
                    "target sparsity {} outside [0, 1)",
                    sparsity
                )));
            }
            let avg = *max as f64 * (1.0 - sparsity);
            let mut counts = expand_summary(*max, avg, model.layers)?;
            counts.shuffle(rng);
            Ok(counts)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Dtype;
    use crate::memory::analytics::sparsity_factor;

    fn model() -> ModelConfig {
        ModelConfig {
            layers: 26,
            experts_per_layer: 64,
            top_k: 6,
            hidden_dim: 8,
            intermediate_dim: 4,
            dtype: Dtype::F32,
        }
    }

    #[test]
    fn synthesis_is_deterministic_per_seed() {
        let model = model();
        let shape = AdapterShape::Summary { max: 13, avg: 4.69 };
        let (m1, w1) = generate_synthetic_adapter(7, &model, "x", &shape).unwrap();
        let (m2, w2) = generate_synthetic_adapter(7, &model, "x", &shape).unwrap();
        let (m3, w3) = generate_synthetic_adapter(8, &model, "x", &shape).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(w1, w2);
        assert!(m1 != m3 || w1 != w3);
    }

    #[test]
    fn summary_targets_are_honored() {
        let model = model();
        let shape = AdapterShape::Summary { max: 13, avg: 4.69 };
        let (manifest, weights) = generate_synthetic_adapter(3, &model, "gt", &shape).unwrap();
        manifest.validate(&model).unwrap();
        manifest.check_weights(&weights).unwrap();
        assert_eq!(manifest.max_layer_count(), 13);
        let avg = manifest.total_experts() as f64 / 26.0;
        assert!((avg - 4.69).abs() < 0.02, "avg {}", avg);
        let s = sparsity_factor(&manifest.profile()).unwrap();
        assert!((s - 0.64).abs() < 0.01, "sparsity {}", s);
    }

    #[test]
    fn target_sparsity_is_hit_within_tolerance() {
        let model = model();
        for target in [0.0, 0.3, 0.64] {
            let shape = AdapterShape::TargetSparsity {
                max: 10,
                sparsity: target,
            };
            let (manifest, _) = generate_synthetic_adapter(11, &model, "s", &shape).unwrap();
            let s = sparsity_factor(&manifest.profile()).unwrap();
            assert!((s - target).abs() < 0.02, "target {} got {}", target, s);
        }
    }

    #[test]
    fn dense_target_saturates_every_layer() {
        let model = model();
        let shape = AdapterShape::TargetSparsity {
            max: 5,
            sparsity: 0.0,
        };
        let (manifest, _) = generate_synthetic_adapter(1, &model, "dense", &shape).unwrap();
        assert!(manifest.layer_counts().iter().all(|&c| c == 5));
    }

    #[test]
    fn ids_are_strictly_ascending_and_in_range() {
        let model = model();
        let shape = AdapterShape::PerLayerCounts(vec![3; 26]);
        let (manifest, _) = generate_synthetic_adapter(5, &model, "c", &shape).unwrap();
        for ids in &manifest.per_layer {
            assert_eq!(ids.len(), 3);
            assert!(ids.windows(2).all(|w| w[0] < w[1]));
            assert!(ids.iter().all(|&e| e < 64));
        }
    }
}
