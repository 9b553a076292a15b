//! Equivalence verification: the multi-adapter serving path against merged
//! single-adapter models.
//!
//! For an adapter, the *merged model* is the base model with each fine-tuned
//! expert substituted in place at its original expert ID — the dedicated
//! single-model deployment the shared path must be indistinguishable from.
//! Because every kernel in the forward path is bit-deterministic and
//! per-token independent, the shared path must match the merged model
//! *bit for bit*, not approximately; any drift is a routing or mapping bug,
//! and the verifier triages it to the first diverging layer.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::adapters::manifest::AdapterManifest;
use crate::adapters::registry::AdapterRegistry;
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::moe::expert::ExpertWeights;
use crate::moe::model::{
    forward_pass, forward_pass_traced, pseudo_embed, BaseModel, IdentityReroute, PSEUDO_VOCAB,
};
use crate::reroute::MapReroute;

/// Base model with one adapter's experts substituted in place.
pub fn build_merged(
    base: &BaseModel,
    manifest: &AdapterManifest,
    weights: &[u8],
) -> Result<BaseModel> {
    manifest.validate(&base.config)?;
    manifest.check_weights(weights)?;
    let mut merged = base.clone();
    let h = base.config.hidden_dim;
    let i_dim = base.config.intermediate_dim;
    for (layer, ids) in manifest.per_layer.iter().enumerate() {
        for (idx, &expert_id) in ids.iter().enumerate() {
            let blob = manifest.expert_blob(weights, layer, idx);
            merged.experts[layer][expert_id as usize] = ExpertWeights::from_bytes(blob, h, i_dim)?;
        }
    }
    Ok(merged)
}

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    /// Number of randomized batches to check.
    pub cases: usize,
    /// Batch sizes are drawn from `1..=max_batch`.
    pub max_batch: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            cases: 200,
            max_batch: 16,
            seed: 0,
        }
    }
}

/// One row where the two paths disagreed.
#[derive(Debug, Clone, Serialize)]
pub struct VerifyMismatch {
    pub case: usize,
    pub row: usize,
    pub adapter: Option<String>,
    /// First layer whose post-residual hidden state differs, if the traced
    /// re-run reproduced the divergence.
    pub first_diverging_layer: Option<usize>,
    pub max_abs_diff: f32,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub cases: usize,
    pub rows_checked: usize,
    pub mismatches: Vec<VerifyMismatch>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.mismatches.is_empty()
    }
}

fn rows_equal_bitwise(a: &[f32], b: &[f32]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Check the shared serving path against merged models over randomized
/// mixed batches. `adapters` pairs each loaded adapter's manifest with its
/// weights; every adapter must already be loaded in `registry`.
pub fn verify_equivalence(
    registry: &AdapterRegistry,
    base: &BaseModel,
    adapters: &[(AdapterManifest, Vec<u8>)],
    opts: &VerifyOptions,
) -> Result<VerifyReport> {
    if opts.cases == 0 || opts.max_batch == 0 {
        return Err(Error::Input("verification needs cases ≥ 1 and batches ≥ 1".into()));
    }
    // aid -> (name, merged model); index 0 stands for the base model.
    let mut references: Vec<(i32, Option<String>, BaseModel)> =
        vec![(-1, None, base.clone())];
    for (manifest, weights) in adapters {
        let aid = registry.resolve(&manifest.name).ok_or_else(|| {
            Error::Usage(format!("adapter '{}' is not loaded", manifest.name))
        })? as i32;
        references.push((aid, Some(manifest.name.clone()), build_merged(base, manifest, weights)?));
    }

    let hidden = base.config.hidden_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut mismatches = Vec::new();
    let mut rows_checked = 0;
    for case in 0..opts.cases {
        let batch = rng.random_range(1..=opts.max_batch);
        let token_ids: Vec<u64> =
            (0..batch).map(|_| rng.random_range(0..PSEUDO_VOCAB)).collect();
        let choice: Vec<usize> =
            (0..batch).map(|_| rng.random_range(0..references.len())).collect();
        let aids: Vec<i32> = choice.iter().map(|&c| references[c].0).collect();
        let tokens = pseudo_embed(&token_ids, hidden);
        let hook = MapReroute::new(registry.snapshot_maps());
        let served = forward_pass(registry, &hook, &tokens, &aids)?;

        // Reference: each reference model runs its own sub-batch. Row
        // independence makes sub-batching exact, so any difference from the
        // full served batch is a real divergence.
        for (c, (_, name, model)) in references.iter().enumerate() {
            let rows: Vec<usize> = (0..batch).filter(|&t| choice[t] == c).collect();
            if rows.is_empty() {
                continue;
            }
            let sub_ids: Vec<u64> = rows.iter().map(|&t| token_ids[t]).collect();
            let sub_tokens = pseudo_embed(&sub_ids, hidden);
            let expect = forward_pass(model, &IdentityReroute, &sub_tokens, &vec![-1; rows.len()])?;
            for (sub_row, &t) in rows.iter().enumerate() {
                rows_checked += 1;
                if rows_equal_bitwise(served.row(t), expect.row(sub_row)) {
                    continue;
                }
                mismatches.push(triage(
                    registry, model, &hook, case, t, name.clone(),
                    token_ids[t], aids[t],
                    served.row(t), expect.row(sub_row),
                )?);
            }
        }
    }
    Ok(VerifyReport {
        cases: opts.cases,
        rows_checked,
        mismatches,
    })
}

#[allow(clippy::too_many_arguments)]
fn triage(
    registry: &AdapterRegistry,
    reference: &BaseModel,
    hook: &MapReroute,
    case: usize,
    row: usize,
    adapter: Option<String>,
    token_id: u64,
    aid: i32,
    served_row: &[f32],
    expect_row: &[f32],
) -> Result<VerifyMismatch> {
    let hidden = reference.config.hidden_dim;
    let tokens = pseudo_embed(&[token_id], hidden);
    let (_, served_trace) = forward_pass_traced(registry, hook, &tokens, &[aid])?;
    let (_, expect_trace) = forward_pass_traced(reference, &IdentityReroute, &tokens, &[-1])?;
    let first_diverging_layer = served_trace
        .iter()
        .zip(&expect_trace)
        .position(|(a, b): (&Mat, &Mat)| !rows_equal_bitwise(a.row(0), b.row(0)));
    let max_abs_diff = served_row
        .iter()
        .zip(expect_row)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0_f32, f32::max);
    Ok(VerifyMismatch {
        case,
        row,
        adapter,
        first_diverging_layer,
        max_abs_diff,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::synth::{generate_synthetic_adapter, AdapterShape};
    use crate::config::{ClockMode, Dtype, EngineConfig, ModelConfig, PageConfig};
    use crate::moe::checkpoint::gen_base_model;

    fn toy_setup() -> (EngineConfig, BaseModel) {
        let cfg = EngineConfig {
            model: ModelConfig {
                layers: 3,
                experts_per_layer: 6,
                top_k: 2,
                hidden_dim: 8,
                intermediate_dim: 4,
                dtype: Dtype::F32,
            },
            page: PageConfig {
                page_size: 256,
                pool_capacity_pages: 1024,
            },
            max_adapters: 3,
            max_adapter_experts: 3,
            token_budget: 64,
            step_base_cost: 1e-3,
            step_token_cost: 2e-5,
            clock: ClockMode::Simulated,
            seed: 0,
        };
        let base = gen_base_model(&cfg.model, 21).unwrap();
        (cfg, base)
    }

    #[test]
    fn merged_model_substitutes_exactly_the_finetuned_experts() {
        let (cfg, base) = toy_setup();
        let (manifest, weights) = generate_synthetic_adapter(
            3,
            &cfg.model,
            "a",
            &AdapterShape::PerLayerCounts(vec![2, 0, 1]),
        )
        .unwrap();
        let merged = build_merged(&base, &manifest, &weights).unwrap();
        for layer in 0..3 {
            for e in 0..6 {
                let tuned = manifest.per_layer[layer].iter().position(|&x| x == e as u32);
                match tuned {
                    Some(idx) => {
                        let expect = ExpertWeights::from_bytes(
                            manifest.expert_blob(&weights, layer, idx),
                            8,
                            4,
                        )
                        .unwrap();
                        assert_eq!(merged.experts[layer][e], expect);
                        assert_ne!(merged.experts[layer][e], base.experts[layer][e]);
                    }
                    None => assert_eq!(merged.experts[layer][e], base.experts[layer][e]),
                }
            }
        }
        assert_eq!(merged.routers[0], base.routers[0], "routers must not change");
    }

    #[test]
    fn shared_path_matches_merged_models_bit_for_bit() {
        let (cfg, base) = toy_setup();
        let mut registry = AdapterRegistry::new(cfg.clone(), &base).unwrap();
        let mut adapters = Vec::new();
        for (i, counts) in [vec![2, 1, 0], vec![1, 3, 2]].into_iter().enumerate() {
            let (m, w) = generate_synthetic_adapter(
                40 + i as u64,
                &cfg.model,
                &format!("adapter-{i}"),
                &AdapterShape::PerLayerCounts(counts),
            )
            .unwrap();
            registry.load_adapter(&m, &w).unwrap();
            adapters.push((m, w));
        }
        let report = verify_equivalence(
            &registry,
            &base,
            &adapters,
            &VerifyOptions {
                cases: 120,
                max_batch: 12,
                seed: 5,
            },
        )
        .unwrap();
        assert!(report.ok(), "mismatches: {:?}", report.mismatches);
        assert!(report.rows_checked >= 120);
    }

    #[test]
    fn wrong_weights_are_caught_and_triaged() {
        let (cfg, base) = toy_setup();
        let mut registry = AdapterRegistry::new(cfg.clone(), &base).unwrap();
        let shape = AdapterShape::PerLayerCounts(vec![3, 3, 3]);
        let (manifest, weights) =
            generate_synthetic_adapter(7, &cfg.model, "a", &shape).unwrap();
        registry.load_adapter(&manifest, &weights).unwrap();
        // The reference gets different weights for the same expert IDs, so
        // the shared path (serving the real weights) must diverge.
        let (_, other_weights) =
            generate_synthetic_adapter(8, &cfg.model, "a", &shape).unwrap();
        let mut forged = manifest.clone();
        forged.weights_sha256 = None;
        let report = verify_equivalence(
            &registry,
            &base,
            &[(forged, other_weights)],
            &VerifyOptions {
                cases: 60,
                max_batch: 8,
                seed: 6,
            },
        )
        .unwrap();
        assert!(!report.ok(), "forged weights went undetected");
        let m = &report.mismatches[0];
        assert!(m.first_diverging_layer.is_some());
        assert!(m.max_abs_diff > 0.0);
    }

    #[test]
    fn unloaded_adapter_is_a_usage_error() {
        let (cfg, base) = toy_setup();
        let registry = AdapterRegistry::new(cfg.clone(), &base).unwrap();
        let (m, w) = generate_synthetic_adapter(
            3,
            &cfg.model,
            "ghost",
            &AdapterShape::PerLayerCounts(vec![1, 1, 1]),
        )
        .unwrap();
        let err = verify_equivalence(&registry, &base, &[(m, w)], &VerifyOptions::default());
        assert!(err.is_err());
    }
}
