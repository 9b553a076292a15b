//! Proving the multi-adapter path produces bit-identical outputs to
//! per-adapter merged models.
//!
//! The ground truth for "adapter correctness" is a merged model: take the
//! base checkpoint and substitute each fine-tuned expert in place. Serving
//! N adapters from one shared base is only safe if every request's output
//! matches what its own merged model would have produced - to the last
//! bit, since both paths run the same f32 arithmetic in the same order.
//!
//! The example verifies a healthy registry, then corrupts one expert's
//! weights and shows the checker catching it and naming the first layer
//! where activations diverge.
//!
//! Run with: `cargo run --release --example merged_equivalence`

use moeserve::adapters::{generate_synthetic_adapter, AdapterRegistry, AdapterShape};
use moeserve::config::{ClockMode, Dtype, EngineConfig, ModelConfig, PageConfig};
use moeserve::moe::gen_base_model;
use moeserve::serving::{verify_equivalence, VerifyOptions};

fn main() -> moeserve::Result<()> {
    let cfg = EngineConfig {
        model: ModelConfig {
            layers: 4,
            experts_per_layer: 16,
            top_k: 4,
            hidden_dim: 32,
            intermediate_dim: 16,
            dtype: Dtype::F32,
        },
        page: PageConfig {
            page_size: 4096,
            pool_capacity_pages: 8192,
        },
        max_adapters: 3,
        max_adapter_experts: 3,
        token_budget: 256,
        step_base_cost: 1e-3,
        step_token_cost: 1e-5,
        clock: ClockMode::Simulated,
        seed: 0,
    };
    let base = gen_base_model(&cfg.model, 21)?;

    let mut registry = AdapterRegistry::new(cfg.clone(), &base)?;
    let mut adapters = Vec::new();
    for i in 0..3u64 {
        let (manifest, weights) = generate_synthetic_adapter(
            300 + i,
            &cfg.model,
            &format!("tenant-{i}"),
            &AdapterShape::Summary { max: 3, avg: 2.0 },
        )?;
        registry.load_adapter(&manifest, &weights)?;
        adapters.push((manifest, weights));
    }

    // Mixed batches: every row randomly carries one of the three adapters
    // or no adapter, and each row is compared against its own reference.
    let opts = VerifyOptions { cases: 150, max_batch: 12, seed: 5 };
    let report = verify_equivalence(&registry, &base, &adapters, &opts)?;
    println!(
        "healthy registry: {} cases, {} rows checked, {} mismatches",
        report.cases,
        report.rows_checked,
        report.mismatches.len()
    );
    assert!(report.ok());

    // Now forge one adapter: flip one weight byte in its first expert.
    let (manifest, weights) = &mut adapters[1];
    weights[8] ^= 0x01;
    manifest.weights_sha256 = None; // skip the hash gate to reach the math
    registry.evict_by_name("tenant-1")?;
    registry.load_adapter(manifest, weights)?;
    // The references are rebuilt from the *original* generator output, so
    // re-verifying compares forged serving weights against honest ones.
    let honest: Vec<_> = (0..3u64)
        .map(|i| {
            generate_synthetic_adapter(
                300 + i,
                &cfg.model,
                &format!("tenant-{i}"),
                &AdapterShape::Summary { max: 3, avg: 2.0 },
            )
        })
        .collect::<moeserve::Result<_>>()?;

    let report = verify_equivalence(&registry, &base, &honest, &opts)?;
    println!(
        "forged weights: {} mismatching rows out of {}",
        report.mismatches.len(),
        report.rows_checked
    );
    assert!(!report.ok());
    let first = &report.mismatches[0];
    println!(
        "first mismatch: case {}, row {}, adapter {:?}, diverges at layer {:?}, max |diff| {:.3e}",
        first.case, first.row, first.adapter, first.first_diverging_layer, first.max_abs_diff
    );
    println!(
        "a single flipped mantissa bit in one expert weight is enough: only rows that\n\
         routed through that expert diverge, and the comparison is bitwise so even a\n\
         ~1e-8 drift is flagged."
    );
    Ok(())
}
