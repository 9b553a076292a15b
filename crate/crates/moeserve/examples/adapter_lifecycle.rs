//! Loading, serving against, and evicting adapters at runtime.
//!
//! The registry owns the slot space: base experts occupy slots `[0, M)` in
//! every layer, and adapter `i` owns the fixed window starting at
//! `M + i * E_max`. Loading backs only the slots an adapter actually uses
//! per layer, publishes new expert-map rows, and eviction reverses all of
//! it - unless requests are still in flight, which pins the adapter.
//!
//! Run with: `cargo run --example adapter_lifecycle`

use moeserve::adapters::{generate_synthetic_adapter, AdapterRegistry, AdapterShape};
use moeserve::config::{ClockMode, Dtype, EngineConfig, ModelConfig, PageConfig};
use moeserve::moe::gen_base_model;

fn main() -> moeserve::Result<()> {
    let cfg = EngineConfig {
        model: ModelConfig {
            layers: 3,
            experts_per_layer: 8,
            top_k: 2,
            hidden_dim: 16,
            intermediate_dim: 8,
            dtype: Dtype::F32,
        },
        page: PageConfig {
            page_size: 1024,
            pool_capacity_pages: 256,
        },
        max_adapters: 2,
        max_adapter_experts: 3,
        token_budget: 64,
        step_base_cost: 1e-3,
        step_token_cost: 2e-5,
        clock: ClockMode::Simulated,
        seed: 0,
    };
    let base = gen_base_model(&cfg.model, 1)?;
    let mut registry = AdapterRegistry::new(cfg.clone(), &base)?;
    println!(
        "base resident: {} pages across {} layers",
        registry.mapped_pages(),
        cfg.model.layers
    );

    // Two adapters with different per-layer footprints.
    let (math, math_w) = generate_synthetic_adapter(
        11,
        &cfg.model,
        "math",
        &AdapterShape::PerLayerCounts(vec![2, 0, 3]),
    )?;
    let (law, law_w) = generate_synthetic_adapter(
        12,
        &cfg.model,
        "law",
        &AdapterShape::Summary { max: 2, avg: 1.5 },
    )?;
    let math_id = registry.load_adapter(&math, &math_w)?;
    let law_id = registry.load_adapter(&law, &law_w)?;
    println!(
        "loaded 'math' as adapter {math_id} (slots from {}), 'law' as adapter {law_id} (slots from {})",
        registry.slot_base(math_id),
        registry.slot_base(law_id)
    );
    println!("pages now: {} ({:?})", registry.mapped_pages(), registry.pool_stats());

    // The expert map of each layer shows where routed experts were sent.
    for layer in 0..cfg.model.layers {
        let map = registry.map_layer(layer);
        let remapped: Vec<String> = (0..cfg.model.experts_per_layer)
            .filter(|&e| map.get(math_id, e) != e as u32)
            .map(|e| format!("{e}->{}", map.get(math_id, e)))
            .collect();
        println!("  layer {layer}: 'math' remaps [{}]", remapped.join(", "));
    }

    // A request in flight pins its adapter.
    registry.begin_request(math_id as i32)?;
    match registry.evict_adapter(math_id) {
        Err(e) => println!("evicting 'math' while serving it: refused ({e})"),
        Ok(()) => unreachable!("eviction must be refused"),
    }
    registry.end_request(math_id as i32);

    // After the request finishes, eviction frees the pages...
    let before = registry.mapped_pages();
    registry.evict_adapter(math_id)?;
    println!(
        "evicted 'math': {} -> {} pages, map rows back to identity: {}",
        before,
        registry.mapped_pages(),
        registry.map_layer(0).row(math_id).iter().enumerate().all(|(e, &s)| s == e as u32)
    );

    // ...and a reload reuses them without creating new ones.
    let created = registry.pool_stats().created;
    registry.load_adapter(&math, &math_w)?;
    println!(
        "reloaded 'math': pool created stayed at {} (pure reuse)",
        created
    );
    assert_eq!(registry.pool_stats().created, created);
    Ok(())
}
