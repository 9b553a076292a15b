//! Memory analytics for a fleet of expert-specialized adapters.
//!
//! Serving many adapters over one MoE base model forces a layout decision:
//! pad every adapter to a fixed per-layer expert capacity (simple, but
//! wasteful when adapters use far fewer experts in most layers), or map
//! expert weights onto physical pages on demand. This example runs the
//! built-in reference adapter set through both accountings and prints what
//! on-demand paging gives back.
//!
//! Run with: `cargo run --example analyze_fragmentation`

use moeserve::config::{PageConfig, DEFAULT_PAGE_SIZE};
use moeserve::memory::{
    dry_run_accounting, fragmentation_factor, min_feasible_e_max, reference_model_config,
    reference_profiles, sparsity_factor,
};

fn main() -> moeserve::Result<()> {
    let profiles = reference_profiles();
    let model = reference_model_config();

    // Expert sparsity: 1 - avg/max over layers. A high value means the
    // adapter concentrates its fine-tuned experts in a few layers, so a
    // layout padded to the busiest layer mostly holds air.
    println!("per-adapter expert usage (busiest layer vs mean layer):");
    for p in &profiles {
        println!(
            "  {:<20} max {:>2}  avg {:>5.2}  sparsity {:.3}",
            p.name,
            p.counts.max(),
            p.counts.avg(),
            sparsity_factor(p)?
        );
    }

    // The padded layout must reserve the worst-case expert count per
    // adapter per layer. Its fragmentation factor is allocated/used.
    let e_max = min_feasible_e_max(&profiles);
    let f = fragmentation_factor(&profiles, model.experts_per_layer, e_max)?;
    println!(
        "\npadded layout with E_max = {e_max}: {f:.4}x the memory actually used"
    );

    // Dry-run the paged layout: count the physical pages a demand-mapped
    // slot space would back, at real page granularity, and compare.
    let page = PageConfig {
        page_size: DEFAULT_PAGE_SIZE,
        pool_capacity_pages: 0, // capacity is irrelevant for accounting
    };
    let report = dry_run_accounting(&profiles, &model, &page, e_max)?;
    println!(
        "expert size {} B, page size {} B ({} pages per expert group)",
        report.expert_size_bytes,
        report.page_size,
        report.pages_mapped
    );
    println!(
        "padded adapter region: {:>13} B",
        report.padded_bytes
    );
    println!(
        "demand-mapped pages:   {:>13} B  ({:.1}% saved)",
        report.mapped_bytes,
        report.savings_ratio * 100.0
    );
    println!(
        "returned to the KV-cache budget: {} B",
        report.kv_budget_delta
    );
    Ok(())
}
