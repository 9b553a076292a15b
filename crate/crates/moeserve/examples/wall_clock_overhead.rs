//! Measuring the real-time cost of multi-adapter serving.
//!
//! For each adapter count N, the same request trace is served twice on the
//! wall clock: once with adapters loaded and requests routed through them,
//! and once with the same requests stripped of adapters and served by the
//! bare base model. The ratio of median time-per-output-token (TPOT)
//! answers "what does tenant isolation cost?" - the slot-table gather is
//! the only extra work per token, so the ratio should stay near 1.
//!
//! Run with: `cargo run --release --example wall_clock_overhead`

use moeserve::config::{ClockMode, Dtype, EngineConfig, ModelConfig, PageConfig};
use moeserve::moe::gen_base_model;
use moeserve::serving::{bench_overhead, OverheadBenchOptions};

fn main() -> moeserve::Result<()> {
    let cfg = EngineConfig {
        model: ModelConfig {
            layers: 2,
            experts_per_layer: 8,
            top_k: 2,
            hidden_dim: 16,
            intermediate_dim: 8,
            dtype: Dtype::F32,
        },
        page: PageConfig {
            page_size: 4096,
            pool_capacity_pages: 1 << 16,
        },
        max_adapters: 12,
        max_adapter_experts: 2,
        token_budget: 128,
        step_base_cost: 0.0,
        step_token_cost: 0.0,
        clock: ClockMode::Wall,
        seed: 0,
    };
    let base = gen_base_model(&cfg.model, 3)?;

    let opts = OverheadBenchOptions {
        requests: 48,
        repeats: 3,
        seed: 9,
        ..OverheadBenchOptions::default()
    };
    println!("serving the same trace with and without adapters, N = 0, 2, 6, 12:");
    println!(
        "{:>4} {:>10} {:>16} {:>16} {:>12} {:>8}",
        "N", "requests", "adapter TPOT", "base TPOT", "tokens/s", "ratio"
    );
    for rec in bench_overhead(&cfg, &base, &[0, 2, 6, 12], &opts)? {
        println!(
            "{:>4} {:>10} {:>13.2}us {:>13.2}us {:>12.0} {:>8.3}",
            rec.num_adapters,
            rec.completed,
            rec.median_tpot * 1e6,
            rec.base_median_tpot * 1e6,
            rec.decode_throughput,
            rec.tpot_ratio
        );
    }
    println!("\nN = 0 serves one arm and reports ratio 1 by definition; the other rows");
    println!("compare two real runs, so small timing noise moves them around 1.0.");
    Ok(())
}
