//! Fused single-gather rerouting vs. the naive multi-pass rewrite.
//!
//! After the router picks base expert IDs, tokens carrying an adapter must
//! have those IDs rewritten to the adapter's slots. The naive version runs
//! three passes over the batch (broadcast offsets, gather from a logical
//! table, select for adapter-less rows). The fused version prepends an
//! identity row to the map so one branch-free gather at row `aid + 1`
//! does the whole job. This example checks they agree and times both.
//!
//! Run with: `cargo run --release --example rerouting_sweep`

use std::sync::Arc;

use moeserve::adapters::ExpertMapLayer;
use moeserve::reroute::{batched_reroute, bench_reroute, multipass_reroute};

fn main() -> moeserve::Result<()> {
    let m = 64;
    let top_k = 6;

    // A map with three adapters, each remapping a few experts.
    let mut map = ExpertMapLayer::identity(m, 3);
    map = map.with_row(0, m, &[3, 17])?;
    map = map.with_row(1, m + 8, &[3, 40, 41])?;
    map = map.with_row(2, m + 16, &[0])?;
    let map = Arc::new(map);

    // Worked single-token case: adapter 1 selected experts {3, 5, 40, 60}.
    let experts = [3u32, 5, 40, 60];
    let aids = [1i32];
    let mut fused = Vec::new();
    let mut naive = Vec::new();
    batched_reroute(&map, &experts, &aids, 4, &mut fused);
    multipass_reroute(&map, &experts, &aids, 4, &mut naive);
    println!("adapter 1 maps 3->{}, 40->{}, 41->{}", map.get(1, 3), map.get(1, 40), map.get(1, 41));
    println!("routed {:?} with adapter 1 => fused {:?}, naive {:?}", experts, fused, naive);
    assert_eq!(fused, naive);

    // Base traffic (aid = -1) passes through untouched by both kernels.
    let base_aids = [-1i32];
    fused.clear();
    naive.clear();
    batched_reroute(&map, &experts, &base_aids, 4, &mut fused);
    multipass_reroute(&map, &experts, &base_aids, 4, &mut naive);
    assert_eq!(fused, experts.to_vec());
    assert_eq!(naive, experts.to_vec());
    println!("base traffic passes through unchanged: {:?}", fused);

    // Timing sweep over batch sizes. Each record also re-asserts equality
    // on the random batch it timed.
    println!("\n{:>8} {:>16} {:>18} {:>8}", "batch", "fused ns/token", "multipass ns/token", "ratio");
    let batches: Vec<usize> = (0..=13).map(|p| 1usize << p).collect();
    for rec in bench_reroute(&map, top_k, &batches, 3, 7) {
        println!(
            "{:>8} {:>16.2} {:>18.2} {:>8.3}",
            rec.batch, rec.fused_ns_per_token, rec.multipass_ns_per_token, rec.ratio
        );
    }
    println!("\nratio < 1 means the fused gather is cheaper per token.");
    Ok(())
}
