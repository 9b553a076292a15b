//! Token rerouting: translating the router's base expert IDs into serving
//! slot IDs through the per-layer expert map, per token.
//!
//! Two implementations of the same function live here. The fused kernel
//! ([`batched_reroute`]) exploits the map's extended layout — an identity
//! row prepended at index 0 — to do the whole job as one gather per
//! assignment, with no per-token branching. The reference multi-pass path
//! ([`multipass_reroute`]) composes the operation the way a generic array
//! framework would: broadcast row offsets, gather, then select base tokens
//! back out. They must agree bit-for-bit on every input; the benchmark
//! ([`bench_reroute`]) measures what the fusion buys.

use std::sync::Arc;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::adapters::map::ExpertMapLayer;
use crate::error::{Error, Result};
use crate::moe::model::RerouteHook;

/// Check one AID per token: `-1` (base) or `[0, num_adapters)`.
///
/// Callers validate a batch once up front; the kernels themselves assume
/// valid IDs and index unchecked into the map rows (safe indexing — a bad
/// ID found here never reaches them).
pub fn validate_adapter_ids(adapter_ids: &[i32], num_adapters: usize) -> Result<()> {
    for &aid in adapter_ids {
        if aid < -1 || aid >= num_adapters as i32 {
            return Err(Error::Input(format!(
                "adapter ID {} outside -1..{}",
                aid, num_adapters
            )));
        }
    }
    Ok(())
}

/// Fused rerouting: one gather per (token, k) assignment.
///
/// `expert_ids` is flattened `[tokens, top_k]`; `adapter_ids` has one entry
/// per token. Appends `expert_ids.len()` slot IDs to `out`.
pub fn batched_reroute(
    map: &ExpertMapLayer,
    expert_ids: &[u32],
    adapter_ids: &[i32],
    top_k: usize,
    out: &mut Vec<u32>,
) {
    debug_assert_eq!(expert_ids.len(), adapter_ids.len() * top_k);
    let table = map.extended_table();
    let m = map.num_base();
    out.reserve(expert_ids.len());
    for (t, &aid) in adapter_ids.iter().enumerate() {
        // Row 0 of the extended table is identity, so AID −1 needs no branch.
        let row = (aid + 1) as usize * m;
        for &e in &expert_ids[t * top_k..(t + 1) * top_k] {
            out.push(table[row + e as usize]);
        }
    }
}

/// Reference rerouting as three separate array passes: broadcast per-token
/// row offsets, gather from the logical `[N, M]` table, then select the
/// original IDs back for base tokens. Semantically identical to
/// [`batched_reroute`]; materializes two intermediates per batch.
pub fn multipass_reroute(
    map: &ExpertMapLayer,
    expert_ids: &[u32],
    adapter_ids: &[i32],
    top_k: usize,
    out: &mut Vec<u32>,
) {
    debug_assert_eq!(expert_ids.len(), adapter_ids.len() * top_k);
    let m = map.num_base();
    if map.num_adapters() == 0 {
        // The logical table is empty; every token is necessarily base.
        out.extend_from_slice(expert_ids);
        return;
    }
    let logical = &map.extended_table()[m..];

    // Pass 1: broadcast each token's row offset over its top-k assignments.
    let mut offsets = Vec::with_capacity(expert_ids.len());
    for &aid in adapter_ids {
        let row = aid.max(0) as usize * m;
        offsets.extend(std::iter::repeat_n(row, top_k));
    }

    // Pass 2: gather candidate slots (garbage for base tokens, fixed next).
    let mut gathered = Vec::with_capacity(expert_ids.len());
    for (&off, &e) in offsets.iter().zip(expert_ids) {
        gathered.push(logical[off + e as usize]);
    }

    // Pass 3: select — base tokens keep their original expert IDs.
    out.reserve(expert_ids.len());
    for (i, &g) in gathered.iter().enumerate() {
        let aid = adapter_ids[i / top_k];
        out.push(if aid < 0 { expert_ids[i] } else { g });
    }
}

/// [`RerouteHook`] over a snapshot of per-layer expert maps, using the fused
/// kernel. This is what the serving engine plugs into the forward pass.
pub struct MapReroute {
    maps: Vec<Arc<ExpertMapLayer>>,
}

impl MapReroute {
    pub fn new(maps: Vec<Arc<ExpertMapLayer>>) -> Self {
        MapReroute { maps }
    }

    pub fn layer(&self, layer: usize) -> &Arc<ExpertMapLayer> {
        &self.maps[layer]
    }
}

impl RerouteHook for MapReroute {
    fn reroute(
        &self,
        layer: usize,
        expert_ids: &[u32],
        adapter_ids: &[i32],
        top_k: usize,
        out: &mut Vec<u32>,
    ) -> Result<()> {
        batched_reroute(&self.maps[layer], expert_ids, adapter_ids, top_k, out);
        Ok(())
    }
}

/// One batch size's timing in the fused-versus-multipass sweep.
#[derive(Debug, Clone, Serialize)]
pub struct RerouteBenchRecord {
    pub batch: usize,
    pub fused_ns_per_token: f64,
    pub multipass_ns_per_token: f64,
    /// `fused / multipass`; below 1.0 means the fused kernel is cheaper.
    pub ratio: f64,
}

/// Time both kernels over randomized (expert, adapter) assignments at each
/// batch size. Each measurement is the best of `repeats` timed repetitions
/// of enough iterations to amortize clock overhead.
pub fn bench_reroute(
    map: &ExpertMapLayer,
    top_k: usize,
    batches: &[usize],
    repeats: usize,
    seed: u64,
) -> Vec<RerouteBenchRecord> {
    let mut rng = StdRng::seed_from_u64(seed);
    let m = map.num_base() as u32;
    let n = map.num_adapters() as i32;
    let mut records = Vec::with_capacity(batches.len());
    for &batch in batches {
        let expert_ids: Vec<u32> =
            (0..batch * top_k).map(|_| rng.random_range(0..m)).collect();
        let adapter_ids: Vec<i32> =
            (0..batch).map(|_| rng.random_range(-1..n.max(0))).collect();
        // Aim for ~1 ms of work per repetition so Instant jitter washes out.
        let iters = (200_000 / batch.max(1)).max(1);
        let mut out = Vec::with_capacity(batch * top_k);

        // Checked equal once per batch size; the timed loops assume it.
        let mut fused_out = Vec::new();
        let mut multi_out = Vec::new();
        batched_reroute(map, &expert_ids, &adapter_ids, top_k, &mut fused_out);
        multipass_reroute(map, &expert_ids, &adapter_ids, top_k, &mut multi_out);
        assert_eq!(fused_out, multi_out, "kernels diverged at batch {}", batch);

        macro_rules! best_ns_per_token {
            ($kernel:path) => {{
                let mut best = f64::INFINITY;
                for _ in 0..repeats.max(1) {
                    let start = Instant::now();
                    for _ in 0..iters {
                        out.clear();
                        $kernel(map, &expert_ids, &adapter_ids, top_k, &mut out);
                    }
                    let ns = start.elapsed().as_nanos() as f64;
                    best = best.min(ns / (iters * batch) as f64);
                }
                best
            }};
        }
        let fused = best_ns_per_token!(batched_reroute);
        let multipass = best_ns_per_token!(multipass_reroute);
        records.push(RerouteBenchRecord {
            batch,
            fused_ns_per_token: fused,
            multipass_ns_per_token: multipass,
            ratio: fused / multipass,
        });
    }
    records
}
