//! Token dispatch and weighted combine around the grouped expert FFN.
//!
//! Dispatch is a stable counting sort of the flattened `(token, k)` pairs by
//! slot ID: every pair destined for the same slot lands in one contiguous
//! group, groups are ordered by ascending slot, and within a group pairs keep
//! their original batch order. The inverse permutation lets the combine step
//! find each pair's expert output again without searching.

use crate::mat::Mat;

/// One contiguous run of permuted rows, all belonging to the same slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotGroup {
    pub slot: u32,
    pub start: usize,
    pub len: usize,
}

/// Result of dispatching a batch: a permutation of the flattened
/// `(token, k)` index space grouped by slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutedTokens {
    /// `perm[p]` is the flattened `token * top_k + k` index placed at
    /// permuted position `p`.
    pub perm: Vec<u32>,
    /// Inverse: `inverse[f]` is the permuted position of flattened index `f`.
    pub inverse: Vec<u32>,
    /// Non-empty groups in ascending slot order; their spans tile
    /// `0..perm.len()` exactly.
    pub groups: Vec<SlotGroup>,
}

/// Stable counting sort of `slot_ids` (flattened `[tokens, top_k]`).
///
/// `num_slots` bounds the slot ID space; IDs are debug-asserted against it.
pub fn dispatch(slot_ids: &[u32], num_slots: usize) -> PermutedTokens {
    let n = slot_ids.len();
    let mut counts = vec![0u32; num_slots];
    for &s in slot_ids {
        debug_assert!((s as usize) < num_slots, "slot {} out of {}", s, num_slots);
        counts[s as usize] += 1;
    }

    let mut groups = Vec::new();
    let mut cursor = vec![0u32; num_slots];
    let mut start = 0usize;
    for (slot, &c) in counts.iter().enumerate() {
        if c > 0 {
            groups.push(SlotGroup {
                slot: slot as u32,
                start,
                len: c as usize,
            });
            cursor[slot] = start as u32;
            start += c as usize;
        }
    }

    let mut perm = vec![0u32; n];
    let mut inverse = vec![0u32; n];
    for (f, &s) in slot_ids.iter().enumerate() {
        let p = cursor[s as usize];
        cursor[s as usize] += 1;
        perm[p as usize] = f as u32;
        inverse[f] = p;
    }

    PermutedTokens {
        perm,
        inverse,
        groups,
    }
}

/// Gather token hidden states into permuted order: row `p` of the result is
/// the hidden state of the token that owns flattened pair `perm[p]`.
pub fn gather_rows(x: &Mat, permuted: &PermutedTokens, top_k: usize) -> Mat {
    let mut out = Mat::zeros(permuted.perm.len(), x.cols());
    for (p, &f) in permuted.perm.iter().enumerate() {
        let t = f as usize / top_k;
        out.row_mut(p).copy_from_slice(x.row(t));
    }
    out
}

/// Weighted combine of per-pair expert outputs back into `[tokens, hidden]`.
///
/// For each token the k contributions are accumulated in ascending k, each
/// element left to right, so the result is independent of how dispatch
/// grouped the batch.
pub fn combine(
    expert_out: &Mat,
    weights: &[f32],
    inverse: &[u32],
    num_tokens: usize,
    top_k: usize,
) -> Mat {
    let hidden = expert_out.cols();
    let mut out = Mat::zeros(num_tokens, hidden);
    for t in 0..num_tokens {
        let row = out.row_mut(t);
        for k in 0..top_k {
            let f = t * top_k + k;
            let w = weights[f];
            let src = expert_out.row(inverse[f] as usize);
            for (o, s) in row.iter_mut().zip(src.iter()) {
                *o += w * *s;
            }
        }
    }
    out
}
