//! Fragmentation analytics: how much memory the padded expert layout wastes
//! and how much of it page-granular on-demand mapping gets back.
//!
//! Inputs are adapter *profiles*: either exact per-layer fine-tuned expert
//! counts or a `(max, avg)` summary of them. A bundled set of ten reference
//! profiles — real expert-specialized fine-tunes over a 26-MoE-layer,
//! 64-expert base model, spanning math, intent, summarization, law, and
//! translation tasks — serves as the standard input for reports and tests.

use serde::{Deserialize, Serialize};

use crate::config::{Dtype, ModelConfig, PageConfig};
use crate::error::{Error, Result};
use crate::memory::vtensor::pages_for_range;

/// Per-layer fine-tuned expert counts, exact or summarized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpertCounts {
    /// One count per layer.
    PerLayer(Vec<u32>),
    /// Maximum over layers and mean across layers.
    Summary { max: u32, avg: f64 },
}

impl ExpertCounts {
    /// Largest per-layer count.
    pub fn max(&self) -> u32 {
        match self {
            ExpertCounts::PerLayer(counts) => counts.iter().copied().max().unwrap_or(0),
            ExpertCounts::Summary { max, .. } => *max,
        }
    }

    /// Mean count across layers.
    pub fn avg(&self) -> f64 {
        match self {
            ExpertCounts::PerLayer(counts) => {
                if counts.is_empty() {
                    0.0
                } else {
                    counts.iter().map(|&c| c as f64).sum::<f64>() / counts.len() as f64
                }
            }
            ExpertCounts::Summary { avg, .. } => *avg,
        }
    }
}

/// An adapter's shape as the analytics see it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterProfile {
    pub name: String,
    pub counts: ExpertCounts,
}

impl AdapterProfile {
    pub fn per_layer(name: &str, counts: Vec<u32>) -> Self {
        AdapterProfile {
            name: name.to_string(),
            counts: ExpertCounts::PerLayer(counts),
        }
    }

    pub fn summary(name: &str, max: u32, avg: f64) -> Self {
        AdapterProfile {
            name: name.to_string(),
            counts: ExpertCounts::Summary { max, avg },
        }
    }

    /// Exact per-layer counts, expanding a summary canonically if necessary.
    pub fn layer_counts(&self, layers: usize) -> Result<Vec<u32>> {
        match &self.counts {
            ExpertCounts::PerLayer(counts) => {
                if counts.len() != layers {
                    return Err(Error::Input(format!(
                        "profile '{}' has {} layer counts, model has {} layers",
                        self.name,
                        counts.len(),
                        layers
                    )));
                }
                Ok(counts.clone())
            }
            ExpertCounts::Summary { max, avg } => expand_summary(*max, *avg, layers),
        }
    }
}

/// Normalized gap between each layer's expert count and the adapter's
/// per-layer maximum: `Σ_l (max − e_l) / (layers · max)`, equivalently
/// `1 − avg/max`. 0 means every layer is saturated at the maximum.
pub fn sparsity_factor(profile: &AdapterProfile) -> Result<f64> {
    let max = profile.counts.max();
    if max == 0 {
        return Err(Error::Input(format!(
            "profile '{}' fine-tunes no experts; sparsity undefined",
            profile.name
        )));
    }
    Ok(1.0 - profile.counts.avg() / max as f64)
}

/// Allocated-over-used ratio of the fully padded layout:
/// `(M + N·E_max) / (M + Σ_i avg_i)`. The per-layer double sum reduces to
/// the per-adapter averages exactly, so summaries lose nothing here.
pub fn fragmentation_factor(
    profiles: &[AdapterProfile],
    experts_per_layer: usize,
    e_max: u32,
) -> Result<f64> {
    check_e_max_feasible(profiles, e_max)?;
    let m = experts_per_layer as f64;
    let used: f64 = profiles.iter().map(|p| p.counts.avg()).sum();
    Ok((m + profiles.len() as f64 * e_max as f64) / (m + used))
}

/// Smallest E_max that admits every profile: the largest per-layer count
/// across all of them.
pub fn min_feasible_e_max(profiles: &[AdapterProfile]) -> u32 {
    profiles.iter().map(|p| p.counts.max()).max().unwrap_or(0)
}

fn check_e_max_feasible(profiles: &[AdapterProfile], e_max: u32) -> Result<()> {
    for p in profiles {
        if p.counts.max() > e_max {
            return Err(Error::Input(format!(
                "profile '{}' needs {} experts in some layer but E_max is {}; padding infeasible",
                p.name,
                p.counts.max(),
                e_max
            )));
        }
    }
    Ok(())
}

/// Deterministic expansion of a `(max, avg)` summary into per-layer counts:
/// layer 0 carries the maximum, the rounded remainder spreads as evenly as
/// possible over the other layers (larger counts first). Seedless, so every
/// consumer of the same summary sees the same layer shape.
pub fn expand_summary(max: u32, avg: f64, layers: usize) -> Result<Vec<u32>> {
    if layers == 0 {
        return Err(Error::Input("cannot expand a summary over 0 layers".into()));
    }
    if avg > max as f64 {
        return Err(Error::Input(format!(
            "summary avg {} exceeds max {}",
            avg, max
        )));
    }
    let total = (avg * layers as f64).round() as i64;
    let max = max as i64;
    if total < max {
        return Err(Error::Input(format!(
            "summary (max {}, avg {}) infeasible over {} layers: total {} < max",
            max, avg, layers, total
        )));
    }
    if layers == 1 {
        return Ok(vec![max as u32]);
    }
    let rest = layers as i64 - 1;
    let remaining = total - max;
    let base = remaining / rest;
    let extra = (remaining % rest) as usize;
    if base + 1 > max && extra > 0 || base > max {
        return Err(Error::Input(format!(
            "summary (max {}, avg {}) infeasible: spreading needs counts above max",
            max, avg
        )));
    }
    let mut out = Vec::with_capacity(layers);
    out.push(max as u32);
    for l in 0..rest as usize {
        out.push(if l < extra { base as u32 + 1 } else { base as u32 });
    }
    Ok(out)
}

/// Byte accounting one adapter set would produce, without touching a pool.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DryRunReport {
    pub layers: usize,
    pub page_size: usize,
    pub expert_size_bytes: usize,
    /// What the padded layout reserves for adapters: `L · N · E_max ·
    /// expert_size`.
    pub padded_bytes: u64,
    /// What on-demand mapping backs beyond the base region: page size times
    /// the page cover of all adapter ranges, minus pages already covered by
    /// the base region.
    pub mapped_bytes: u64,
    /// The pages behind `mapped_bytes`.
    pub pages_mapped: u64,
    /// Memory handed back for other uses (KV cache, in a full system):
    /// `padded_bytes − mapped_bytes`.
    pub kv_budget_delta: u64,
    /// `1 − mapped/padded`.
    pub savings_ratio: f64,
    pub per_adapter: Vec<AdapterAccounting>,
}

/// One adapter's share of the dry run, counted independently (a boundary
/// page shared with a neighbor counts for both).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdapterAccounting {
    pub name: String,
    pub sparsity: f64,
    pub mapped_pages: u64,
}

/// Simulate loading every profile into the slot layout `[M + N·E_max]` and
/// count the pages that would be backed, at page granularity, per layer.
pub fn dry_run_accounting(
    profiles: &[AdapterProfile],
    model: &ModelConfig,
    page: &PageConfig,
    e_max: u32,
) -> Result<DryRunReport> {
    model.validate()?;
    page.validate()?;
    check_e_max_feasible(profiles, e_max)?;
    let layers = model.layers;
    let expert_size = model.expert_size_bytes();
    let page_size = page.page_size;
    let m = model.experts_per_layer;
    let n = profiles.len();

    let counts: Vec<Vec<u32>> = profiles
        .iter()
        .map(|p| p.layer_counts(layers))
        .collect::<Result<_>>()?;

    let base_end = m * expert_size;
    // Base pages are contiguous from page 0; any adapter page past the last
    // base page is an extra mapped page.
    let base_cover_end = pages_for_range(0, base_end, page_size).end;

    let mut pages_mapped = 0u64;
    let mut per_adapter_pages = vec![0u64; n];
    let mut page_set = std::collections::BTreeSet::new();
    for l in 0..layers {
        page_set.clear();
        for (i, adapter_counts) in counts.iter().enumerate() {
            let e = adapter_counts[l] as usize;
            let delta = m + i * e_max as usize;
            let start = delta * expert_size;
            let end = start + e * expert_size;
            let cover = pages_for_range(start, end, page_size);
            per_adapter_pages[i] += cover.len() as u64;
            page_set.extend(cover);
        }
        pages_mapped += page_set.iter().filter(|&&p| p >= base_cover_end).count() as u64;
    }

    let padded_bytes = (layers * n * e_max as usize * expert_size) as u64;
    let mapped_bytes = pages_mapped * page_size as u64;
    let savings_ratio = if padded_bytes == 0 {
        0.0
    } else {
        1.0 - mapped_bytes as f64 / padded_bytes as f64
    };
    let per_adapter = profiles
        .iter()
        .zip(per_adapter_pages)
        .map(|(p, pages)| {
            Ok(AdapterAccounting {
                name: p.name.clone(),
                sparsity: sparsity_factor(p)?,
                mapped_pages: pages,
            })
        })
        .collect::<Result<_>>()?;

    Ok(DryRunReport {
        layers,
        page_size,
        expert_size_bytes: expert_size,
        padded_bytes,
        mapped_bytes,
        pages_mapped,
        kv_budget_delta: padded_bytes.saturating_sub(mapped_bytes),
        savings_ratio,
        per_adapter,
    })
}

/// The ten bundled reference adapter profiles: `(max, avg)` expert counts of
/// real expert-specialized fine-tunes over the reference base model, two per
/// task domain.
pub fn reference_profiles() -> Vec<AdapterProfile> {
    [
        ("gate-math", 12, 7.04),
        ("token-math", 9, 6.12),
        ("gate-intent", 12, 9.50),
        ("token-intent", 8, 7.12),
        ("gate-summary", 11, 7.73),
        ("token-summary", 8, 5.15),
        ("gate-law", 12, 7.35),
        ("token-law", 10, 6.58),
        ("gate-translation", 13, 4.69),
        ("token-translation", 6, 3.85),
    ]
    .into_iter()
    .map(|(name, max, avg)| AdapterProfile::summary(name, max, avg))
    .collect()
}

/// Shape of the reference base model the bundled profiles were measured on:
/// a 16B-class MoE with 26 MoE layers of 64 experts (top-6), expert FFNs of
/// 2048×1408, served in a 16-bit dtype. One expert is exactly 8.25 pages at
/// the default 2 MiB page size.
pub fn reference_model_config() -> ModelConfig {
    ModelConfig {
        layers: 26,
        experts_per_layer: 64,
        top_k: 6,
        hidden_dim: 2048,
        intermediate_dim: 1408,
        dtype: Dtype::Bf16,
    }
}
