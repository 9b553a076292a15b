//! Serving metrics: per-request latency records and their aggregation.
//!
//! Time-to-first-token (TTFT) spans request arrival to the first emitted
//! token. Time-per-output-token (TPOT) averages the decode interval over
//! `output_tokens − 1` steps and is therefore only defined for requests that
//! emit at least two tokens. Percentiles use the nearest-rank method.
//! Decode throughput is total output tokens over the makespan, where the
//! makespan runs from the clock origin (0) to the last completion — so
//! `throughput · makespan = total output tokens` holds by construction.

use serde::Serialize;

/// A request that ran to completion.
#[derive(Debug, Clone, Serialize)]
pub struct CompletedRequest {
    pub id: u64,
    /// `None` means the unmodified base model served it.
    pub adapter: Option<String>,
    pub arrival: f64,
    pub first_token_time: f64,
    pub finish_time: f64,
    pub prompt_tokens: u32,
    pub output_tokens: u32,
    /// The emitted token IDs, in order. Two serving paths agree on a request
    /// exactly when these sequences are identical.
    pub output_ids: Vec<u64>,
}

impl CompletedRequest {
    pub fn ttft(&self) -> f64 {
        self.first_token_time - self.arrival
    }

    /// Mean decode interval; `None` for single-token outputs.
    pub fn tpot(&self) -> Option<f64> {
        (self.output_tokens >= 2)
            .then(|| (self.finish_time - self.first_token_time) / (self.output_tokens - 1) as f64)
    }
}

/// A request refused at admission (its adapter was not loaded).
#[derive(Debug, Clone, Serialize)]
pub struct RejectedRequest {
    pub id: u64,
    pub adapter: Option<String>,
    pub arrival: f64,
    pub reason: String,
}

/// Nearest-rank percentile of an ascending-sorted, non-empty slice:
/// the value at rank `⌈p/100 · n⌉`.
pub fn percentile_nearest_rank(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty set");
    assert!(p > 0.0 && p <= 100.0, "percentile {} out of (0, 100]", p);
    let rank = (p / 100.0 * sorted.len() as f64).ceil() as usize;
    sorted[rank.max(1) - 1]
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LatencyStats {
    pub count: usize,
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
}

/// Aggregate a set of latency samples; `None` when there are none.
pub fn latency_stats(values: &[f64]) -> Option<LatencyStats> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(LatencyStats {
        count: sorted.len(),
        mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
        p50: percentile_nearest_rank(&sorted, 50.0),
        p95: percentile_nearest_rank(&sorted, 95.0),
        p99: percentile_nearest_rank(&sorted, 99.0),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsSummary {
    pub completed: usize,
    pub rejected: usize,
    pub total_output_tokens: u64,
    /// Clock origin (0) to the last completion.
    pub makespan: f64,
    /// `total_output_tokens / makespan`; 0 when nothing completed.
    pub decode_throughput: f64,
    pub ttft: Option<LatencyStats>,
    pub tpot: Option<LatencyStats>,
}

pub fn summarize(completed: &[CompletedRequest], rejected: usize) -> MetricsSummary {
    let total_output_tokens: u64 = completed.iter().map(|r| r.output_tokens as u64).sum();
    let makespan = completed
        .iter()
        .map(|r| r.finish_time)
        .fold(0.0_f64, f64::max);
    let ttfts: Vec<f64> = completed.iter().map(CompletedRequest::ttft).collect();
    let tpots: Vec<f64> = completed.iter().filter_map(CompletedRequest::tpot).collect();
    MetricsSummary {
        completed: completed.len(),
        rejected,
        total_output_tokens,
        makespan,
        decode_throughput: if makespan > 0.0 {
            total_output_tokens as f64 / makespan
        } else {
            0.0
        },
        ttft: latency_stats(&ttfts),
        tpot: latency_stats(&tpots),
    }
}
