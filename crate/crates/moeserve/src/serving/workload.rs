//! Synthetic request workloads: power-law adapter popularity with Poisson
//! arrivals, serialized as JSONL traces.
//!
//! Adapter `i` (1-based) of `N` receives the share `(i/N)^α − ((i−1)/N)^α`
//! of the total request rate. The shares sum to 1 exactly, are descending,
//! and `α = 1` degenerates to uniform; smaller `α` concentrates traffic on
//! the first adapters. Each adapter's arrivals form an independent Poisson
//! process (exponential inter-arrival times) on its own deterministic
//! sub-seeded stream, so a trace is a pure function of `(spec, seed)` —
//! byte-identical across runs and machines.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moe::model::splitmix64;

/// One request in a trace. `adapter = None` targets the base model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRequest {
    pub id: u64,
    pub arrival: f64,
    pub adapter: Option<String>,
    pub prompt_tokens: u32,
    pub output_tokens: u32,
}

/// Canonical name of the `i`-th synthetic adapter (0-based).
pub fn adapter_name(i: usize) -> String {
    format!("adapter-{i}")
}

/// Power-law popularity shares: `share_i = (i/N)^α − ((i−1)/N)^α` for
/// `i = 1..=N`. Descending, strictly positive, summing to 1.
pub fn power_law_shares(num_adapters: usize, alpha: f64) -> Result<Vec<f64>> {
    if num_adapters == 0 {
        return Err(Error::Input("popularity needs at least one adapter".into()));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Input(format!(
            "power-law exponent must be finite and positive, got {alpha}"
        )));
    }
    let n = num_adapters as f64;
    Ok((1..=num_adapters)
        .map(|i| (i as f64 / n).powf(alpha) - ((i - 1) as f64 / n).powf(alpha))
        .collect())
}

/// Everything that defines a workload besides the seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub num_adapters: usize,
    /// Power-law popularity exponent.
    pub alpha: f64,
    /// Total request rate across all adapters, requests per second.
    pub rate: f64,
    /// Arrival window in seconds; requests arrive in `[0, duration)`.
    pub duration: f64,
    /// Inclusive prompt length range.
    pub prompt_len: (u32, u32),
    /// Inclusive output length range.
    pub output_len: (u32, u32),
}

impl WorkloadSpec {
    pub fn new(num_adapters: usize, alpha: f64, rate: f64, duration: f64) -> Self {
        WorkloadSpec {
            num_adapters,
            alpha,
            rate,
            duration,
            prompt_len: (32, 256),
            output_len: (16, 128),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0) || !(self.duration > 0.0) {
            return Err(Error::Input(
                "workload rate and duration must be positive".into(),
            ));
        }
        for (label, (lo, hi)) in [("prompt", self.prompt_len), ("output", self.output_len)] {
            if lo == 0 || lo > hi {
                return Err(Error::Input(format!(
                    "{label} length range [{lo}, {hi}] must be non-empty and start at 1+"
                )));
            }
        }
        Ok(())
    }
}

/// Independent deterministic stream per (seed, index).
fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut s = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    splitmix64(&mut s)
}

/// Generate the trace for `(spec, seed)`: one Poisson process per adapter,
/// merged in arrival order, IDs assigned along the merged order.
pub fn gen_workload(spec: &WorkloadSpec, seed: u64) -> Result<Vec<TraceRequest>> {
    spec.validate()?;
    let shares = power_law_shares(spec.num_adapters, spec.alpha)?;
    let mut requests: Vec<(usize, TraceRequest)> = Vec::new();
    for (i, share) in shares.iter().enumerate() {
        let rate = spec.rate * share;
        if rate <= 0.0 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, i as u64));
        let exp = Exp::new(rate)
            .map_err(|e| Error::Input(format!("bad arrival rate {rate}: {e}")))?;
        let mut t = 0.0;
        loop {
            t += exp.sample(&mut rng);
            if t >= spec.duration {
                break;
            }
            requests.push((
                i,
                TraceRequest {
                    id: 0, // assigned after the merge
                    arrival: t,
                    adapter: Some(adapter_name(i)),
                    prompt_tokens: rng.random_range(spec.prompt_len.0..=spec.prompt_len.1),
                    output_tokens: rng.random_range(spec.output_len.0..=spec.output_len.1),
                },
            ));
        }
    }
    // Arrival times within one stream are strictly increasing; across
    // streams, ties (never in practice) break by adapter index.
    requests.sort_by(|(ia, a), (ib, b)| a.arrival.total_cmp(&b.arrival).then(ia.cmp(ib)));
    Ok(requests
        .into_iter()
        .enumerate()
        .map(|(id, (_, mut r))| {
            r.id = id as u64;
            r
        })
        .collect())
}

/// Write a trace as JSONL: one request object per line.
pub fn save_trace(path: &Path, trace: &[TraceRequest]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in trace {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Read a JSONL trace; blank lines are ignored.
pub fn load_trace(path: &Path) -> Result<Vec<TraceRequest>> {
    let mut trace = Vec::new();
    for (lineno, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: TraceRequest = serde_json::from_str(&line).map_err(|e| {
            Error::Input(format!("trace line {}: {}", lineno + 1, e))
        })?;
        trace.push(r);
    }
    Ok(trace)
}
