//! The serving engine: continuous batching with chunked prefill over the
//! adapter registry, under a simulated or wall clock.
//!
//! Each step builds one mixed batch: every decoding request contributes one
//! token, then the remaining token budget goes to prompt chunks in FIFO
//! admission order. The whole batch runs through a single forward pass with
//! per-token adapter IDs and a snapshot of the expert maps, so lifecycle
//! changes between steps never tear a step in half.
//!
//! Under the simulated clock a step costs `base + per_token · tokens`
//! seconds and idle gaps jump straight to the next arrival, so results are
//! machine-independent and bit-reproducible. Under the wall clock the engine
//! runs as fast as possible: the trace's arrival times are ignored, requests
//! are admitted in trace order, and timestamps come from a monotonic timer —
//! that is the mode for measuring real multi-adapter overhead.
//!
//! Prompts are synthesized deterministically from the request ID and decode
//! feeds each emitted token back as the next input, so a request's full
//! output token sequence is a pure function of (request ID, prompt length,
//! adapter weights) — the engine invariant every equivalence test leans on.

use std::collections::VecDeque;
use std::time::Instant;

use serde::Serialize;

use crate::adapters::manifest::AdapterManifest;
use crate::adapters::registry::AdapterRegistry;
use crate::config::{ClockMode, EngineConfig};
use crate::error::{Error, Result};
use crate::moe::model::{
    forward_pass, next_token_id, pseudo_embed, splitmix64, BaseModel, PSEUDO_VOCAB,
};
use crate::reroute::{validate_adapter_ids, MapReroute};
use crate::serving::metrics::{summarize, CompletedRequest, MetricsSummary, RejectedRequest};
use crate::serving::workload::TraceRequest;

/// Deterministic synthetic prompt: `len` pseudo-token IDs derived from the
/// request ID alone, independent of arrival time or batch placement.
pub fn pseudo_prompt(request_id: u64, len: u32) -> Vec<u64> {
    let mut state = request_id.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0x5851_F42D_4C95_7F2D;
    (0..len).map(|_| splitmix64(&mut state) % PSEUDO_VOCAB).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    /// `done` prompt tokens already prefilled.
    Prefill { done: u32 },
    Decode,
}

#[derive(Debug)]
struct InFlightRequest {
    id: u64,
    adapter: Option<String>,
    aid: i32,
    arrival: f64,
    prompt: Vec<u64>,
    target_output: u32,
    output_ids: Vec<u64>,
    first_token_time: Option<f64>,
    phase: Phase,
}

/// What one engine step did.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StepReport {
    pub tokens: usize,
    pub decode_tokens: usize,
    pub prefill_tokens: usize,
    pub completed: usize,
    /// Clock reading at the end of the step.
    pub time: f64,
}

/// End-of-run accounting.
#[derive(Debug, Clone, Serialize)]
pub struct ServeReport {
    pub summary: MetricsSummary,
    pub steps: u64,
    pub tokens_processed: u64,
}

#[derive(Debug)]
pub struct ServingEngine {
    registry: AdapterRegistry,
    clock: ClockMode,
    now: f64,
    wall_origin: Option<Instant>,
    waiting: VecDeque<InFlightRequest>,
    active: Vec<InFlightRequest>,
    completed: Vec<CompletedRequest>,
    rejected: Vec<RejectedRequest>,
    steps: u64,
    tokens_processed: u64,
}

impl ServingEngine {
    pub fn new(cfg: EngineConfig, base: &BaseModel) -> Result<Self> {
        let clock = cfg.clock;
        Ok(ServingEngine {
            registry: AdapterRegistry::new(cfg, base)?,
            clock,
            now: 0.0,
            wall_origin: None,
            waiting: VecDeque::new(),
            active: Vec::new(),
            completed: Vec::new(),
            rejected: Vec::new(),
            steps: 0,
            tokens_processed: 0,
        })
    }

    pub fn registry(&self) -> &AdapterRegistry {
        &self.registry
    }

    /// Mutable registry access for lifecycle operations between steps.
    /// In-flight requests pin their adapter, so eviction mid-serve fails
    /// cleanly rather than corrupting running requests.
    pub fn registry_mut(&mut self) -> &mut AdapterRegistry {
        &mut self.registry
    }

    pub fn load_adapter(&mut self, manifest: &AdapterManifest, weights: &[u8]) -> Result<usize> {
        self.registry.load_adapter(manifest, weights)
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn queued(&self) -> usize {
        self.waiting.len() + self.active.len()
    }

    pub fn completed(&self) -> &[CompletedRequest] {
        &self.completed
    }

    pub fn rejected(&self) -> &[RejectedRequest] {
        &self.rejected
    }

    /// Admit one request. Returns `false` (after recording the rejection)
    /// if the request names an adapter that is not loaded.
    ///
    /// Under the simulated clock the request keeps its trace arrival time;
    /// under the wall clock its arrival is the moment of admission.
    pub fn submit(&mut self, req: &TraceRequest) -> Result<bool> {
        if req.prompt_tokens == 0 || req.output_tokens == 0 {
            return Err(Error::Input(format!(
                "request {} must have at least 1 prompt and 1 output token",
                req.id
            )));
        }
        let arrival = match self.clock {
            ClockMode::Simulated => req.arrival,
            ClockMode::Wall => self.wall_elapsed(),
        };
        let aid = match &req.adapter {
            None => -1,
            Some(name) => match self.registry.resolve(name) {
                Some(i) => i as i32,
                None => {
                    self.rejected.push(RejectedRequest {
                        id: req.id,
                        adapter: req.adapter.clone(),
                        arrival,
                        reason: format!("adapter '{name}' is not loaded"),
                    });
                    return Ok(false);
                }
            },
        };
        self.registry.begin_request(aid)?;
        self.waiting.push_back(InFlightRequest {
            id: req.id,
            adapter: req.adapter.clone(),
            aid,
            arrival,
            prompt: pseudo_prompt(req.id, req.prompt_tokens),
            target_output: req.output_tokens,
            output_ids: Vec::with_capacity(req.output_tokens as usize),
            first_token_time: None,
            phase: Phase::Prefill { done: 0 },
        });
        Ok(true)
    }

    /// Run one batching step. `Ok(None)` means there was nothing to do.
    pub fn step(&mut self) -> Result<Option<StepReport>> {
        let budget = self.registry.config().token_budget;

        // Decode tokens first: one per decoding request, always scheduled.
        let decode_rows: Vec<usize> = (0..self.active.len())
            .filter(|&i| self.active[i].phase == Phase::Decode)
            .collect();
        let mut remaining = budget.saturating_sub(decode_rows.len());

        // Remaining budget goes to prompt chunks in admission order:
        // in-progress prefills, then new admissions from the queue.
        let mut prefill_chunks: Vec<(usize, u32)> = Vec::new();
        for i in 0..self.active.len() {
            if remaining == 0 {
                break;
            }
            if let Phase::Prefill { done } = self.active[i].phase {
                let left = self.active[i].prompt.len() as u32 - done;
                let chunk = left.min(remaining as u32);
                prefill_chunks.push((i, chunk));
                remaining -= chunk as usize;
            }
        }
        while remaining > 0 {
            let Some(r) = self.waiting.pop_front() else { break };
            let idx = self.active.len();
            let chunk = (r.prompt.len() as u32).min(remaining as u32);
            self.active.push(r);
            prefill_chunks.push((idx, chunk));
            remaining -= chunk as usize;
        }

        let prefill_tokens: usize = prefill_chunks.iter().map(|&(_, c)| c as usize).sum();
        let total = decode_rows.len() + prefill_tokens;
        if total == 0 {
            return Ok(None);
        }

        // One mixed batch: decode rows, then prefill chunks.
        let mut token_ids = Vec::with_capacity(total);
        let mut row_aids = Vec::with_capacity(total);
        for &i in &decode_rows {
            let r = &self.active[i];
            token_ids.push(*r.output_ids.last().expect("decoding request has output"));
            row_aids.push(r.aid);
        }
        for &(i, chunk) in &prefill_chunks {
            let r = &self.active[i];
            let Phase::Prefill { done } = r.phase else { unreachable!() };
            for j in done..done + chunk {
                token_ids.push(r.prompt[j as usize]);
                row_aids.push(r.aid);
            }
        }
        validate_adapter_ids(&row_aids, self.registry.config().max_adapters)?;

        let hidden = self.registry.config().model.hidden_dim;
        let tokens = pseudo_embed(&token_ids, hidden);
        let hook = MapReroute::new(self.registry.snapshot_maps());
        let out = forward_pass(&self.registry, &hook, &tokens, &row_aids)?;

        match self.clock {
            ClockMode::Simulated => {
                let cfg = self.registry.config();
                self.now += cfg.step_base_cost + cfg.step_token_cost * total as f64;
            }
            ClockMode::Wall => self.now = self.wall_elapsed(),
        }
        let t_end = self.now;

        // Apply outputs. Decode rows come first in the batch.
        let mut finished = vec![false; self.active.len()];
        let mut row = 0;
        for &i in &decode_rows {
            let tok = next_token_id(out.row(row));
            row += 1;
            let r = &mut self.active[i];
            r.output_ids.push(tok);
            if r.output_ids.len() as u32 == r.target_output {
                finished[i] = true;
            }
        }
        for &(i, chunk) in &prefill_chunks {
            let r = &mut self.active[i];
            let Phase::Prefill { done } = r.phase else { unreachable!() };
            let new_done = done + chunk;
            if new_done as usize == r.prompt.len() {
                // The last prompt token's output row is the first generated
                // token; decode continues from it next step.
                let tok = next_token_id(out.row(row + chunk as usize - 1));
                r.output_ids.push(tok);
                r.first_token_time = Some(t_end);
                r.phase = Phase::Decode;
                if r.target_output == 1 {
                    finished[i] = true;
                }
            } else {
                r.phase = Phase::Prefill { done: new_done };
            }
            row += chunk as usize;
        }

        // Retire finished requests, preserving admission order of the rest.
        let completed_now = finished.iter().filter(|&&f| f).count();
        if completed_now > 0 {
            let old = std::mem::take(&mut self.active);
            for (i, r) in old.into_iter().enumerate() {
                if finished[i] {
                    self.registry.end_request(r.aid);
                    self.completed.push(CompletedRequest {
                        id: r.id,
                        adapter: r.adapter,
                        arrival: r.arrival,
                        first_token_time: r
                            .first_token_time
                            .expect("finished request has a first token"),
                        finish_time: t_end,
                        prompt_tokens: r.prompt.len() as u32,
                        output_tokens: r.output_ids.len() as u32,
                        output_ids: r.output_ids,
                    });
                } else {
                    self.active.push(r);
                }
            }
        }

        self.steps += 1;
        self.tokens_processed += total as u64;
        Ok(Some(StepReport {
            tokens: total,
            decode_tokens: decode_rows.len(),
            prefill_tokens,
            completed: completed_now,
            time: t_end,
        }))
    }

    /// Serve a whole trace to completion and summarize.
    ///
    /// Simulated clock: arrivals are honored (the trace must be sorted by
    /// arrival time) and idle gaps jump to the next arrival. Wall clock:
    /// every request is admitted immediately in trace order and the engine
    /// runs flat out.
    pub fn run_trace(&mut self, trace: &[TraceRequest]) -> Result<ServeReport> {
        match self.clock {
            ClockMode::Simulated => {
                if !trace.windows(2).all(|w| w[0].arrival <= w[1].arrival) {
                    return Err(Error::Input(
                        "trace must be sorted by arrival time".into(),
                    ));
                }
                let mut next = 0;
                loop {
                    while next < trace.len() && trace[next].arrival <= self.now {
                        self.submit(&trace[next])?;
                        next += 1;
                    }
                    if self.active.is_empty() && self.waiting.is_empty() {
                        if next < trace.len() {
                            self.now = self.now.max(trace[next].arrival);
                            continue;
                        }
                        break;
                    }
                    self.step()?;
                }
            }
            ClockMode::Wall => {
                for r in trace {
                    self.submit(r)?;
                }
                while self.step()?.is_some() {}
            }
        }
        Ok(self.report())
    }

    pub fn report(&self) -> ServeReport {
        ServeReport {
            summary: summarize(&self.completed, self.rejected.len()),
            steps: self.steps,
            tokens_processed: self.tokens_processed,
        }
    }

    fn wall_elapsed(&mut self) -> f64 {
        let origin = *self.wall_origin.get_or_insert_with(Instant::now);
        origin.elapsed().as_secs_f64()
    }
}
