//! Multi-adapter serving for expert-specialized MoE fine-tunes over a shared
//! base model.
//!
//! An expert-specialized adapter replaces a task-specific subset of the
//! experts in a Mixture-of-Experts model while the router and everything else
//! stay frozen. Serving many such adapters from one process means the expert
//! weight tensor has to hold the base model's experts plus a variable number
//! of fine-tuned experts per adapter per layer, and every routed token has to
//! land on the right copy.
//!
//! This crate implements that serving path at desk scale, device-agnostic:
//!
//! - [`moe`] — a small but real MoE forward path: top-k router, token
//!   dispatch, grouped expert FFN, weighted combine. Deliberately unaware of
//!   adapters.
//! - [`memory`] — a virtual weight tensor per layer backed on demand by a
//!   fixed-size page pool, with per-page reference counts so neighboring
//!   expert ranges can share straddled pages. Also the fragmentation
//!   analytics for the padded layout it replaces.
//! - [`adapters`] — adapter manifests, slot assignment, the per-layer expert
//!   map that sends (adapter, base expert) to its serving slot, and the
//!   load/evict lifecycle.
//! - [`reroute`] — the batched rerouting operator that rewrites router-emitted
//!   expert IDs into virtual slot IDs at token granularity, plus the naive
//!   multi-pass composition it is benchmarked against.
//! - [`serving`] — continuous batching with chunked prefill over simulated or
//!   wall-clock time, workload generation, latency metrics, and the
//!   merged-model equivalence checker.
//!
//! The correctness bar throughout is bit-exactness: serving a batch that
//! mixes adapters must produce, token for token, the same 32-bit float
//! outputs as running each request against its own merged model.
//!
//! See the crate examples for runnable walkthroughs of each capability, and
//! the `moeserve` binary for the non-interactive command-line front end.

pub mod adapters;
pub mod config;
pub mod error;
pub mod mat;
pub mod memory;
pub mod moe;
pub mod reroute;
pub mod serving;

pub use config::{Dtype, EngineConfig, ModelConfig, PageConfig};
pub use error::{Error, Result};
