//! Serving: workload synthesis, the continuous-batching engine, metrics,
//! merged-model equivalence verification, and the overhead benchmark.

pub mod bench;
pub mod engine;
pub mod metrics;
pub mod verify;
pub mod workload;

pub use bench::{bench_overhead, OverheadBenchOptions, OverheadRecord};
pub use engine::{pseudo_prompt, ServeReport, ServingEngine, StepReport};
pub use metrics::{
    latency_stats, percentile_nearest_rank, summarize, CompletedRequest, LatencyStats,
    MetricsSummary, RejectedRequest,
};
pub use verify::{
    build_merged, verify_equivalence, VerifyMismatch, VerifyOptions, VerifyReport,
};
pub use workload::{
    adapter_name, gen_workload, load_trace, power_law_shares, save_trace, TraceRequest,
    WorkloadSpec,
};
