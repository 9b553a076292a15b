//! Paged physical memory and the virtual expert weight tensor.
//!
//! The weight tensor the MoE kernels index is *virtual*: per layer, a flat
//! byte space of `num_slots * expert_size` addresses, where slots
//! `[0, M)` hold the base experts and each adapter slot `i` owns the fixed
//! region starting at `M + i * E_max`. Only slots that actually hold a loaded
//! expert are backed by physical pages from a shared fixed-size pool; the
//! padding that makes the address arithmetic uniform costs no memory.
//!
//! Pages are reference-counted per *virtual page*, not per slot, because an
//! expert's byte range rarely ends on a page boundary: the page straddling
//! two neighboring experts stays backed until both are gone.
//!
//! [`analytics`] quantifies what this buys: adapter sparsity, the
//! fragmentation factor of the fully padded layout, and a dry-run accounting
//! of pages a given adapter set would actually map.

pub mod analytics;
pub mod pool;
pub mod vtensor;

pub use analytics::{
    dry_run_accounting, expand_summary, fragmentation_factor, min_feasible_e_max,
    reference_model_config, reference_profiles, sparsity_factor, AdapterProfile, DryRunReport,
    ExpertCounts,
};
pub use pool::{PhysicalMemoryPool, PoolStats};
pub use vtensor::{pages_for_range, VirtualWeightTensor};
