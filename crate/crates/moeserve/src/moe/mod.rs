//! The MoE forward path: router, dispatch, expert FFN, combine.
//!
//! This module knows nothing about adapters. It computes over *slot* IDs —
//! whatever the caller hands it after (optionally) rerouting the router's
//! expert IDs — so the exact same kernels serve both a plain base model and
//! the slot-extended multi-adapter tensor.
//!
//! Everything here is bit-deterministic: reductions accumulate in a fixed
//! sequential order, groups are processed in ascending slot order, and each
//! token row is computed independently of how the batch around it is grouped.
//! That last property is what makes merged-model equivalence and batching
//! transparency exact rather than approximate.

pub mod checkpoint;
pub mod dispatch;
pub mod expert;
pub mod model;
pub mod router;

pub use checkpoint::{gen_base_model, load_model, load_model_config, save_model};
pub use dispatch::{combine, dispatch, PermutedTokens, SlotGroup};
pub use expert::{ExpertWeights, FfnScratch};
pub use model::{
    forward_layer, forward_pass, forward_pass_traced, next_token_id, pseudo_embed, BaseModel,
    ExpertStore, IdentityReroute, RerouteHook, PSEUDO_VOCAB,
};
pub use router::{Router, TopKAssignment};
