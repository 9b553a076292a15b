//! The layer-stacked forward pass, generic over where expert weights live.
//!
//! [`ExpertStore`] abstracts weight residence: a [`BaseModel`] keeps dense
//! in-memory experts indexed by base expert ID, while the adapter registry
//! serves the same trait from its paged virtual tensor indexed by slot ID.
//! [`RerouteHook`] is the only seam between the two worlds: it turns the
//! router's base expert IDs into store slot IDs, per token, before dispatch.
//! A forward pass through a base model and through the slot-extended store
//! are therefore the same code path, which is what makes their bit-exact
//! comparison meaningful.

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::moe::dispatch::{combine, dispatch, gather_rows};
use crate::moe::expert::{ExpertWeights, FfnScratch};
use crate::moe::router::Router;

/// Number of distinct pseudo-token IDs used by the deterministic tokenizer
/// stand-in. Small enough that decode sequences revisit tokens, large enough
/// that distinct prompts stay distinct in practice.
pub const PSEUDO_VOCAB: u64 = 4096;

/// A source of routers and expert weights for the forward pass.
pub trait ExpertStore {
    fn model_config(&self) -> &ModelConfig;
    fn router(&self, layer: usize) -> &Router;
    /// Size of the slot ID space `read_expert` accepts.
    fn num_slots(&self) -> usize;
    /// Copy one expert's weights into `out` (a scratch expert of matching
    /// shape). Copying keeps the hot loop identical for in-memory and paged
    /// stores.
    fn read_expert(&self, layer: usize, slot: u32, out: &mut ExpertWeights) -> Result<()>;
}

/// Maps router expert IDs to store slot IDs for one layer of one batch.
pub trait RerouteHook {
    /// `expert_ids` is flattened `[tokens, top_k]`; `adapter_ids` has one
    /// entry per token, `-1` meaning the base model. Must push exactly
    /// `expert_ids.len()` slot IDs into `out`.
    fn reroute(
        &self,
        layer: usize,
        expert_ids: &[u32],
        adapter_ids: &[i32],
        top_k: usize,
        out: &mut Vec<u32>,
    ) -> Result<()>;
}

/// Slot ID = expert ID: the hook for stores whose slots are exactly the base
/// expert space (plain or merged models).
pub struct IdentityReroute;

impl RerouteHook for IdentityReroute {
    fn reroute(
        &self,
        _layer: usize,
        expert_ids: &[u32],
        _adapter_ids: &[i32],
        _top_k: usize,
        out: &mut Vec<u32>,
    ) -> Result<()> {
        out.extend_from_slice(expert_ids);
        Ok(())
    }
}

/// A dense MoE model held fully in memory: per-layer router plus
/// `experts_per_layer` experts, indexed by base expert ID.
#[derive(Debug, Clone)]
pub struct BaseModel {
    pub config: ModelConfig,
    pub routers: Vec<Router>,
    /// `experts[layer][expert_id]`.
    pub experts: Vec<Vec<ExpertWeights>>,
}

impl BaseModel {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.routers.len() != self.config.layers || self.experts.len() != self.config.layers {
            return Err(Error::Config(
                "router/expert layer count does not match config".into(),
            ));
        }
        for (l, per_layer) in self.experts.iter().enumerate() {
            if per_layer.len() != self.config.experts_per_layer {
                return Err(Error::Config(format!(
                    "layer {} has {} experts, expected {}",
                    l,
                    per_layer.len(),
                    self.config.experts_per_layer
                )));
            }
        }
        Ok(())
    }
}

impl ExpertStore for BaseModel {
    fn model_config(&self) -> &ModelConfig {
        &self.config
    }

    fn router(&self, layer: usize) -> &Router {
        &self.routers[layer]
    }

    fn num_slots(&self) -> usize {
        self.config.experts_per_layer
    }

    fn read_expert(&self, layer: usize, slot: u32, out: &mut ExpertWeights) -> Result<()> {
        let expert = self
            .experts
            .get(layer)
            .and_then(|l| l.get(slot as usize))
            .ok_or(Error::MemoryFault {
                layer,
                slot: slot as usize,
                reason: "expert index out of range".into(),
            })?;
        out.gate.as_mut_slice().copy_from_slice(expert.gate.as_slice());
        out.up.as_mut_slice().copy_from_slice(expert.up.as_slice());
        out.down.as_mut_slice().copy_from_slice(expert.down.as_slice());
        Ok(())
    }
}

/// One MoE layer over already-rerouted slot IDs: dispatch, grouped FFN in
/// ascending slot order, weighted combine. Returns the layer output (without
/// the residual).
pub fn forward_layer<S: ExpertStore>(
    store: &S,
    layer: usize,
    x: &Mat,
    slot_ids: &[u32],
    gate_weights: &[f32],
    top_k: usize,
) -> Result<Mat> {
    let cfg = store.model_config();
    let permuted = dispatch(slot_ids, store.num_slots());
    let gathered = gather_rows(x, &permuted, top_k);
    let mut expert_out = Mat::zeros(gathered.rows(), cfg.hidden_dim);
    let mut weights = ExpertWeights::zeros(cfg.hidden_dim, cfg.intermediate_dim);
    let mut scratch = FfnScratch::new(cfg.intermediate_dim);
    for group in &permuted.groups {
        store.read_expert(layer, group.slot, &mut weights)?;
        for p in group.start..group.start + group.len {
            weights.ffn_row(gathered.row(p), expert_out.row_mut(p), &mut scratch);
        }
    }
    Ok(combine(
        &expert_out,
        gate_weights,
        &permuted.inverse,
        x.rows(),
        top_k,
    ))
}

/// Full forward pass: per layer, route on the current hidden state, reroute
/// expert IDs to slots, run the MoE layer, add the residual.
pub fn forward_pass<S: ExpertStore, R: RerouteHook>(
    store: &S,
    hook: &R,
    tokens: &Mat,
    adapter_ids: &[i32],
) -> Result<Mat> {
    run_forward(store, hook, tokens, adapter_ids, None)
}

/// Like [`forward_pass`], but also captures the hidden state after every
/// layer so a divergence between two serving paths can be pinned to the
/// first layer where their states stop agreeing.
pub fn forward_pass_traced<S: ExpertStore, R: RerouteHook>(
    store: &S,
    hook: &R,
    tokens: &Mat,
    adapter_ids: &[i32],
) -> Result<(Mat, Vec<Mat>)> {
    let mut trace = Vec::with_capacity(store.model_config().layers);
    let out = run_forward(store, hook, tokens, adapter_ids, Some(&mut trace))?;
    Ok((out, trace))
}

fn run_forward<S: ExpertStore, R: RerouteHook>(
    store: &S,
    hook: &R,
    tokens: &Mat,
    adapter_ids: &[i32],
    mut trace: Option<&mut Vec<Mat>>,
) -> Result<Mat> {
    let cfg = store.model_config();
    if tokens.rows() != adapter_ids.len() {
        return Err(Error::Config(format!(
            "{} tokens but {} adapter ids",
            tokens.rows(),
            adapter_ids.len()
        )));
    }
    let mut h = tokens.clone();
    let mut slots = Vec::with_capacity(tokens.rows() * cfg.top_k);
    for layer in 0..cfg.layers {
        let assignment = store.router(layer).route(&h, cfg.top_k)?;
        slots.clear();
        hook.reroute(
            layer,
            &assignment.expert_ids,
            adapter_ids,
            cfg.top_k,
            &mut slots,
        )?;
        if slots.len() != assignment.expert_ids.len() {
            return Err(Error::Internal(
                "reroute hook changed the number of routed pairs".into(),
            ));
        }
        let layer_out = forward_layer(store, layer, &h, &slots, &assignment.weights, cfg.top_k)?;
        h.add_assign(&layer_out);
        if let Some(t) = trace.as_deref_mut() {
            t.push(h.clone());
        }
    }
    Ok(h)
}

pub(crate) fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn unit_f32(bits: u64) -> f32 {
    // Top 24 bits -> [0, 1) -> [-1, 1).
    let frac = (bits >> 40) as f32 / (1u64 << 24) as f32;
    frac * 2.0 - 1.0
}

/// Deterministic stand-in for a token embedding table: each token ID maps to
/// a fixed pseudo-random row in `[-1, 1)^hidden`, independent of position and
/// batch.
pub fn pseudo_embed(token_ids: &[u64], hidden_dim: usize) -> Mat {
    let mut out = Mat::zeros(token_ids.len(), hidden_dim);
    for (t, &id) in token_ids.iter().enumerate() {
        let mut state = id.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ 0xA076_1D64_78BD_642F;
        for v in out.row_mut(t) {
            *v = unit_f32(splitmix64(&mut state));
        }
    }
    out
}

/// Deterministic stand-in for an LM head: hash the exact f32 bit patterns of
/// the final hidden row down to a pseudo-token. Because the input is the bit
/// pattern, two serving paths produce the same token sequence if and only if
/// their hidden states match bit for bit.
pub fn next_token_id(hidden_row: &[f32]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in hidden_row {
        for b in v.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x1000_0000_01b3);
        }
    }
    h % PSEUDO_VOCAB
}
