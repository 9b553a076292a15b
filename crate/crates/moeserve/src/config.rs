//! Model, paging, and engine configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Element type of expert weights. v1 computes in 32-bit float only; other
/// widths exist so dry-run accounting can model 16-bit layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    Bf16,
}

impl Dtype {
    pub fn bytes(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::Bf16 => 2,
        }
    }
}

/// Shape of the MoE base model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of MoE layers.
    pub layers: usize,
    /// Experts per layer in the base model.
    pub experts_per_layer: usize,
    /// Experts activated per token.
    pub top_k: usize,
    /// Hidden dimension.
    pub hidden_dim: usize,
    /// Expert intermediate dimension.
    pub intermediate_dim: usize,
    pub dtype: Dtype,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden_dim == 0 || self.intermediate_dim == 0 {
            return Err(Error::Config(
                "layers, hidden_dim and intermediate_dim must be >= 1".into(),
            ));
        }
        if self.top_k == 0 || self.top_k > self.experts_per_layer {
            return Err(Error::Config(format!(
                "top_k must satisfy 1 <= k <= {}, got {}",
                self.experts_per_layer, self.top_k
            )));
        }
        Ok(())
    }

    /// Elements in one expert: gate `[I, H]`, up `[I, H]`, down `[H, I]`.
    pub fn expert_elems(&self) -> usize {
        3 * self.intermediate_dim * self.hidden_dim
    }

    /// Serialized size of one expert in bytes. Identical for every expert of
    /// a given configuration.
    pub fn expert_size_bytes(&self) -> usize {
        self.expert_elems() * self.dtype.bytes()
    }

    /// Shape fingerprint used to pair adapters with a compatible base model.
    /// Covers every field that affects weight layout.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let canonical = format!(
            "layers={};experts={};top_k={};hidden={};intermediate={};dtype={:?}",
            self.layers,
            self.experts_per_layer,
            self.top_k,
            self.hidden_dim,
            self.intermediate_dim,
            self.dtype
        );
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{:02x}", b)).collect()
    }
}

/// Physical page pool configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageConfig {
    /// Page granularity in bytes. 2 MiB by default, configurable down to
    /// 256 B so alignment cases are cheap to exercise.
    pub page_size: usize,
    /// Simulated device budget in pages.
    pub pool_capacity_pages: usize,
}

pub const DEFAULT_PAGE_SIZE: usize = 2 * 1024 * 1024;

impl PageConfig {
    pub fn validate(&self) -> Result<()> {
        if self.page_size == 0 {
            return Err(Error::Config("page_size must be > 0".into()));
        }
        Ok(())
    }
}

/// Which clock drives the serving loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockMode {
    /// Deterministic virtual time: each step costs
    /// `step_base_cost + step_token_cost * tokens`.
    Simulated,
    /// Real elapsed time per step; the loop runs as fast as it can and
    /// arrivals are honored in order rather than by absolute timestamp.
    Wall,
}

/// Everything needed to stand up a serving engine.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EngineConfig {
    pub model: ModelConfig,
    pub page: PageConfig,
    /// Maximum adapters resident at once (slot capacity of the virtual
    /// tensor, fixed at startup).
    pub max_adapters: usize,
    /// Per-adapter per-layer expert slot capacity. Must be no less than the
    /// largest per-layer expert count across loadable adapters.
    pub max_adapter_experts: usize,
    /// Token budget per scheduling step (chunked prefill granularity).
    pub token_budget: usize,
    /// Simulated clock: fixed cost per step, in seconds.
    pub step_base_cost: f64,
    /// Simulated clock: cost per scheduled token, in seconds.
    pub step_token_cost: f64,
    pub clock: ClockMode,
    pub seed: u64,
}

pub const DEFAULT_TOKEN_BUDGET: usize = 512;
pub const DEFAULT_STEP_BASE_COST: f64 = 1e-3;
pub const DEFAULT_STEP_TOKEN_COST: f64 = 2e-5;

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.page.validate()?;
        if self.max_adapter_experts == 0 {
            return Err(Error::Config("max_adapter_experts must be >= 1".into()));
        }
        if self.token_budget == 0 {
            return Err(Error::Config("token_budget must be >= 1".into()));
        }
        Ok(())
    }

    /// Virtual slots per layer: base experts plus one fixed-size region per
    /// adapter slot.
    pub fn num_slots(&self) -> usize {
        self.experts_per_layer() + self.max_adapters * self.max_adapter_experts
    }

    fn experts_per_layer(&self) -> usize {
        self.model.experts_per_layer
    }
}
