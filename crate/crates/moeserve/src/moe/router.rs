//! Top-k softmax router.

use crate::error::{Error, Result};
use crate::mat::{dot, Mat};

/// Per-layer router: a dense `[experts, hidden]` weight matrix. The router is
/// part of the frozen base model and is shared by every adapter.
#[derive(Debug, Clone, PartialEq)]
pub struct Router {
    weights: Mat,
}

/// Routing decision for a batch: for each token, `top_k` expert IDs and the
/// matching gate weights, renormalized to sum to 1 over the selected experts.
/// Both are stored flattened row-major `[tokens, top_k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TopKAssignment {
    pub expert_ids: Vec<u32>,
    pub weights: Vec<f32>,
    pub num_tokens: usize,
    pub top_k: usize,
}

impl Router {
    pub fn new(weights: Mat) -> Self {
        Router { weights }
    }

    pub fn num_experts(&self) -> usize {
        self.weights.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn weights(&self) -> &Mat {
        &self.weights
    }

    /// Route a `[tokens, hidden]` batch.
    ///
    /// Per token: logits over all experts, a numerically stable softmax, then
    /// the `top_k` highest-probability experts. Ties break toward the lower
    /// expert index so the selection is total-ordered and reproducible. The
    /// selected probabilities are renormalized to sum to 1.
    pub fn route(&self, x: &Mat, top_k: usize) -> Result<TopKAssignment> {
        if x.cols() != self.hidden_dim() {
            return Err(Error::Config(format!(
                "router expects hidden dim {}, got {}",
                self.hidden_dim(),
                x.cols()
            )));
        }
        if top_k == 0 || top_k > self.num_experts() {
            return Err(Error::Config(format!(
                "top_k {} out of range for {} experts",
                top_k,
                self.num_experts()
            )));
        }
        let num_tokens = x.rows();
        let num_experts = self.num_experts();
        let mut expert_ids = Vec::with_capacity(num_tokens * top_k);
        let mut weights = Vec::with_capacity(num_tokens * top_k);
        let mut probs = vec![0.0f32; num_experts];

        for t in 0..num_tokens {
            let row = x.row(t);
            let mut max_logit = f32::NEG_INFINITY;
            for e in 0..num_experts {
                let logit = dot(self.weights.row(e), row);
                probs[e] = logit;
                if logit > max_logit {
                    max_logit = logit;
                }
            }
            let mut denom = 0.0f32;
            for p in probs.iter_mut() {
                *p = (*p - max_logit).exp();
                denom += *p;
            }
            for p in probs.iter_mut() {
                *p /= denom;
            }

            // Selection sort of the k largest; k is small and the explicit
            // loop keeps the lower-index tie-break obvious.
            let mut picked: Vec<u32> = Vec::with_capacity(top_k);
            for _ in 0..top_k {
                let mut best: Option<(u32, f32)> = None;
                for e in 0..num_experts as u32 {
                    if picked.contains(&e) {
                        continue;
                    }
                    let p = probs[e as usize];
                    match best {
                        Some((_, bp)) if p <= bp => {}
                        _ => best = Some((e, p)),
                    }
                }
                picked.push(best.expect("top_k <= num_experts").0);
            }

            let mut selected_sum = 0.0f32;
            for &e in &picked {
                selected_sum += probs[e as usize];
            }
            for &e in &picked {
                expert_ids.push(e);
                weights.push(probs[e as usize] / selected_sum);
            }
        }

        Ok(TopKAssignment {
            expert_ids,
            weights,
            num_tokens,
            top_k,
        })
    }
}

impl TopKAssignment {
    /// Gate weight row for one token.
    pub fn token_weights(&self, t: usize) -> &[f32] {
        &self.weights[t * self.top_k..(t + 1) * self.top_k]
    }

    /// Expert ID row for one token.
    pub fn token_ids(&self, t: usize) -> &[u32] {
        &self.expert_ids[t * self.top_k..(t + 1) * self.top_k]
    }
}
