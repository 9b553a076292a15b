//! The gated expert FFN and its serialized form.

use crate::error::{Error, Result};
use crate::mat::{dot, Mat};

/// Weights of one expert: a SiLU-gated FFN
/// `y = down · (silu(gate · x) ⊙ (up · x))`
/// with `gate`/`up` of shape `[intermediate, hidden]` and `down` of shape
/// `[hidden, intermediate]`, all row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertWeights {
    pub gate: Mat,
    pub up: Mat,
    pub down: Mat,
}

/// Reusable intermediate buffers for [`ExpertWeights::ffn_row`].
#[derive(Debug, Clone)]
pub struct FfnScratch {
    act: Vec<f32>,
}

impl FfnScratch {
    pub fn new(intermediate_dim: usize) -> Self {
        FfnScratch {
            act: vec![0.0; intermediate_dim],
        }
    }
}

#[inline]
fn silu(x: f32) -> f32 {
    x / (1.0 + (-x).exp())
}

impl ExpertWeights {
    pub fn zeros(hidden_dim: usize, intermediate_dim: usize) -> Self {
        ExpertWeights {
            gate: Mat::zeros(intermediate_dim, hidden_dim),
            up: Mat::zeros(intermediate_dim, hidden_dim),
            down: Mat::zeros(hidden_dim, intermediate_dim),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.down.rows()
    }

    pub fn intermediate_dim(&self) -> usize {
        self.gate.rows()
    }

    /// Forward one token row. Dot products and the final projection all
    /// accumulate sequentially, so the result depends only on `x` and the
    /// weights — never on the surrounding batch.
    pub fn ffn_row(&self, x: &[f32], out: &mut [f32], scratch: &mut FfnScratch) {
        let inter = self.intermediate_dim();
        debug_assert_eq!(x.len(), self.hidden_dim());
        debug_assert_eq!(out.len(), self.hidden_dim());
        debug_assert_eq!(scratch.act.len(), inter);
        for i in 0..inter {
            let g = dot(self.gate.row(i), x);
            let u = dot(self.up.row(i), x);
            scratch.act[i] = silu(g) * u;
        }
        for (h, o) in out.iter_mut().enumerate() {
            *o = dot(self.down.row(h), &scratch.act);
        }
    }

    /// Serialized byte length: `3 * intermediate * hidden` little-endian f32s.
    pub fn byte_len(hidden_dim: usize, intermediate_dim: usize) -> usize {
        3 * intermediate_dim * hidden_dim * 4
    }

    /// Serialize as `gate`, `up`, `down`, each row-major little-endian f32.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out =
            Vec::with_capacity(Self::byte_len(self.hidden_dim(), self.intermediate_dim()));
        for m in [&self.gate, &self.up, &self.down] {
            for v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], hidden_dim: usize, intermediate_dim: usize) -> Result<Self> {
        let mut w = Self::zeros(hidden_dim, intermediate_dim);
        w.fill_from_bytes(bytes)?;
        Ok(w)
    }

    /// Deserialize in place (the read path reuses one scratch expert).
    pub fn fill_from_bytes(&mut self, bytes: &[u8]) -> Result<()> {
        let expect = Self::byte_len(self.hidden_dim(), self.intermediate_dim());
        if bytes.len() != expect {
            return Err(Error::Input(format!(
                "expert blob is {} bytes, expected {}",
                bytes.len(),
                expect
            )));
        }
        let mut chunks = bytes.chunks_exact(4);
        for m in [&mut self.gate, &mut self.up, &mut self.down] {
            for v in m.as_mut_slice() {
                let c = chunks.next().expect("length checked");
                *v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            }
        }
        Ok(())
    }
}
