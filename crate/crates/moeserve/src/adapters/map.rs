//! The per-layer expert map Π: `[N, M]` table sending (adapter, base expert)
//! to its serving slot.
//!
//! Row `i` is identity wherever adapter `i` does not fine-tune the base
//! expert, and `Δ_i + δ` where it does, with `δ` assigned in ascending base
//! expert ID order. Rows of unloaded adapters are identity throughout, so a
//! stale AID can never reach an adapter slot.
//!
//! Internally the table carries one extra leading identity row so that
//! looking up adapter ID `a ∈ {-1} ∪ [0, N)` is a single gather at row
//! `a + 1` — the layout the fused rerouting kernel wants. Maps are immutable;
//! the registry replaces whole layers under `Arc` so an inference step's
//! snapshot can never observe a half-applied load.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpertMapLayer {
    num_base: usize,
    num_adapters: usize,
    /// `(num_adapters + 1) * num_base`, row 0 = identity for AID −1.
    extended: Vec<u32>,
}

impl ExpertMapLayer {
    /// All-identity map: no adapter fine-tunes anything.
    pub fn identity(num_base: usize, num_adapters: usize) -> Self {
        let mut extended = Vec::with_capacity((num_adapters + 1) * num_base);
        for _ in 0..num_adapters + 1 {
            extended.extend(0..num_base as u32);
        }
        ExpertMapLayer {
            num_base,
            num_adapters,
            extended,
        }
    }

    pub fn num_base(&self) -> usize {
        self.num_base
    }

    pub fn num_adapters(&self) -> usize {
        self.num_adapters
    }

    /// Copy of this map with adapter `i`'s row rebuilt: `experts` (strictly
    /// ascending base expert IDs) go to `slot_base + δ` in ID order,
    /// everything else to itself.
    pub fn with_row(&self, adapter: usize, slot_base: usize, experts: &[u32]) -> Result<Self> {
        self.check_adapter(adapter)?;
        let mut prev: Option<u32> = None;
        for &e in experts {
            if (e as usize) >= self.num_base {
                return Err(Error::Manifest(format!(
                    "fine-tuned expert {} out of base range {}",
                    e, self.num_base
                )));
            }
            if prev.is_some_and(|p| p >= e) {
                return Err(Error::Manifest(
                    "fine-tuned expert IDs must be strictly ascending".into(),
                ));
            }
            prev = Some(e);
        }
        let mut next = self.clone();
        let row = next.row_mut(adapter);
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = j as u32;
        }
        for (delta, &e) in experts.iter().enumerate() {
            row[e as usize] = (slot_base + delta) as u32;
        }
        Ok(next)
    }

    /// Copy of this map with adapter `i`'s row reset to identity.
    pub fn with_identity_row(&self, adapter: usize) -> Result<Self> {
        self.with_row(adapter, 0, &[])
    }

    /// Slot for `(adapter, base_expert)`.
    pub fn get(&self, adapter: usize, base_expert: usize) -> u32 {
        self.row(adapter)[base_expert]
    }

    /// Adapter `i`'s logical row.
    pub fn row(&self, adapter: usize) -> &[u32] {
        let start = (adapter + 1) * self.num_base;
        &self.extended[start..start + self.num_base]
    }

    /// The extended `[N+1, M]` table with the identity row prepended; the
    /// fused rerouting kernel indexes this directly at row `aid + 1`.
    pub fn extended_table(&self) -> &[u32] {
        &self.extended
    }

    pub fn is_identity(&self) -> bool {
        (0..self.num_adapters).all(|i| {
            self.row(i)
                .iter()
                .enumerate()
                .all(|(j, &s)| s == j as u32)
        })
    }

    fn row_mut(&mut self, adapter: usize) -> &mut [u32] {
        let start = (adapter + 1) * self.num_base;
        &mut self.extended[start..start + self.num_base]
    }

    fn check_adapter(&self, adapter: usize) -> Result<()> {
        if adapter >= self.num_adapters {
            return Err(Error::Usage(format!(
                "adapter index {} out of range {}",
                adapter, self.num_adapters
            )));
        }
        Ok(())
    }
}
