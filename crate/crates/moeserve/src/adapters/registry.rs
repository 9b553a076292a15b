//! The adapter registry: slot assignment, load/evict lifecycle, and the
//! paged weight store the forward pass reads from.
//!
//! The registry owns one [`VirtualWeightTensor`] per layer over the slot
//! space `[0, M + N·E_max)` and one shared [`PhysicalMemoryPool`]. The base
//! model occupies slots `[0, M)` in every layer, mapped at construction and
//! never evicted. Adapter `i` owns slots `[Δ_i, Δ_i + E_max)` with
//! `Δ_i = M + i·E_max`; loading backs only the leading `e_i^(l)` slots per
//! layer.
//!
//! Mutations are epoch-fenced by design: the registry hands out per-layer
//! expert maps as [`Arc`] snapshots, and every load or evict replaces whole
//! map layers rather than editing them, so a forward pass holding a snapshot
//! is immune to concurrent lifecycle changes. In-flight request counts guard
//! eviction.

use std::sync::Arc;

use crate::adapters::manifest::AdapterManifest;
use crate::adapters::map::ExpertMapLayer;
use crate::config::{Dtype, EngineConfig};
use crate::error::{Error, Result};
use crate::memory::pool::{PhysicalMemoryPool, PoolStats};
use crate::memory::vtensor::VirtualWeightTensor;
use crate::moe::expert::ExpertWeights;
use crate::moe::model::{BaseModel, ExpertStore};
use crate::moe::router::Router;

/// A resident adapter.
#[derive(Debug)]
pub struct LoadedAdapter {
    pub manifest: AdapterManifest,
    /// Requests currently admitted against this adapter; eviction requires 0.
    pub in_flight: u32,
}

#[derive(Debug)]
pub struct AdapterRegistry {
    cfg: EngineConfig,
    routers: Vec<Router>,
    pool: PhysicalMemoryPool,
    /// One per layer.
    tensors: Vec<VirtualWeightTensor>,
    /// One per layer, swapped wholesale on lifecycle changes.
    maps: Vec<Arc<ExpertMapLayer>>,
    /// Adapter slots; index is the AID.
    slots: Vec<Option<LoadedAdapter>>,
}

impl AdapterRegistry {
    /// Build the registry and load the base model into slots `[0, M)` of
    /// every layer.
    pub fn new(cfg: EngineConfig, base: &BaseModel) -> Result<Self> {
        cfg.validate()?;
        base.validate()?;
        if cfg.model != base.config {
            return Err(Error::Config(
                "engine model config does not match the base model checkpoint".into(),
            ));
        }
        if cfg.model.dtype != Dtype::F32 {
            return Err(Error::Config(
                "the runtime computes in f32; other dtypes are for dry-run accounting only".into(),
            ));
        }
        let model = &cfg.model;
        let expert_size = model.expert_size_bytes();
        let num_slots = cfg.num_slots();
        let mut pool = PhysicalMemoryPool::new(
            cfg.page.page_size,
            cfg.page.pool_capacity_pages,
        )?;
        let mut tensors = Vec::with_capacity(model.layers);
        for layer in 0..model.layers {
            let mut t = VirtualWeightTensor::new(layer, num_slots, expert_size, cfg.page.page_size)?;
            t.map_range(&mut pool, 0, model.experts_per_layer)
                .map_err(|e| match e {
                    Error::PoolExhausted { .. } => Error::Config(format!(
                        "pool capacity {} pages cannot hold the base model",
                        cfg.page.pool_capacity_pages
                    )),
                    other => other,
                })?;
            for (expert_id, expert) in base.experts[layer].iter().enumerate() {
                t.write_slot(&mut pool, expert_id, &expert.to_bytes())?;
            }
            tensors.push(t);
        }
        let maps = (0..model.layers)
            .map(|_| {
                Arc::new(ExpertMapLayer::identity(
                    model.experts_per_layer,
                    cfg.max_adapters,
                ))
            })
            .collect();
        Ok(AdapterRegistry {
            routers: base.routers.clone(),
            pool,
            tensors,
            maps,
            slots: (0..cfg.max_adapters).map(|_| None).collect(),
            cfg,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    /// Slot offset Δ_i of adapter slot `i`.
    pub fn slot_base(&self, adapter: usize) -> usize {
        self.cfg.model.experts_per_layer + adapter * self.cfg.max_adapter_experts
    }

    /// Load an adapter into the first free slot and return its AID.
    ///
    /// On pool exhaustion partway through, everything mapped so far is
    /// unmapped again; the registry is unchanged.
    pub fn load_adapter(&mut self, manifest: &AdapterManifest, weights: &[u8]) -> Result<usize> {
        manifest.validate(&self.cfg.model)?;
        manifest.check_weights(weights)?;
        if manifest.max_layer_count() as usize > self.cfg.max_adapter_experts {
            return Err(Error::Manifest(format!(
                "adapter '{}' fine-tunes {} experts in one layer, capacity is {}",
                manifest.name,
                manifest.max_layer_count(),
                self.cfg.max_adapter_experts
            )));
        }
        if self.resolve(&manifest.name).is_some() {
            return Err(Error::Usage(format!(
                "adapter '{}' is already loaded",
                manifest.name
            )));
        }
        let adapter = self
            .slots
            .iter()
            .position(|s| s.is_none())
            .ok_or_else(|| {
                Error::Capacity(format!(
                    "all {} adapter slots are occupied",
                    self.slots.len()
                ))
            })?;
        let delta = self.slot_base(adapter);

        // Map every layer's range first; roll back on exhaustion.
        let mut mapped_layers = 0;
        let mut failure = None;
        for (layer, ids) in manifest.per_layer.iter().enumerate() {
            match self.tensors[layer].map_range(&mut self.pool, delta, ids.len()) {
                Ok(()) => mapped_layers = layer + 1,
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            }
        }
        if let Some(e) = failure {
            for layer in (0..mapped_layers).rev() {
                let count = manifest.per_layer[layer].len();
                self.tensors[layer]
                    .unmap_range(&mut self.pool, delta, count)
                    .expect("rollback of a just-mapped range");
            }
            return Err(e);
        }

        // Copy weights; infallible after mapping succeeded.
        for (layer, ids) in manifest.per_layer.iter().enumerate() {
            for idx in 0..ids.len() {
                let blob = manifest.expert_blob(weights, layer, idx);
                self.tensors[layer].write_slot(&mut self.pool, delta + idx, blob)?;
            }
        }

        // Publish the new map layers.
        for (layer, ids) in manifest.per_layer.iter().enumerate() {
            self.maps[layer] = Arc::new(self.maps[layer].with_row(adapter, delta, ids)?);
        }
        self.slots[adapter] = Some(LoadedAdapter {
            manifest: manifest.clone(),
            in_flight: 0,
        });
        Ok(adapter)
    }

    /// Evict by AID: unmap its ranges, reset its map rows to identity, free
    /// the slot. Rejected while requests are in flight.
    pub fn evict_adapter(&mut self, adapter: usize) -> Result<()> {
        let slot = self
            .slots
            .get(adapter)
            .and_then(|s| s.as_ref())
            .ok_or_else(|| Error::Usage(format!("no adapter loaded at index {}", adapter)))?;
        if slot.in_flight > 0 {
            return Err(Error::Usage(format!(
                "adapter '{}' has {} in-flight requests",
                slot.manifest.name, slot.in_flight
            )));
        }
        let delta = self.slot_base(adapter);
        let per_layer: Vec<usize> = slot.manifest.per_layer.iter().map(|ids| ids.len()).collect();
        for (layer, count) in per_layer.into_iter().enumerate() {
            self.tensors[layer].unmap_range(&mut self.pool, delta, count)?;
            self.maps[layer] = Arc::new(self.maps[layer].with_identity_row(adapter)?);
        }
        self.slots[adapter] = None;
        Ok(())
    }

    /// Evict by adapter name.
    pub fn evict_by_name(&mut self, name: &str) -> Result<()> {
        let adapter = self
            .resolve(name)
            .ok_or_else(|| Error::Usage(format!("adapter '{}' is not loaded", name)))?;
        self.evict_adapter(adapter)
    }

    /// AID of a loaded adapter, by name.
    pub fn resolve(&self, name: &str) -> Option<usize> {
        self.slots.iter().position(|s| {
            s.as_ref()
                .is_some_and(|loaded| loaded.manifest.name == name)
        })
    }

    pub fn adapter(&self, adapter: usize) -> Option<&LoadedAdapter> {
        self.slots.get(adapter).and_then(|s| s.as_ref())
    }

    pub fn loaded(&self) -> impl Iterator<Item = (usize, &LoadedAdapter)> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.as_ref().map(|l| (i, l)))
    }

    /// Count a request against its adapter. `-1` (base) always succeeds;
    /// other AIDs must be loaded.
    pub fn begin_request(&mut self, aid: i32) -> Result<()> {
        if aid < 0 {
            return Ok(());
        }
        let slot = self
            .slots
            .get_mut(aid as usize)
            .and_then(|s| s.as_mut())
            .ok_or_else(|| Error::Usage(format!("no adapter loaded at index {}", aid)))?;
        slot.in_flight += 1;
        Ok(())
    }

    /// Release a request's claim from [`begin_request`](Self::begin_request).
    pub fn end_request(&mut self, aid: i32) {
        if aid < 0 {
            return;
        }
        if let Some(Some(slot)) = self.slots.get_mut(aid as usize) {
            debug_assert!(slot.in_flight > 0, "unbalanced end_request");
            slot.in_flight = slot.in_flight.saturating_sub(1);
        }
    }

    pub fn in_flight(&self, adapter: usize) -> u32 {
        self.adapter(adapter).map_or(0, |l| l.in_flight)
    }

    /// The current expert map of one layer.
    pub fn map_layer(&self, layer: usize) -> &Arc<ExpertMapLayer> {
        &self.maps[layer]
    }

    /// Immutable per-layer map snapshot for one inference step. Lifecycle
    /// changes after this call never affect the returned maps.
    pub fn snapshot_maps(&self) -> Vec<Arc<ExpertMapLayer>> {
        self.maps.clone()
    }

    pub fn pool_stats(&self) -> PoolStats {
        self.pool.stats()
    }

    /// Drop backing memory of pages freed by past evictions.
    pub fn trim_pool(&mut self) -> usize {
        self.pool.trim()
    }

    /// Total virtual pages currently backed across all layers.
    pub fn mapped_pages(&self) -> usize {
        self.tensors.iter().map(|t| t.mapped_pages()).sum()
    }

    /// Pages the base model alone occupies (lower bound of `mapped_pages`).
    pub fn base_pages(&self) -> usize {
        let expert_size = self.cfg.model.expert_size_bytes();
        let base_bytes = self.cfg.model.experts_per_layer * expert_size;
        let per_layer =
            crate::memory::vtensor::pages_for_range(0, base_bytes, self.cfg.page.page_size).len();
        per_layer * self.cfg.model.layers
    }
}

impl ExpertStore for AdapterRegistry {
    fn model_config(&self) -> &crate::config::ModelConfig {
        &self.cfg.model
    }

    fn router(&self, layer: usize) -> &Router {
        &self.routers[layer]
    }

    fn num_slots(&self) -> usize {
        self.cfg.num_slots()
    }

    fn read_expert(&self, layer: usize, slot: u32, out: &mut ExpertWeights) -> Result<()> {
        let mut bytes = vec![0u8; self.cfg.model.expert_size_bytes()];
        self.tensors[layer].read_slot(&self.pool, slot as usize, &mut bytes)?;
        out.fill_from_bytes(&bytes)
    }
}
