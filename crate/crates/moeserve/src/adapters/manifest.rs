//! Adapter on-disk format: `manifest.json` + `weights.bin`.
//!
//! The manifest names the adapter, pins the base model it was tuned against
//! (by shape fingerprint), and lists the fine-tuned base expert IDs per
//! layer, strictly ascending. `weights.bin` holds the fine-tuned experts in
//! manifest order — layer-ascending, then expert-ID-ascending — each expert
//! serialized `gate`/`up`/`down` row-major little-endian f32, exactly like
//! the base checkpoint's layer blobs, so one loader handles both.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Dtype, ModelConfig};
use crate::error::{Error, Result};
use crate::memory::analytics::AdapterProfile;
use crate::moe::expert::ExpertWeights;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterManifest {
    pub name: String,
    /// [`ModelConfig::fingerprint`] of the compatible base model.
    pub base_model_fingerprint: String,
    pub dtype: Dtype,
    pub hidden_dim: usize,
    pub intermediate_dim: usize,
    /// `per_layer[l]` = strictly ascending base expert IDs fine-tuned in
    /// layer `l`; may be empty.
    pub per_layer: Vec<Vec<u32>>,
    /// Optional integrity hash of `weights.bin` (hex SHA-256).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_sha256: Option<String>,
}

impl AdapterManifest {
    /// Structural validation against a base model.
    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        if self.base_model_fingerprint != model.fingerprint() {
            return Err(Error::Manifest(format!(
                "adapter '{}' was tuned against a different base model shape",
                self.name
            )));
        }
        if self.dtype != model.dtype
            || self.hidden_dim != model.hidden_dim
            || self.intermediate_dim != model.intermediate_dim
        {
            return Err(Error::Manifest(format!(
                "adapter '{}' dims/dtype do not match the base model",
                self.name
            )));
        }
        if self.per_layer.len() != model.layers {
            return Err(Error::Manifest(format!(
                "adapter '{}' covers {} layers, model has {}",
                self.name,
                self.per_layer.len(),
                model.layers
            )));
        }
        for (l, ids) in self.per_layer.iter().enumerate() {
            let mut prev: Option<u32> = None;
            for &e in ids {
                if (e as usize) >= model.experts_per_layer {
                    return Err(Error::Manifest(format!(
                        "adapter '{}' layer {}: expert {} out of range {}",
                        self.name, l, e, model.experts_per_layer
                    )));
                }
                if prev.is_some_and(|p| p >= e) {
                    return Err(Error::Manifest(format!(
                        "adapter '{}' layer {}: expert IDs must be strictly ascending",
                        self.name, l
                    )));
                }
                prev = Some(e);
            }
        }
        Ok(())
    }

    pub fn layer_counts(&self) -> Vec<u32> {
        self.per_layer.iter().map(|ids| ids.len() as u32).collect()
    }

    pub fn max_layer_count(&self) -> u32 {
        self.layer_counts().into_iter().max().unwrap_or(0)
    }

    pub fn total_experts(&self) -> usize {
        self.per_layer.iter().map(|ids| ids.len()).sum()
    }

    /// This adapter as an analytics profile (exact per-layer counts).
    pub fn profile(&self) -> AdapterProfile {
        AdapterProfile::per_layer(&self.name, self.layer_counts())
    }

    /// Expected `weights.bin` length given the expert geometry.
    pub fn expected_weights_len(&self) -> usize {
        self.total_experts() * ExpertWeights::byte_len(self.hidden_dim, self.intermediate_dim)
    }

    /// Byte range of one fine-tuned expert inside `weights.bin`, addressed
    /// by layer and position within that layer's ascending ID list.
    pub fn expert_blob<'w>(
        &self,
        weights: &'w [u8],
        layer: usize,
        index_in_layer: usize,
    ) -> &'w [u8] {
        let per_expert = ExpertWeights::byte_len(self.hidden_dim, self.intermediate_dim);
        let preceding: usize = self.per_layer[..layer].iter().map(|ids| ids.len()).sum();
        let start = (preceding + index_in_layer) * per_expert;
        &weights[start..start + per_expert]
    }

    /// Check `weights.bin` length and, if the manifest carries a hash, its
    /// integrity.
    pub fn check_weights(&self, weights: &[u8]) -> Result<()> {
        if weights.len() != self.expected_weights_len() {
            return Err(Error::Manifest(format!(
                "adapter '{}': weights blob is {} bytes, manifest implies {}",
                self.name,
                weights.len(),
                self.expected_weights_len()
            )));
        }
        if let Some(expect) = &self.weights_sha256 {
            let got = hex_sha256(weights);
            if &got != expect {
                return Err(Error::Manifest(format!(
                    "adapter '{}': weights hash mismatch",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

pub fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{:02x}", b))
        .collect()
}

/// Write `manifest.json` + `weights.bin` into `dir` (created if missing).
pub fn save_adapter_dir(dir: &Path, manifest: &AdapterManifest, weights: &[u8]) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(manifest)?,
    )?;
    fs::write(dir.join(WEIGHTS_FILE), weights)?;
    Ok(())
}

/// Read an adapter directory back; checks length and optional hash.
pub fn load_adapter_dir(dir: &Path) -> Result<(AdapterManifest, Vec<u8>)> {
    let manifest: AdapterManifest =
        serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    let weights = fs::read(dir.join(WEIGHTS_FILE))?;
    manifest.check_weights(&weights)?;
    Ok((manifest, weights))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ModelConfig {
        ModelConfig {
            layers: 2,
            experts_per_layer: 8,
            top_k: 2,
            hidden_dim: 4,
            intermediate_dim: 3,
            dtype: Dtype::F32,
        }
    }

    fn manifest(model: &ModelConfig) -> AdapterManifest {
        AdapterManifest {
            name: "t".into(),
            base_model_fingerprint: model.fingerprint(),
            dtype: model.dtype,
            hidden_dim: model.hidden_dim,
            intermediate_dim: model.intermediate_dim,
            per_layer: vec![vec![1, 4], vec![7]],
            weights_sha256: None,
        }
    }

    #[test]
    fn validation_accepts_well_formed_and_rejects_malformed() {
        let model = model();
        let good = manifest(&model);
        good.validate(&model).unwrap();

        let mut bad = good.clone();
        bad.per_layer[0] = vec![4, 1];
        assert!(bad.validate(&model).is_err(), "descending IDs");

        let mut bad = good.clone();
        bad.per_layer[1] = vec![8];
        assert!(bad.validate(&model).is_err(), "ID out of range");

        let mut bad = good.clone();
        bad.base_model_fingerprint = "0".repeat(64);
        assert!(bad.validate(&model).is_err(), "wrong base model");

        let mut bad = good;
        bad.per_layer.push(vec![]);
        assert!(bad.validate(&model).is_err(), "layer count mismatch");
    }

    #[test]
    fn blob_addressing_is_layerwise_contiguous() {
        let model = model();
        let m = manifest(&model);
        let per = ExpertWeights::byte_len(4, 3);
        assert_eq!(m.expected_weights_len(), 3 * per);
        let weights: Vec<u8> = (0..m.expected_weights_len()).map(|i| i as u8).collect();
        assert_eq!(m.expert_blob(&weights, 0, 1), &weights[per..2 * per]);
        assert_eq!(m.expert_blob(&weights, 1, 0), &weights[2 * per..]);
    }

    #[test]
    fn directory_roundtrip_and_hash_check() {
        let model = model();
        let mut m = manifest(&model);
        let weights: Vec<u8> = (0..m.expected_weights_len()).map(|i| (i * 7) as u8).collect();
        m.weights_sha256 = Some(hex_sha256(&weights));

        let dir = tempfile::tempdir().unwrap();
        save_adapter_dir(dir.path(), &m, &weights).unwrap();
        let (back, back_weights) = load_adapter_dir(dir.path()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back_weights, weights);

        // Corrupt one byte: the hash catches it.
        let mut corrupt = weights;
        corrupt[0] ^= 0xFF;
        fs::write(dir.path().join(WEIGHTS_FILE), &corrupt).unwrap();
        assert!(load_adapter_dir(dir.path()).is_err());
    }
}
