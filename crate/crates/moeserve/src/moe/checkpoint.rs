//! On-disk model checkpoints and seeded model synthesis.
//!
//! A checkpoint directory holds:
//!
//! - `model.json` — the [`ModelConfig`], pretty-printed JSON;
//! - `router.bin` — all router weights, `layers * experts * hidden`
//!   little-endian f32, layer-major;
//! - `layer_{l}.bin` — the experts of layer `l`, ascending expert ID, each in
//!   the `gate`/`up`/`down` row-major layout of
//!   [`ExpertWeights::to_bytes`](crate::moe::expert::ExpertWeights::to_bytes).

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::moe::expert::ExpertWeights;
use crate::moe::model::BaseModel;
use crate::moe::router::Router;

/// Synthesize a dense base model from a seed. The same `(config, seed)` pair
/// produces bit-identical weights on every platform: generation order is
/// routers (layer-ascending) then experts (layer, expert, gate/up/down), all
/// from one ChaCha8 stream.
pub fn gen_base_model(config: &ModelConfig, seed: u64) -> Result<BaseModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = config.hidden_dim;
    let i = config.intermediate_dim;
    let router_scale = 1.0 / (h as f32).sqrt();
    let in_scale = 1.0 / (h as f32).sqrt();
    let down_scale = 1.0 / (i as f32).sqrt();

    let mut routers = Vec::with_capacity(config.layers);
    for _ in 0..config.layers {
        let mut w = Mat::zeros(config.experts_per_layer, h);
        fill_uniform(&mut rng, w.as_mut_slice(), router_scale);
        routers.push(Router::new(w));
    }

    let mut experts = Vec::with_capacity(config.layers);
    for _ in 0..config.layers {
        let mut per_layer = Vec::with_capacity(config.experts_per_layer);
        for _ in 0..config.experts_per_layer {
            per_layer.push(gen_expert(&mut rng, h, i, in_scale, down_scale));
        }
        experts.push(per_layer);
    }

    Ok(BaseModel {
        config: config.clone(),
        routers,
        experts,
    })
}

/// Synthesize one expert from an already-positioned RNG stream.
pub(crate) fn gen_expert(
    rng: &mut ChaCha8Rng,
    hidden_dim: usize,
    intermediate_dim: usize,
    in_scale: f32,
    down_scale: f32,
) -> ExpertWeights {
    let mut w = ExpertWeights::zeros(hidden_dim, intermediate_dim);
    fill_uniform(rng, w.gate.as_mut_slice(), in_scale);
    fill_uniform(rng, w.up.as_mut_slice(), in_scale);
    fill_uniform(rng, w.down.as_mut_slice(), down_scale);
    w
}

fn fill_uniform(rng: &mut ChaCha8Rng, slice: &mut [f32], scale: f32) {
    for v in slice {
        *v = rng.random_range(-scale..scale);
    }
}

/// Write a checkpoint directory (created if missing).
pub fn save_model(dir: &Path, model: &BaseModel) -> Result<()> {
    model.validate()?;
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join("model.json"),
        serde_json::to_string_pretty(&model.config)?,
    )?;

    let cfg = &model.config;
    let mut router_bytes =
        Vec::with_capacity(cfg.layers * cfg.experts_per_layer * cfg.hidden_dim * 4);
    for router in &model.routers {
        for v in router.weights().as_slice() {
            router_bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(dir.join("router.bin"), router_bytes)?;

    for (l, per_layer) in model.experts.iter().enumerate() {
        let mut bytes = Vec::with_capacity(per_layer.len() * cfg.expert_elems() * 4);
        for expert in per_layer {
            bytes.extend_from_slice(&expert.to_bytes());
        }
        fs::write(dir.join(format!("layer_{}.bin", l)), bytes)?;
    }
    Ok(())
}

/// Read just the geometry of a checkpoint directory, without its weights.
pub fn load_model_config(dir: &Path) -> Result<ModelConfig> {
    let config: ModelConfig = serde_json::from_str(&fs::read_to_string(dir.join("model.json"))?)?;
    config.validate()?;
    Ok(config)
}

/// Read a checkpoint directory back into memory.
pub fn load_model(dir: &Path) -> Result<BaseModel> {
    let config = load_model_config(dir)?;
    let (layers, m, h, i) = (
        config.layers,
        config.experts_per_layer,
        config.hidden_dim,
        config.intermediate_dim,
    );

    let router_bytes = fs::read(dir.join("router.bin"))?;
    let expect = layers * m * h * 4;
    if router_bytes.len() != expect {
        return Err(Error::Input(format!(
            "router.bin is {} bytes, expected {}",
            router_bytes.len(),
            expect
        )));
    }
    let floats = le_f32s(&router_bytes);
    let routers: Vec<Router> = (0..layers)
        .map(|l| {
            let chunk = floats[l * m * h..(l + 1) * m * h].to_vec();
            Ok(Router::new(Mat::from_vec(m, h, chunk)?))
        })
        .collect::<Result<_>>()?;

    let per_expert = ExpertWeights::byte_len(h, i);
    let mut experts = Vec::with_capacity(layers);
    for l in 0..layers {
        let bytes = fs::read(dir.join(format!("layer_{}.bin", l)))?;
        if bytes.len() != m * per_expert {
            return Err(Error::Input(format!(
                "layer_{}.bin is {} bytes, expected {}",
                l,
                bytes.len(),
                m * per_expert
            )));
        }
        let per_layer = bytes
            .chunks_exact(per_expert)
            .map(|blob| ExpertWeights::from_bytes(blob, h, i))
            .collect::<Result<Vec<_>>>()?;
        experts.push(per_layer);
    }

    let model = BaseModel {
        config,
        routers,
        experts,
    };
    model.validate()?;
    Ok(model)
}

fn le_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Dtype;

    fn toy_config() -> ModelConfig {
        ModelConfig {
            layers: 3,
            experts_per_layer: 4,
            top_k: 2,
            hidden_dim: 8,
            intermediate_dim: 6,
            dtype: Dtype::F32,
        }
    }

    #[test]
    fn same_seed_same_model_different_seed_different_model() {
        let cfg = toy_config();
        let a = gen_base_model(&cfg, 1).unwrap();
        let b = gen_base_model(&cfg, 1).unwrap();
        let c = gen_base_model(&cfg, 2).unwrap();
        assert_eq!(a.routers[0].weights(), b.routers[0].weights());
        assert_eq!(a.experts[2][3], b.experts[2][3]);
        assert_ne!(a.routers[0].weights(), c.routers[0].weights());
    }

    #[test]
    fn checkpoint_roundtrip_is_bitexact() {
        let cfg = toy_config();
        let model = gen_base_model(&cfg, 99).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_model(dir.path(), &model).unwrap();
        let back = load_model(dir.path()).unwrap();
        assert_eq!(back.config, model.config);
        for l in 0..cfg.layers {
            assert_eq!(back.routers[l].weights(), model.routers[l].weights());
            for e in 0..cfg.experts_per_layer {
                assert_eq!(back.experts[l][e], model.experts[l][e]);
            }
        }
    }

    #[test]
    fn truncated_checkpoint_rejected() {
        let cfg = toy_config();
        let model = gen_base_model(&cfg, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_model(dir.path(), &model).unwrap();
        let router = dir.path().join("router.bin");
        let bytes = fs::read(&router).unwrap();
        fs::write(&router, &bytes[..bytes.len() - 4]).unwrap();
        assert!(load_model(dir.path()).is_err());
    }
}
