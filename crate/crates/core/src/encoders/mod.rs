//! Frozen, mutually aligned text and point encoders over a synthetic world.
//!
//! Both encoders reduce their input to one shared attribute space (category,
//! color, extents) and map it through the same frozen orthonormal latent map,
//! so paired captions and clouds land on nearby class tokens by construction.
//! This stands in for a pre-aligned multimodal encoder pair: the text side
//! parses attributes out of templated captions, the point side estimates the
//! same attributes from geometry, and an explicit per-modality perturbation
//! models the residual gap. Nothing in this module ever trains.

mod cloud;
mod latent;
mod point;
mod text;
mod world;

pub use cloud::{read_cloud, sample_point_cloud, write_cloud, CloudSidecar, PointCloud};
pub use latent::{cosine, AttrVector, FrozenLatentMap, ATTR_ACROSS, ATTR_DIM, ATTR_RGB, ATTR_TALL};
pub use point::{
    build_prototypes, classify_shape, estimate_attributes, shape_features, PatchMlp,
    ShapePrototype,
};
pub use text::caption_attributes;
pub use world::{synth_world, Category, ObjectSpec, World, COLORS, NUM_CATEGORIES};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Text,
    Point,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerTag {
    Final,
    Penultimate,
}

/// Encoder output: N feature tokens plus one class token, dimension C.
#[derive(Debug, Clone)]
pub struct TokenSequence {
    /// N x C feature tokens.
    pub tokens: Tensor,
    /// Length-C global summary token.
    pub class_token: Tensor,
    pub source: Modality,
    /// Layer the feature tokens come from; the class token is always final.
    pub layer_tag: LayerTag,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Token dimension C, shared by both encoders.
    pub latent_dim: usize,
    /// Point patch token count N.
    pub patches: usize,
    /// Points aggregated per patch.
    pub patch_group: usize,
    /// Std of the per-modality class-token perturbation.
    pub modality_noise: f64,
    /// Default points per sampled cloud.
    pub points: usize,
    /// Seed for all frozen weights in this module.
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            latent_dim: 64,
            patches: 512,
            patch_group: 8,
            modality_noise: 0.05,
            points: 1024,
            seed: 1,
        }
    }
}

/// The frozen encoder pair. Construction derives every weight from the
/// config seed; no operation here ever mutates them.
#[derive(Debug, Clone)]
pub struct FrozenEncoders {
    pub cfg: EncoderConfig,
    pub(crate) latent: FrozenLatentMap,
    pub(crate) patch_mlp: PatchMlp,
    pub(crate) prototypes: Vec<ShapePrototype>,
}

impl FrozenEncoders {
    pub fn new(cfg: EncoderConfig) -> Result<Self> {
        let latent = FrozenLatentMap::new(cfg.latent_dim, cfg.seed)?;
        let patch_mlp = PatchMlp::new(cfg.latent_dim, cfg.seed);
        let prototypes = build_prototypes(&latent, cfg.seed);
        Ok(FrozenEncoders {
            cfg,
            latent,
            patch_mlp,
            prototypes,
        })
    }

    pub fn latent_map(&self) -> &FrozenLatentMap {
        &self.latent
    }

    pub fn text_encode(&self, caption: &str) -> TokenSequence {
        text::text_encode(self, caption)
    }

    pub fn point_encode(&self, cloud: &PointCloud) -> Result<TokenSequence> {
        point::point_encode(self, cloud)
    }

    pub fn estimate_category(&self, cloud: &PointCloud) -> Category {
        classify_shape(&self.prototypes, &shape_features(cloud))
    }

    /// Digest over every frozen weight; equality before and after a
    /// training run certifies the encoders never trained.
    pub fn frozen_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.latent.columns().to_f32_le_bytes());
        h.update(self.patch_mlp.w1.to_f32_le_bytes());
        h.update(self.patch_mlp.b1.to_f32_le_bytes());
        h.update(self.patch_mlp.w2.to_f32_le_bytes());
        h.update(self.patch_mlp.b2.to_f32_le_bytes());
        for p in &self.prototypes {
            for v in p.mean.iter().chain(p.std.iter()) {
                h.update((*v as f32).to_le_bytes());
            }
        }
        h.finalize().into()
    }
}
