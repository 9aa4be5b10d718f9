//! Frozen text encoder: caption parsing into the shared attribute space.

use rand::Rng;

use crate::encoders::latent::{AttrVector, ATTR_ACROSS, ATTR_RGB, ATTR_TALL};
use crate::encoders::world::{Category, COLORS};
use crate::encoders::FrozenEncoders;
use crate::rng::{content_key, stream};
use crate::tensor::{DType, Tensor};

/// Parse caption text into the shared attribute vector.
///
/// First recognized category word fills the one-hot slot, first recognized
/// color word fills rgb, and the first two numeric literals fill the
/// footprint/height extents. Anything unparseable leaves its slots at zero.
pub fn caption_attributes(caption: &str) -> AttrVector {
    let mut attrs = AttrVector::zero();
    let mut category: Option<Category> = None;
    let mut color: Option<[f64; 3]> = None;
    let mut numbers: Vec<f64> = Vec::new();
    for raw in caption.split_whitespace() {
        let word: String = raw
            .chars()
            .filter(|c| !c.is_ascii_punctuation())
            .collect::<String>()
            .to_ascii_lowercase();
        if word.is_empty() {
            continue;
        }
        if category.is_none() {
            category = Category::from_word(&word);
        }
        if color.is_none() {
            color = COLORS.iter().find(|(w, _)| *w == word).map(|(_, c)| *c);
        }
        if numbers.len() < 2 {
            // Numeric literals keep their decimal point; "3d" and friends
            // fail the parse and fall through.
            let cleaned: String = raw
                .chars()
                .filter(|c| c.is_ascii_digit() || *c == '.')
                .collect();
            if !cleaned.is_empty() && cleaned != "3" {
                if let Ok(v) = cleaned.trim_matches('.').parse::<f64>() {
                    if raw.contains('.') {
                        numbers.push(v);
                    }
                }
            }
        }
    }
    if let Some(cat) = category {
        attrs.0[cat.index()] = 1.0;
    }
    if let Some(rgb) = color {
        attrs.0[ATTR_RGB..ATTR_RGB + 3].copy_from_slice(&rgb);
    }
    if let Some(&w) = numbers.first() {
        attrs.0[ATTR_ACROSS] = w;
    }
    if let Some(&h) = numbers.get(1) {
        attrs.0[ATTR_TALL] = h;
    }
    attrs
}

/// Encode a caption: per-word tokens plus an attribute class token.
///
/// Deterministic per string: the modality perturbation is keyed by the
/// caption's content hash, so identical captions encode identically.
pub fn text_encode(enc: &FrozenEncoders, caption: &str) -> super::TokenSequence {
    let c = enc.cfg.latent_dim;
    let words: Vec<&str> = caption.split_whitespace().collect();
    let n = words.len().max(1);
    let mut tokens = vec![0.0; n * c];
    for (wi, word) in words.iter().enumerate() {
        let mut rng = stream(enc.cfg.seed, &[0x574F_5244, content_key(word.as_bytes())]);
        for j in 0..c {
            let g: f64 = rng.sample(rand_distr::StandardNormal);
            tokens[wi * c + j] = g;
        }
    }

    let attrs = caption_attributes(caption);
    let mut class = enc.latent.map(&attrs);
    let mut noise_rng = stream(enc.cfg.seed, &[0x5445_5854, content_key(caption.as_bytes())]);
    for v in class.iter_mut() {
        let g: f64 = noise_rng.sample(rand_distr::StandardNormal);
        *v += g * enc.cfg.modality_noise;
    }

    super::TokenSequence {
        tokens: Tensor::matrix(n, c, tokens).expect("word tokens"),
        class_token: Tensor::from_vec(&[c], class, DType::F64).expect("class token"),
        source: super::Modality::Text,
        layer_tag: super::LayerTag::Final,
    }
}
