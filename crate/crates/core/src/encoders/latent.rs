//! Shared frozen attribute-to-latent map.
//!
//! Both encoders reduce their input to the same attribute vector layout and
//! push it through one frozen orthonormal linear map into latent space.
//! Orthonormal columns preserve inner products exactly, so the cosine
//! structure of attribute space carries over to class tokens unchanged;
//! the only cross-modal discrepancy is each encoder's estimation error plus
//! an explicit modality perturbation.

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tensor::{DType, Tensor};

/// Attribute slots: 10 category one-hot, 3 rgb, three bounding extents.
pub const ATTR_DIM: usize = 16;

pub const ATTR_RGB: usize = 10;
pub const ATTR_ACROSS: usize = 13;
pub const ATTR_DEPTH: usize = 14;
pub const ATTR_TALL: usize = 15;

/// Per-slot weights applied inside the latent map. Extents get extra mass:
/// they are the continuous slots that tell two objects of the same category
/// and color apart, and both encoders recover them to about a centiunit.
const ATTR_WEIGHTS: [f64; ATTR_DIM] = [
    1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, // category
    1.0, 1.0, 1.0, // rgb
    2.0, 2.0, 2.0, // extents
];

/// Latent norm in units of sqrt(latent_dim); sets the signal-to-noise ratio
/// against the modality perturbation.
const LATENT_SCALE: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct AttrVector(pub [f64; ATTR_DIM]);

impl AttrVector {
    pub fn zero() -> Self {
        AttrVector([0.0; ATTR_DIM])
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn cosine(&self, other: &AttrVector) -> f64 {
        let dot: f64 = self.0.iter().zip(other.0.iter()).map(|(a, b)| a * b).sum();
        let n = self.norm() * other.norm();
        if n < 1e-12 {
            0.0
        } else {
            dot / n
        }
    }
}

/// Frozen orthonormal-column map from attribute space into latent space.
#[derive(Debug, Clone)]
pub struct FrozenLatentMap {
    /// latent_dim x ATTR_DIM, columns orthonormal.
    columns: Tensor,
    latent_dim: usize,
}

impl FrozenLatentMap {
    pub fn new(latent_dim: usize, seed: u64) -> Result<Self> {
        if latent_dim < ATTR_DIM {
            return Err(Error::InvalidArgument(format!(
                "latent dim {latent_dim} must be >= attribute dim {ATTR_DIM}"
            )));
        }
        let mut rng = stream(seed, &[0x4C41_5445_4E54]);
        let raw = Tensor::randn(&[latent_dim, ATTR_DIM], 1.0, &mut rng, DType::F64);
        // Modified Gram-Schmidt over columns.
        let mut cols: Vec<Vec<f64>> = (0..ATTR_DIM)
            .map(|j| (0..latent_dim).map(|i| raw.get2(i, j)).collect())
            .collect();
        for j in 0..ATTR_DIM {
            for prev in 0..j {
                let dot: f64 = cols[j].iter().zip(&cols[prev]).map(|(a, b)| a * b).sum();
                let prev_col = cols[prev].clone();
                for (v, p) in cols[j].iter_mut().zip(&prev_col) {
                    *v -= dot * p;
                }
            }
            let norm: f64 = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in cols[j].iter_mut() {
                *v /= norm;
            }
        }
        let mut data = vec![0.0; latent_dim * ATTR_DIM];
        for (j, col) in cols.iter().enumerate() {
            for i in 0..latent_dim {
                data[i * ATTR_DIM + j] = col[i];
            }
        }
        Ok(FrozenLatentMap {
            columns: Tensor::matrix(latent_dim, ATTR_DIM, data)?,
            latent_dim,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    /// Map an attribute vector to a latent of fixed norm.
    ///
    /// Slot weights apply first; cosines between weighted attribute vectors
    /// carry to the latents exactly. The zero vector maps to zero.
    pub fn map(&self, attr: &AttrVector) -> Vec<f64> {
        let weighted: Vec<f64> = attr
            .0
            .iter()
            .zip(ATTR_WEIGHTS.iter())
            .map(|(v, w)| v * w)
            .collect();
        let norm: f64 = weighted.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut out = vec![0.0; self.latent_dim];
        if norm < 1e-12 {
            return out;
        }
        let scale = LATENT_SCALE * (self.latent_dim as f64).sqrt() / norm;
        for i in 0..self.latent_dim {
            let row = self.columns.row(i);
            let mut s = 0.0;
            for j in 0..ATTR_DIM {
                s += row[j] * weighted[j];
            }
            out[i] = s * scale;
        }
        out
    }

    /// Cosine between two attribute vectors after slot weighting; the map
    /// preserves exactly this quantity.
    pub fn weighted_cosine(a: &AttrVector, b: &AttrVector) -> f64 {
        let wa: Vec<f64> = a.0.iter().zip(ATTR_WEIGHTS.iter()).map(|(v, w)| v * w).collect();
        let wb: Vec<f64> = b.0.iter().zip(ATTR_WEIGHTS.iter()).map(|(v, w)| v * w).collect();
        cosine(&wa, &wb)
    }

    pub fn columns(&self) -> &Tensor {
        &self.columns
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na * nb < 1e-12 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn columns_are_orthonormal() {
        let map = FrozenLatentMap::new(32, 5).unwrap();
        let q = map.columns();
        for a in 0..ATTR_DIM {
            for b in 0..ATTR_DIM {
                let dot: f64 = (0..32).map(|i| q.get2(i, a) * q.get2(i, b)).sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-10, "col {a} . col {b} = {dot}");
            }
        }
    }

    #[test]
    fn map_preserves_weighted_cosines() {
        let map = FrozenLatentMap::new(48, 9).unwrap();
        let mut a = AttrVector::zero();
        a.0[0] = 1.0;
        a.0[10] = 0.5;
        let mut b = AttrVector::zero();
        b.0[0] = 1.0;
        b.0[13] = 0.8;
        let la = map.map(&a);
        let lb = map.map(&b);
        assert!((cosine(&la, &lb) - FrozenLatentMap::weighted_cosine(&a, &b)).abs() < 1e-10);
    }

    #[test]
    fn zero_attr_maps_to_zero() {
        let map = FrozenLatentMap::new(32, 1).unwrap();
        assert!(map.map(&AttrVector::zero()).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn latent_norm_is_fixed() {
        let map = FrozenLatentMap::new(64, 2).unwrap();
        let mut a = AttrVector::zero();
        a.0[3] = 1.0;
        a.0[11] = 0.7;
        let l = map.map(&a);
        let norm: f64 = l.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 16.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_latent_dim_below_attr_dim() {
        assert!(FrozenLatentMap::new(8, 0).is_err());
    }
}
