//! Frozen point encoder: patch tokens plus an attribute-estimated class token.

use rand::Rng;

use crate::encoders::cloud::PointCloud;
use crate::encoders::latent::{AttrVector, ATTR_ACROSS, ATTR_RGB, ATTR_TALL};
use crate::encoders::world::Category;
use crate::encoders::FrozenEncoders;
use crate::error::{Error, Result};
use crate::pooling::{fps_tokens, FpsStart};
use crate::rng::stream;
use crate::tensor::{DType, Tensor};

pub const SHAPE_FEATURE_DIM: usize = 11;
pub const PATCH_FEATURE_DIM: usize = 8;
pub const PATCH_HIDDEN: usize = 32;

/// Per-category mean/spread of shape features over a canonical param grid.
#[derive(Debug, Clone)]
pub struct ShapePrototype {
    pub category: Category,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Geometry statistics in the per-axis-normalized frame.
///
/// Per-axis normalization removes scale and aspect, so most features depend
/// only on the shape family; the two extent ratios carry the aspect back in.
pub fn shape_features(cloud: &PointCloud) -> Vec<f64> {
    let (lo, hi) = cloud.bbox();
    let center = [
        (lo[0] + hi[0]) / 2.0,
        (lo[1] + hi[1]) / 2.0,
        (lo[2] + hi[2]) / 2.0,
    ];
    let half = [
        ((hi[0] - lo[0]) / 2.0).max(1e-9),
        ((hi[1] - lo[1]) / 2.0).max(1e-9),
        ((hi[2] - lo[2]) / 2.0).max(1e-9),
    ];
    let n = cloud.n as f64;

    let mut extents = [2.0 * half[0], 2.0 * half[1], 2.0 * half[2]];
    extents.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let f_mid = extents[1] / extents[2];
    let f_min = extents[0] / extents[2];

    let mut sum_r = 0.0;
    let mut sum_r2 = 0.0;
    let mut sum_rho = 0.0;
    let mut sum_rho2 = 0.0;
    let mut sum_z = 0.0;
    let mut sum_z2 = 0.0;
    let mut sum_rho_z = 0.0;
    let mut sum_x_z = 0.0;
    let mut sum_x = 0.0;
    let mut flat_frac = 0.0;
    let mut void_frac = 0.0;
    const BINS: usize = 16;
    let mut bin_sum = [0.0; BINS];
    let mut bin_count = [0usize; BINS];

    for i in 0..cloud.n {
        let p = cloud.xyz(i);
        let q = [
            (p[0] - center[0]) / half[0],
            (p[1] - center[1]) / half[1],
            (p[2] - center[2]) / half[2],
        ];
        let r = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt();
        let rho = (q[0] * q[0] + q[1] * q[1]).sqrt();
        sum_r += r;
        sum_r2 += r * r;
        sum_rho += rho;
        sum_rho2 += rho * rho;
        sum_z += q[2];
        sum_z2 += q[2] * q[2];
        sum_rho_z += rho * q[2];
        sum_x += q[0];
        sum_x_z += q[0] * q[2];
        if q[2].abs() > 0.9 {
            flat_frac += 1.0;
        }
        if rho < 0.35 {
            void_frac += 1.0;
        }
        let ang = q[1].atan2(q[0]);
        let bin = (((ang + std::f64::consts::PI) / (2.0 * std::f64::consts::PI)) * BINS as f64)
            .floor()
            .clamp(0.0, (BINS - 1) as f64) as usize;
        bin_sum[bin] += rho;
        bin_count[bin] += 1;
    }

    let mean_r = sum_r / n;
    let std_r = (sum_r2 / n - mean_r * mean_r).max(0.0).sqrt();
    let mean_rho = sum_rho / n;
    let std_rho = (sum_rho2 / n - mean_rho * mean_rho).max(0.0).sqrt();
    let mean_z = sum_z / n;
    let std_z = (sum_z2 / n - mean_z * mean_z).max(0.0).sqrt();
    let mean_x = sum_x / n;
    let cov_rho_z = sum_rho_z / n - mean_rho * mean_z;
    let corr_rho_z = if std_rho * std_z > 1e-9 {
        cov_rho_z / (std_rho * std_z)
    } else {
        0.0
    };
    let std_x = {
        let mut s = 0.0;
        for i in 0..cloud.n {
            let p = cloud.xyz(i);
            let qx = (p[0] - center[0]) / half[0];
            s += (qx - mean_x) * (qx - mean_x);
        }
        (s / n).sqrt()
    };
    let cov_x_z = sum_x_z / n - mean_x * mean_z;
    let corr_x_z = if std_x * std_z > 1e-9 {
        cov_x_z / (std_x * std_z)
    } else {
        0.0
    };

    let populated: Vec<f64> = (0..BINS)
        .filter(|&b| bin_count[b] > 0)
        .map(|b| bin_sum[b] / bin_count[b] as f64)
        .collect();
    let ang_mean = populated.iter().sum::<f64>() / populated.len().max(1) as f64;
    let ang_std = (populated
        .iter()
        .map(|v| (v - ang_mean) * (v - ang_mean))
        .sum::<f64>()
        / populated.len().max(1) as f64)
        .sqrt();

    vec![
        f_mid,
        f_min,
        mean_r,
        std_r,
        mean_rho,
        std_rho,
        corr_rho_z,
        ang_std,
        flat_frac / n,
        void_frac / n,
        corr_x_z.abs(),
    ]
}

/// Nearest prototype under per-feature standardized distance.
pub fn classify_shape(prototypes: &[ShapePrototype], features: &[f64]) -> Category {
    let mut best = (f64::INFINITY, Category::Ball);
    for proto in prototypes {
        let mut d = 0.0;
        for (f, (m, s)) in features
            .iter()
            .zip(proto.mean.iter().zip(proto.std.iter()))
        {
            let z = (f - m) / s;
            d += z * z;
        }
        if d < best.0 {
            best = (d, proto.category);
        }
    }
    best.1
}

/// Attributes recoverable from geometry: estimated category, mean color,
/// bounding-box footprint and height.
pub fn estimate_attributes(prototypes: &[ShapePrototype], cloud: &PointCloud) -> AttrVector {
    let category = classify_shape(prototypes, &shape_features(cloud));
    let (lo, hi) = cloud.bbox();
    let rgb = cloud.mean_rgb();
    let mut a = AttrVector::zero();
    a.0[category.index()] = 1.0;
    a.0[ATTR_RGB..ATTR_RGB + 3].copy_from_slice(&rgb);
    a.0[ATTR_ACROSS] = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    a.0[ATTR_TALL] = hi[2] - lo[2];
    a
}

/// Per-patch features, in the cloud's normalized frame.
fn patch_features(cloud: &PointCloud, center: usize, members: &[usize]) -> [f64; PATCH_FEATURE_DIM] {
    let (lo, hi) = cloud.bbox();
    let mid = [
        (lo[0] + hi[0]) / 2.0,
        (lo[1] + hi[1]) / 2.0,
        (lo[2] + hi[2]) / 2.0,
    ];
    let half = [
        ((hi[0] - lo[0]) / 2.0).max(1e-9),
        ((hi[1] - lo[1]) / 2.0).max(1e-9),
        ((hi[2] - lo[2]) / 2.0).max(1e-9),
    ];
    let c = cloud.xyz(center);
    let cq = [
        (c[0] - mid[0]) / half[0],
        (c[1] - mid[1]) / half[1],
        (c[2] - mid[2]) / half[2],
    ];
    let mut mean_rgb = [0.0; 3];
    let mut spread = 0.0;
    for &i in members {
        let p = cloud.xyz(i);
        let col = cloud.rgb(i);
        for j in 0..3 {
            mean_rgb[j] += col[j];
            let d = (p[j] - c[j]) / half[j];
            spread += d * d;
        }
    }
    let k = members.len() as f64;
    for v in &mut mean_rgb {
        *v /= k;
    }
    spread = (spread / k).sqrt();
    [
        cq[0],
        cq[1],
        cq[2],
        spread,
        mean_rgb[0],
        mean_rgb[1],
        mean_rgb[2],
        (cq[0] * cq[0] + cq[1] * cq[1]).sqrt(),
    ]
}

/// K nearest points to a center point, by raw xyz distance.
fn nearest_points(cloud: &PointCloud, center: usize, k: usize) -> Vec<usize> {
    let c = cloud.xyz(center);
    let mut by_dist: Vec<(f64, usize)> = (0..cloud.n)
        .map(|i| {
            let p = cloud.xyz(i);
            let d = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2);
            (d, i)
        })
        .collect();
    by_dist.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    by_dist.into_iter().take(k).map(|(_, i)| i).collect()
}

/// Frozen random two-layer patch embedding, seeded once per encoder.
#[derive(Debug, Clone)]
pub struct PatchMlp {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl PatchMlp {
    pub fn new(latent_dim: usize, seed: u64) -> Self {
        let mut rng = stream(seed, &[0x5041_5443_48]);
        let s1 = 1.0 / (PATCH_FEATURE_DIM as f64).sqrt();
        let s2 = 1.0 / (PATCH_HIDDEN as f64).sqrt();
        PatchMlp {
            w1: Tensor::randn(&[PATCH_FEATURE_DIM, PATCH_HIDDEN], s1, &mut rng, DType::F32),
            b1: Tensor::randn(&[PATCH_HIDDEN], 0.1, &mut rng, DType::F32),
            w2: Tensor::randn(&[PATCH_HIDDEN, latent_dim], s2, &mut rng, DType::F32),
            b2: Tensor::randn(&[latent_dim], 0.1, &mut rng, DType::F32),
        }
    }

    pub fn embed(&self, features: &[f64; PATCH_FEATURE_DIM]) -> Vec<f64> {
        let hidden: Vec<f64> = (0..PATCH_HIDDEN)
            .map(|j| {
                let mut s = self.b1.data()[j];
                for (i, f) in features.iter().enumerate() {
                    s += f * self.w1.get2(i, j);
                }
                s.tanh()
            })
            .collect();
        let out_dim = self.w2.cols();
        (0..out_dim)
            .map(|j| {
                let mut s = self.b2.data()[j];
                for (i, h) in hidden.iter().enumerate() {
                    s += h * self.w2.get2(i, j);
                }
                s
            })
            .collect()
    }
}

/// Encode a cloud into patch tokens (penultimate layer) plus a class token.
pub fn point_encode(enc: &FrozenEncoders, cloud: &PointCloud) -> Result<super::TokenSequence> {
    let patches = enc.cfg.patches;
    if cloud.n < patches {
        return Err(Error::InvalidArgument(format!(
            "cloud has {} points, need at least {patches} for patching",
            cloud.n
        )));
    }
    if !cloud.all_finite() {
        return Err(Error::NonFinite {
            context: "point_encode".into(),
            index: 0,
        });
    }
    let xyz_data: Vec<f64> = (0..cloud.n).flat_map(|i| cloud.xyz(i)).collect();
    let xyz = Tensor::matrix(cloud.n, 3, xyz_data)?;
    let centers = fps_tokens(&xyz, patches, FpsStart::Index0)?;

    let c = enc.cfg.latent_dim;
    let mut tokens = vec![0.0; patches * c];
    for (pi, &center) in centers.iter().enumerate() {
        let members = nearest_points(cloud, center, enc.cfg.patch_group.min(cloud.n));
        let feats = patch_features(cloud, center, &members);
        let emb = enc.patch_mlp.embed(&feats);
        tokens[pi * c..(pi + 1) * c].copy_from_slice(&emb);
    }

    let attrs = estimate_attributes(&enc.prototypes, cloud);
    let mut class = enc.latent.map(&attrs);
    let mut noise_rng = stream(
        enc.cfg.seed,
        &[0x504F_494E_54, crate::rng::content_key(&cloud_bytes(cloud))],
    );
    for v in class.iter_mut() {
        let g: f64 = noise_rng.sample(rand_distr::StandardNormal);
        *v += g * enc.cfg.modality_noise;
    }

    Ok(super::TokenSequence {
        tokens: Tensor::matrix(patches, c, tokens)?,
        class_token: Tensor::from_vec(&[c], class, DType::F64)?,
        source: super::Modality::Point,
        layer_tag: super::LayerTag::Penultimate,
    })
}

fn cloud_bytes(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.data.len() * 4);
    for &v in &cloud.data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// Build per-category prototypes over a small canonical parameter grid.
pub fn build_prototypes(map: &crate::encoders::latent::FrozenLatentMap, seed: u64) -> Vec<ShapePrototype> {
    const GRID: [f64; 3] = [0.1, 0.5, 0.9];
    let mut protos = Vec::with_capacity(Category::ALL.len());
    for cat in Category::ALL {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (gi, &p0) in GRID.iter().enumerate() {
            for (gj, &p1) in GRID.iter().enumerate() {
                let spec = crate::encoders::world::ObjectSpec::new(
                    format!("proto-{}-{gi}{gj}", cat.word()),
                    cat,
                    0,
                    0.7,
                    [p0, p1],
                    [false, false],
                    map,
                );
                let cloud =
                    crate::encoders::cloud::sample_point_cloud(&spec, 2048, seed).expect("proto cloud");
                rows.push(shape_features(&cloud));
            }
        }
        let dim = rows[0].len();
        let mut mean = vec![0.0; dim];
        for row in &rows {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= rows.len() as f64;
        }
        let mut std = vec![0.0; dim];
        for row in &rows {
            for ((s, v), m) in std.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        for s in &mut std {
            // Floor keeps features with no within-class spread usable.
            *s = (*s / rows.len() as f64).sqrt().max(0.04);
        }
        protos.push(ShapePrototype {
            category: cat,
            mean,
            std,
        });
    }
    protos
}
