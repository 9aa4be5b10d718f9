//! Point clouds: surface sampling and the n x 6 file format.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::world::{Category, ObjectSpec};
use crate::error::{Error, Result};
use crate::rng::stream;

/// n x 6 point cloud: xyz in the unit cube, rgb in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub n: usize,
    /// Row-major [x, y, z, r, g, b] per point.
    pub data: Vec<f64>,
}

impl PointCloud {
    pub fn xyz(&self, i: usize) -> [f64; 3] {
        let o = i * 6;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn rgb(&self, i: usize) -> [f64; 3] {
        let o = i * 6;
        [self.data[o + 3], self.data[o + 4], self.data[o + 5]]
    }

    pub fn mean_rgb(&self) -> [f64; 3] {
        let mut m = [0.0; 3];
        for i in 0..self.n {
            let c = self.rgb(i);
            for j in 0..3 {
                m[j] += c[j];
            }
        }
        for v in &mut m {
            *v /= self.n as f64;
        }
        m
    }

    /// Per-axis (min, max) over xyz.
    pub fn bbox(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for i in 0..self.n {
            let p = self.xyz(i);
            for j in 0..3 {
                lo[j] = lo[j].min(p[j]);
                hi[j] = hi[j].max(p[j]);
            }
        }
        (lo, hi)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

const POINT_JITTER: f64 = 0.01;
const COLOR_JITTER: f64 = 0.03;
const CLOUD_STREAM: u64 = 0x434C_4F55_44;

/// Uniform point inside a triangle.
fn sample_triangle(a: [f64; 3], b: [f64; 3], c: [f64; 3], rng: &mut impl Rng) -> [f64; 3] {
    let mut u: f64 = rng.random_range(0.0..1.0);
    let mut v: f64 = rng.random_range(0.0..1.0);
    if u + v > 1.0 {
        u = 1.0 - u;
        v = 1.0 - v;
    }
    let mut p = [0.0; 3];
    for j in 0..3 {
        p[j] = a[j] + u * (b[j] - a[j]) + v * (c[j] - a[j]);
    }
    p
}

fn triangle_area(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let x = u[1] * v[2] - u[2] * v[1];
    let y = u[2] * v[0] - u[0] * v[2];
    let z = u[0] * v[1] - u[1] * v[0];
    0.5 * (x * x + y * y + z * z).sqrt()
}

/// Pick an index by weight; weights need not be normalized.
fn pick_weighted(weights: &[f64], rng: &mut impl Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut t = rng.random_range(0.0..total);
    for (i, &w) in weights.iter().enumerate() {
        if t < w {
            return i;
        }
        t -= w;
    }
    weights.len() - 1
}

fn unit_sphere_dir(rng: &mut impl Rng) -> [f64; 3] {
    loop {
        let g: [f64; 3] = [
            rng.sample(rand_distr::StandardNormal),
            rng.sample(rand_distr::StandardNormal),
            rng.sample(rand_distr::StandardNormal),
        ];
        let n = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
        if n > 1e-9 {
            return [g[0] / n, g[1] / n, g[2] / n];
        }
    }
}

/// One surface point in the object's centered frame.
fn sample_surface(spec: &ObjectSpec, rng: &mut impl Rng) -> [f64; 3] {
    let [hx, hy, hz] = spec.half_extents();
    match spec.category {
        Category::Ball => {
            let d = unit_sphere_dir(rng);
            [d[0] * hx, d[1] * hy, d[2] * hz]
        }
        Category::Box => {
            let areas = [hy * hz, hy * hz, hx * hz, hx * hz, hx * hy, hx * hy];
            let face = pick_weighted(&areas, rng);
            let u = rng.random_range(-1.0..1.0);
            let v = rng.random_range(-1.0..1.0);
            match face {
                0 => [hx, u * hy, v * hz],
                1 => [-hx, u * hy, v * hz],
                2 => [u * hx, hy, v * hz],
                3 => [u * hx, -hy, v * hz],
                4 => [u * hx, v * hy, hz],
                _ => [u * hx, v * hy, -hz],
            }
        }
        Category::Can | Category::Plate => {
            let r = hx;
            let lateral = 2.0 * PI * r * (2.0 * hz);
            let cap = PI * r * r;
            match pick_weighted(&[lateral, cap, cap], rng) {
                0 => {
                    let th = rng.random_range(0.0..2.0 * PI);
                    let z = rng.random_range(-hz..hz);
                    [r * th.cos(), r * th.sin(), z]
                }
                which => {
                    let th = rng.random_range(0.0..2.0 * PI);
                    let rho = r * rng.random_range(0.0..1.0f64).sqrt();
                    let z = if which == 1 { hz } else { -hz };
                    [rho * th.cos(), rho * th.sin(), z]
                }
            }
        }
        Category::Cone => {
            let r = hx;
            let h = 2.0 * hz;
            let slant = (r * r + h * h).sqrt();
            let lateral = PI * r * slant;
            let base = PI * r * r;
            let th = rng.random_range(0.0..2.0 * PI);
            if pick_weighted(&[lateral, base], rng) == 0 {
                // Area grows linearly with distance from the apex.
                let t = rng.random_range(0.0..1.0f64).sqrt();
                let rho = t * r;
                let z = hz - t * h;
                [rho * th.cos(), rho * th.sin(), z]
            } else {
                let rho = r * rng.random_range(0.0..1.0f64).sqrt();
                [rho * th.cos(), rho * th.sin(), -hz]
            }
        }
        Category::Donut => {
            let tube = hz;
            let ring = hx - tube;
            let th = rng.random_range(0.0..2.0 * PI);
            let phi = loop {
                let phi = rng.random_range(0.0..2.0 * PI);
                let accept = (ring + tube * phi.cos()) / (ring + tube);
                if rng.random_range(0.0..1.0) <= accept {
                    break phi;
                }
            };
            let rho = ring + tube * phi.cos();
            [rho * th.cos(), rho * th.sin(), tube * phi.sin()]
        }
        Category::Pyramid => {
            let apex = [0.0, 0.0, hz];
            let base = [
                [-hx, -hy, -hz],
                [hx, -hy, -hz],
                [hx, hy, -hz],
                [-hx, hy, -hz],
            ];
            let mut faces: Vec<([f64; 3], [f64; 3], [f64; 3])> = (0..4)
                .map(|i| (base[i], base[(i + 1) % 4], apex))
                .collect();
            faces.push((base[0], base[1], base[2]));
            faces.push((base[0], base[2], base[3]));
            let areas: Vec<f64> = faces
                .iter()
                .map(|&(a, b, c)| triangle_area(a, b, c))
                .collect();
            let (a, b, c) = faces[pick_weighted(&areas, rng)];
            sample_triangle(a, b, c, rng)
        }
        Category::Capsule => {
            let r = hx;
            let cyl_h = hz - r;
            let lateral = 2.0 * PI * r * (2.0 * cyl_h);
            let caps = 4.0 * PI * r * r;
            if pick_weighted(&[lateral, caps], rng) == 0 {
                let th = rng.random_range(0.0..2.0 * PI);
                let z = rng.random_range(-cyl_h..cyl_h);
                [r * th.cos(), r * th.sin(), z]
            } else {
                let d = unit_sphere_dir(rng);
                let center = if d[2] >= 0.0 { cyl_h } else { -cyl_h };
                [d[0] * r, d[1] * r, center + d[2] * r]
            }
        }
        Category::Star => {
            let outer = spec.size / 2.0;
            let inner = outer * (0.38 + 0.12 * spec.shape_params[0]);
            // 10 alternating vertices, one arm pointing along +y.
            let verts: Vec<[f64; 2]> = (0..10)
                .map(|i| {
                    let r = if i % 2 == 0 { outer } else { inner };
                    let ang = PI / 2.0 + i as f64 * PI / 5.0;
                    [r * ang.cos(), r * ang.sin()]
                })
                .collect();
            // Faces: fan triangles (top/bottom) + side rectangles.
            let mut tris: Vec<([f64; 2], [f64; 2])> = Vec::new();
            for i in 0..10 {
                tris.push((verts[i], verts[(i + 1) % 10]));
            }
            let tri_areas: Vec<f64> = tris
                .iter()
                .map(|&(a, b)| {
                    triangle_area([0.0, 0.0, 0.0], [a[0], a[1], 0.0], [b[0], b[1], 0.0])
                })
                .collect();
            let face_area: f64 = tri_areas.iter().sum();
            let side_lens: Vec<f64> = tris
                .iter()
                .map(|&(a, b)| ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt())
                .collect();
            let side_area: f64 = side_lens.iter().map(|l| l * 2.0 * hz).sum();
            match pick_weighted(&[face_area, face_area, side_area], rng) {
                which @ (0 | 1) => {
                    let i = pick_weighted(&tri_areas, rng);
                    let (a, b) = tris[i];
                    let z = if which == 0 { hz } else { -hz };
                    let p = sample_triangle(
                        [0.0, 0.0, z],
                        [a[0], a[1], z],
                        [b[0], b[1], z],
                        rng,
                    );
                    p
                }
                _ => {
                    let i = pick_weighted(&side_lens, rng);
                    let (a, b) = tris[i];
                    let t = rng.random_range(0.0..1.0);
                    let z = rng.random_range(-hz..hz);
                    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), z]
                }
            }
        }
        Category::Wedge => {
            // Right-triangle cross-section in xz, prism along y.
            let a2 = [-hx, -hz];
            let b2 = [hx, -hz];
            let c2 = [-hx, hz];
            let tri = 0.5 * (2.0 * hx) * (2.0 * hz);
            let bottom = 2.0 * hx * 2.0 * hy;
            let back = 2.0 * hz * 2.0 * hy;
            let hyp_len = ((2.0 * hx).powi(2) + (2.0 * hz).powi(2)).sqrt();
            let hyp = hyp_len * 2.0 * hy;
            match pick_weighted(&[tri, tri, bottom, back, hyp], rng) {
                which @ (0 | 1) => {
                    let y = if which == 0 { hy } else { -hy };
                    sample_triangle(
                        [a2[0], y, a2[1]],
                        [b2[0], y, b2[1]],
                        [c2[0], y, c2[1]],
                        rng,
                    )
                }
                2 => [
                    rng.random_range(-hx..hx),
                    rng.random_range(-hy..hy),
                    -hz,
                ],
                3 => [
                    -hx,
                    rng.random_range(-hy..hy),
                    rng.random_range(-hz..hz),
                ],
                _ => {
                    let t = rng.random_range(0.0..1.0);
                    [
                        b2[0] + t * (c2[0] - b2[0]),
                        rng.random_range(-hy..hy),
                        b2[1] + t * (c2[1] - b2[1]),
                    ]
                }
            }
        }
    }
}

/// Sample `n` surface points with positional and color jitter.
///
/// Output xyz sits in the unit cube centered at (0.5, 0.5, 0.5); identical
/// (spec, n, seed) triples produce identical clouds.
pub fn sample_point_cloud(spec: &ObjectSpec, n: usize, seed: u64) -> Result<PointCloud> {
    if n < 64 {
        return Err(Error::InvalidArgument(format!(
            "point cloud needs n >= 64, got {n}"
        )));
    }
    let mut rng = stream(seed, &[CLOUD_STREAM, crate::rng::content_key(spec.id.as_bytes())]);
    let mut data = Vec::with_capacity(n * 6);
    for _ in 0..n {
        let p = sample_surface(spec, &mut rng);
        for v in p {
            let jittered = v + rng.random_range(-POINT_JITTER..POINT_JITTER) + 0.5;
            data.push(jittered.clamp(0.0, 1.0));
        }
        for c in spec.color {
            let jittered = c + rng.random_range(-COLOR_JITTER..COLOR_JITTER);
            data.push(jittered.clamp(0.0, 1.0));
        }
    }
    Ok(PointCloud { n, data })
}

/// JSON sidecar accompanying each binary cloud file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CloudSidecar {
    pub id: String,
    pub category: String,
    pub n: usize,
}

/// Write `<id>.bin` (LE f32, row-major n x 6) plus `<id>.json`.
pub fn write_cloud(dir: &Path, id: &str, category: Category, cloud: &PointCloud) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut bytes = Vec::with_capacity(cloud.data.len() * 4);
    for &v in &cloud.data {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut f = fs::File::create(dir.join(format!("{id}.bin")))?;
    f.write_all(&bytes)?;
    let sidecar = CloudSidecar {
        id: id.to_string(),
        category: category.word().to_string(),
        n: cloud.n,
    };
    fs::write(
        dir.join(format!("{id}.json")),
        serde_json::to_string(&sidecar)?,
    )?;
    Ok(())
}

/// Read a cloud written by [`write_cloud`] given the `.bin` path.
pub fn read_cloud(bin_path: &Path) -> Result<(PointCloud, CloudSidecar)> {
    let bytes = fs::read(bin_path)?;
    if bytes.len() % 24 != 0 {
        return Err(Error::Validation(format!(
            "cloud file {} is not a whole number of n x 6 f32 rows",
            bin_path.display()
        )));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let n = data.len() / 6;
    let sidecar_path = bin_path.with_extension("json");
    let sidecar: CloudSidecar = serde_json::from_str(&fs::read_to_string(&sidecar_path)?)?;
    if sidecar.n != n {
        return Err(Error::Validation(format!(
            "sidecar n={} does not match cloud rows {n}",
            sidecar.n
        )));
    }
    Ok((PointCloud { n, data }, sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::latent::FrozenLatentMap;
    use crate::encoders::world::synth_world;

    fn spec_of(cat: Category) -> ObjectSpec {
        let map = FrozenLatentMap::new(64, 1).unwrap();
        ObjectSpec::new(
            format!("test-{}", cat.word()),
            cat,
            0,
            0.8,
            [0.5, 0.5],
            [false, false],
            &map,
        )
    }

    #[test]
    fn sphere_points_sit_on_the_surface() {
        let spec = spec_of(Category::Ball);
        let cloud = sample_point_cloud(&spec, 512, 3).unwrap();
        let [hx, _, hz] = spec.half_extents();
        for i in 0..cloud.n {
            let [x, y, z] = cloud.xyz(i);
            let (cx, cy, cz) = (x - 0.5, y - 0.5, z - 0.5);
            let r = (cx * cx / (hx * hx) + cy * cy / (hx * hx) + cz * cz / (hz * hz)).sqrt();
            assert!((r - 1.0).abs() < 0.08, "normalized radius {r}");
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = spec_of(Category::Star);
        let a = sample_point_cloud(&spec, 128, 9).unwrap();
        let b = sample_point_cloud(&spec, 128, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mean_color_tracks_the_spec() {
        let map = FrozenLatentMap::new(64, 1).unwrap();
        let world = synth_world(12, 5, &map).unwrap();
        for spec in &world.objects {
            let cloud = sample_point_cloud(spec, 1024, 0).unwrap();
            let mean = cloud.mean_rgb();
            for j in 0..3 {
                assert!(
                    (mean[j] - spec.color[j]).abs() < 0.05,
                    "{:?} channel {j}: {} vs {}",
                    spec.category,
                    mean[j],
                    spec.color[j]
                );
            }
        }
    }

    #[test]
    fn rejects_tiny_clouds() {
        let spec = spec_of(Category::Box);
        assert!(sample_point_cloud(&spec, 63, 0).is_err());
    }

    #[test]
    fn measured_extents_track_spec_extents() {
        let map = FrozenLatentMap::new(64, 1).unwrap();
        let world = synth_world(30, 2, &map).unwrap();
        for spec in &world.objects {
            let cloud = sample_point_cloud(spec, 1024, 1).unwrap();
            let (lo, hi) = cloud.bbox();
            let [hx, hy, hz] = spec.half_extents();
            let expect = [2.0 * hx, 2.0 * hy, 2.0 * hz];
            for j in 0..3 {
                let measured = hi[j] - lo[j];
                assert!(
                    (measured - expect[j]).abs() < 0.08,
                    "{:?} axis {j}: {measured} vs {}",
                    spec.category,
                    expect[j]
                );
            }
        }
    }

    #[test]
    fn cloud_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = spec_of(Category::Donut);
        let cloud = sample_point_cloud(&spec, 128, 4).unwrap();
        write_cloud(dir.path(), &spec.id, spec.category, &cloud).unwrap();
        let (back, sidecar) = read_cloud(&dir.path().join(format!("{}.bin", spec.id))).unwrap();
        assert_eq!(back.n, cloud.n);
        assert_eq!(sidecar.category, "donut");
        // f32 round trip loses at most f32 precision.
        for (a, b) in back.data.iter().zip(&cloud.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
