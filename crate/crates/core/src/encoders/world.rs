//! Synthetic object world: deterministic specs and templated captions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::latent::{
    AttrVector, FrozenLatentMap, ATTR_ACROSS, ATTR_DEPTH, ATTR_RGB, ATTR_TALL,
};
use crate::error::{Error, Result};
use crate::rng::stream;

pub const NUM_CATEGORIES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Ball,
    Box,
    Can,
    Cone,
    Donut,
    Pyramid,
    Plate,
    Capsule,
    Star,
    Wedge,
}

impl Category {
    pub const ALL: [Category; NUM_CATEGORIES] = [
        Category::Ball,
        Category::Box,
        Category::Can,
        Category::Cone,
        Category::Donut,
        Category::Pyramid,
        Category::Plate,
        Category::Capsule,
        Category::Star,
        Category::Wedge,
    ];

    pub fn word(self) -> &'static str {
        match self {
            Category::Ball => "ball",
            Category::Box => "box",
            Category::Can => "can",
            Category::Cone => "cone",
            Category::Donut => "donut",
            Category::Pyramid => "pyramid",
            Category::Plate => "plate",
            Category::Capsule => "capsule",
            Category::Star => "star",
            Category::Wedge => "wedge",
        }
    }

    pub fn from_word(word: &str) -> Option<Category> {
        Category::ALL.iter().copied().find(|c| c.word() == word)
    }

    pub fn index(self) -> usize {
        Category::ALL.iter().position(|&c| c == self).unwrap()
    }

    /// One-line usage phrase for conversation answers.
    pub fn usage(self) -> &'static str {
        match self {
            Category::Ball => "It can be used as a toy or for sports games",
            Category::Box => "It can be used to store or ship small items",
            Category::Can => "It can hold drinks or preserved food",
            Category::Cone => "It can mark a spot on a road or hold ice cream",
            Category::Donut => "It can serve as a sweet snack prop or a float ring",
            Category::Pyramid => "It can serve as a monument model or a paperweight",
            Category::Plate => "It can hold food on a table",
            Category::Capsule => "It can hold medicine or act as a small container",
            Category::Star => "It can decorate a tree or a wall",
            Category::Wedge => "It can prop open a door or split materials",
        }
    }

    /// Short phrase describing the characteristic geometry.
    pub fn shape_phrase(self) -> &'static str {
        match self {
            Category::Ball => "a smooth rounded body",
            Category::Box => "six flat rectangular faces",
            Category::Can => "a straight circular side wall with flat ends",
            Category::Cone => "a circular base tapering to a single point",
            Category::Donut => "a ring with a hole through the middle",
            Category::Pyramid => "a rectangular base rising to a sharp apex",
            Category::Plate => "a wide flat round surface",
            Category::Capsule => "a rounded tube with dome shaped ends",
            Category::Star => "five pointed arms around a flat center",
            Category::Wedge => "a sloped face over a triangular profile",
        }
    }
}

/// Named colors usable in captions; values stay clear of the [0,1] clamp so
/// per-point jitter never biases the measured mean.
pub const COLORS: [(&str, [f64; 3]); 12] = [
    ("red", [0.82, 0.12, 0.10]),
    ("green", [0.15, 0.65, 0.20]),
    ("blue", [0.15, 0.25, 0.80]),
    ("yellow", [0.90, 0.85, 0.15]),
    ("orange", [0.95, 0.55, 0.10]),
    ("purple", [0.55, 0.20, 0.70]),
    ("pink", [0.95, 0.60, 0.75]),
    ("brown", [0.50, 0.32, 0.15]),
    ("black", [0.08, 0.08, 0.08]),
    ("white", [0.92, 0.92, 0.92]),
    ("gray", [0.50, 0.50, 0.50]),
    ("cyan", [0.10, 0.75, 0.80]),
];

#[derive(Debug, Clone)]
pub struct ObjectSpec {
    pub id: String,
    pub category: Category,
    pub color: [f64; 3],
    pub color_word: &'static str,
    /// Characteristic scale; all extents stay within it.
    pub size: f64,
    pub shape_params: [f64; 2],
    pub part_flags: [bool; 2],
    /// Latent of the true attribute vector under the frozen map.
    pub latent: Vec<f64>,
}

impl ObjectSpec {
    pub fn new(
        id: String,
        category: Category,
        color_idx: usize,
        size: f64,
        shape_params: [f64; 2],
        part_flags: [bool; 2],
        map: &FrozenLatentMap,
    ) -> ObjectSpec {
        let (color_word, color) = COLORS[color_idx];
        let mut spec = ObjectSpec {
            id,
            category,
            color,
            color_word,
            size,
            shape_params,
            part_flags,
            latent: Vec::new(),
        };
        spec.latent = map.map(&spec.attr_vector());
        spec
    }

    /// Half extents (hx, hy, hz) of the surface around its center.
    pub fn half_extents(&self) -> [f64; 3] {
        let s = self.size;
        let [p0, p1] = self.shape_params;
        let h = s / 2.0;
        match self.category {
            Category::Ball => [h, h, h * (0.8 + 0.2 * p1)],
            Category::Box => [h, h * (0.6 + 0.4 * p0), h * (0.5 + 0.5 * p1)],
            Category::Can => [h, h, h * (0.6 + 0.4 * p1)],
            Category::Cone => [h, h, h * (0.7 + 0.3 * p1)],
            Category::Donut => [h, h, h * (0.2 + 0.1 * p1)],
            Category::Pyramid => [h, h * (0.8 + 0.2 * p0), h * (0.6 + 0.4 * p1)],
            Category::Plate => [h, h, h * (0.05 + 0.05 * p1)],
            Category::Capsule => [h * (0.45 + 0.15 * p0), h * (0.45 + 0.15 * p0), h],
            // A five-point star of circumradius h spans cos(18 deg) in x and
            // (1 + sin(54 deg)) / 2 in y around its bounding-box center.
            Category::Star => [h * 0.951_056_5, h * 0.904_508_5, h * (0.12 + 0.08 * p1)],
            Category::Wedge => [h, h * (0.7 + 0.3 * p0), h * (0.5 + 0.5 * p1)],
        }
    }

    /// Footprint extent ("across") and height ("tall") as captioned.
    pub fn extents_across_tall(&self) -> (f64, f64) {
        let [hx, hy, hz] = self.half_extents();
        ((2.0 * hx).max(2.0 * hy), 2.0 * hz)
    }

    /// Ground-truth attribute vector in the shared encoder space.
    pub fn attr_vector(&self) -> AttrVector {
        let mut a = AttrVector::zero();
        a.0[self.category.index()] = 1.0;
        a.0[ATTR_RGB..ATTR_RGB + 3].copy_from_slice(&self.color);
        let (across, tall) = self.extents_across_tall();
        a.0[ATTR_ACROSS] = across;
        a.0[ATTR_TALL] = tall;
        a
    }
}

#[derive(Debug, Clone)]
pub struct World {
    pub seed: u64,
    pub objects: Vec<ObjectSpec>,
    pub captions: Vec<String>,
}

const WORLD_STREAM: u64 = 0x574F_524C_44;

fn caption_for(spec: &ObjectSpec, rng: &mut impl Rng) -> String {
    let (across, tall) = spec.extents_across_tall();
    let finish = if spec.part_flags[0] { "glossy" } else { "matte" };
    let stance = if spec.part_flags[1] {
        " resting on a flat base"
    } else {
        ""
    };
    let color = spec.color_word;
    let cat = spec.category.word();
    let shape = spec.category.shape_phrase();
    match rng.random_range(0..3u32) {
        0 => format!(
            "A {color} {cat} with a {finish} finish{stance}, about {across:.2} units across and {tall:.2} units tall, showing {shape}."
        ),
        1 => format!(
            "A {color} {cat} model{stance}, roughly {across:.2} units across and {tall:.2} units tall, with {shape} and a {finish} surface."
        ),
        _ => format!(
            "This 3D asset is a {color} {cat}, around {across:.2} units across and {tall:.2} units tall, featuring {shape}."
        ),
    }
}

/// Deterministically generate `num_objects` specs with paired captions.
pub fn synth_world(num_objects: usize, seed: u64, map: &FrozenLatentMap) -> Result<World> {
    if num_objects == 0 {
        return Err(Error::InvalidArgument(
            "synth_world needs at least one object".into(),
        ));
    }
    let items: Vec<usize> = (0..num_objects).collect();
    let pairs = crate::par::map_indexed(&items, |idx, _| {
        let mut rng = stream(seed, &[WORLD_STREAM, idx as u64]);
        let category = Category::ALL[rng.random_range(0..NUM_CATEGORIES)];
        let color_idx = rng.random_range(0..COLORS.len());
        let size = rng.random_range(0.35..0.95);
        let shape_params = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
        let part_flags = [rng.random_bool(0.5), rng.random_bool(0.5)];
        let spec = ObjectSpec::new(
            format!("obj-{idx:06}"),
            category,
            color_idx,
            size,
            shape_params,
            part_flags,
            map,
        );
        let caption = caption_for(&spec, &mut rng);
        (spec, caption)
    });
    let (objects, captions) = pairs.into_iter().unzip();
    Ok(World {
        seed,
        objects,
        captions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map() -> FrozenLatentMap {
        FrozenLatentMap::new(64, 1).unwrap()
    }

    #[test]
    fn world_is_deterministic() {
        let m = map();
        let a = synth_world(1, 7, &m).unwrap();
        let b = synth_world(1, 7, &m).unwrap();
        assert_eq!(a.captions, b.captions);
        assert_eq!(a.objects[0].latent, b.objects[0].latent);
        assert_eq!(a.objects[0].color, b.objects[0].color);
    }

    #[test]
    fn captions_mention_color_and_category() {
        let m = map();
        let w = synth_world(50, 3, &m).unwrap();
        for (spec, caption) in w.objects.iter().zip(&w.captions) {
            assert!(caption.contains(spec.color_word), "{caption}");
            assert!(caption.contains(spec.category.word()), "{caption}");
        }
    }

    #[test]
    fn large_world_covers_all_categories() {
        let m = map();
        let w = synth_world(1000, 0, &m).unwrap();
        for cat in Category::ALL {
            assert!(
                w.objects.iter().any(|o| o.category == cat),
                "missing {:?}",
                cat
            );
        }
    }

    #[test]
    fn zero_objects_is_an_error() {
        assert!(synth_world(0, 1, &map()).is_err());
    }

    #[test]
    fn extents_stay_inside_the_unit_cube() {
        let m = map();
        let w = synth_world(200, 11, &m).unwrap();
        for o in &w.objects {
            for h in o.half_extents() {
                assert!(h > 0.0 && h < 0.5, "{:?} {h}", o.category);
            }
        }
    }
}
