use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SceneError};

/// Half size of the square ground plane, in world units.
pub const GROUND_HALF_SIZE: f64 = 14.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum SemanticClass {
    Sky = 0,
    Ground = 1,
    Building = 2,
    Roof = 3,
    Obstacle = 4,
}

impl SemanticClass {
    pub const ALL: [SemanticClass; 5] =
        [SemanticClass::Sky, SemanticClass::Ground, SemanticClass::Building, SemanticClass::Roof, SemanticClass::Obstacle];

    pub const COUNT: usize = 5;

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    /// Reference color of the class before tinting and shading.
    pub fn palette_color(self) -> [f32; 3] {
        match self {
            SemanticClass::Sky => [0.62, 0.76, 0.93],
            SemanticClass::Ground => [0.42, 0.45, 0.40],
            SemanticClass::Building => [0.80, 0.70, 0.55],
            SemanticClass::Roof => [0.60, 0.26, 0.20],
            SemanticClass::Obstacle => [0.24, 0.52, 0.26],
        }
    }

    /// Range of the shading factor applied to the palette color by the
    /// renderer. Sky is unshaded.
    pub fn shading_range(self) -> (f32, f32) {
        match self {
            SemanticClass::Sky => (1.0, 1.0),
            _ => (SHADE_MIN, SHADE_MAX),
        }
    }

    /// Class whose shaded palette segment `{k·color : k in shading_range}`
    /// is nearest (Euclidean RGB) to `rgb`.
    pub fn nearest_to(rgb: [f32; 3]) -> Self {
        *Self::ALL
            .iter()
            .min_by(|a, b| {
                let da = segment_dist2(**a, rgb);
                let db = segment_dist2(**b, rgb);
                da.partial_cmp(&db).unwrap()
            })
            .unwrap()
    }
}

pub(crate) const SHADE_MIN: f32 = 0.6;
pub(crate) const SHADE_MAX: f32 = 1.0;

fn segment_dist2(class: SemanticClass, rgb: [f32; 3]) -> f32 {
    let c = class.palette_color();
    let (lo, hi) = class.shading_range();
    let cc: f32 = c.iter().map(|v| v * v).sum();
    let k = ((0..3).map(|i| c[i] * rgb[i]).sum::<f32>() / cc).clamp(lo, hi);
    (0..3).map(|i| (k * c[i] - rgb[i]).powi(2)).sum()
}

/// Axis-aligned textured box standing on the ground.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxPrimitive {
    pub min: [f64; 3],
    pub max: [f64; 3],
    /// `Building` or `Obstacle`; the top face of a building is `Roof`.
    pub class: SemanticClass,
    /// Multiplicative tint applied to the class palette color.
    pub tint: [f32; 3],
    /// Period of the horizontal band texture on the side faces.
    pub band_period: f64,
}

impl BoxPrimitive {
    pub fn height(&self) -> f64 {
        self.max[1] - self.min[1]
    }

    fn overlaps_xz(&self, other: &BoxPrimitive, margin: f64) -> bool {
        self.min[0] - margin < other.max[0]
            && other.min[0] - margin < self.max[0]
            && self.min[2] - margin < other.max[2]
            && other.min[2] - margin < self.max[2]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    /// Inclusive range for the number of boxes.
    pub primitive_count: (usize, usize),
    /// Boxes are placed with |x|, |z| ≤ this value.
    pub city_half_size: f64,
    pub building_height: (f64, f64),
    pub obstacle_height: (f64, f64),
    pub footprint: (f64, f64),
    /// Probability that a box is a low obstacle rather than a building.
    pub obstacle_probability: f64,
    /// Maximum per-channel deviation of the tint from 1.
    pub tint_spread: f32,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            primitive_count: (5, 9),
            city_half_size: 5.0,
            building_height: (1.5, 4.0),
            obstacle_height: (0.3, 0.8),
            footprint: (1.0, 2.4),
            obstacle_probability: 0.2,
            tint_spread: 0.08,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDescription {
    pub seed: u64,
    pub params: SceneParams,
    pub boxes: Vec<BoxPrimitive>,
    /// World bounding box `(min, max)` containing every primitive,
    /// including the ground square.
    pub extent: ([f64; 3], [f64; 3]),
}

impl SceneDescription {
    /// Number of primitives including the ground plane.
    pub fn primitive_count(&self) -> usize {
        self.boxes.len() + 1
    }
}

pub fn generate_scene(seed: u64, params: &SceneParams) -> Result<SceneDescription> {
    let (lo, hi) = params.primitive_count;
    if lo > hi || hi == 0 {
        return Err(SceneError::InvalidParams(format!("empty primitive count range [{lo}, {hi}]")));
    }
    if params.footprint.0 <= 0.0 || params.footprint.0 > params.footprint.1 || params.city_half_size <= params.footprint.1 {
        return Err(SceneError::InvalidParams("footprint does not fit inside the city".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce9e_u64);
    let count = rng.random_range(lo..=hi);
    let mut boxes: Vec<BoxPrimitive> = Vec::with_capacity(count);
    let mut margin = 0.4;
    let mut attempts = 0;
    while boxes.len() < count {
        attempts += 1;
        if attempts % 500 == 0 {
            // crowded layout: allow boxes to touch
            margin = (margin * 0.5f64).max(-1.0);
        }
        let sx = rng.random_range(params.footprint.0..=params.footprint.1);
        let sz = rng.random_range(params.footprint.0..=params.footprint.1);
        let half = params.city_half_size;
        let x0 = rng.random_range(-half..=half - sx);
        let z0 = rng.random_range(-half..=half - sz);
        let obstacle = rng.random_bool(params.obstacle_probability);
        let (class, (h0, h1)) = if obstacle {
            (SemanticClass::Obstacle, params.obstacle_height)
        } else {
            (SemanticClass::Building, params.building_height)
        };
        let height = rng.random_range(h0..=h1);
        let spread = params.tint_spread;
        let tint = [
            1.0 + rng.random_range(-spread..=spread),
            1.0 + rng.random_range(-spread..=spread),
            1.0 + rng.random_range(-spread..=spread),
        ];
        let candidate = BoxPrimitive {
            min: [x0, 0.0, z0],
            max: [x0 + sx, height, z0 + sz],
            class,
            tint,
            band_period: rng.random_range(0.7..1.1),
        };
        if boxes.iter().all(|b| !b.overlaps_xz(&candidate, margin)) || attempts > 5000 {
            boxes.push(candidate);
        }
    }
    let top = boxes.iter().map(|b| b.max[1]).fold(0.0, f64::max);
    Ok(SceneDescription {
        seed,
        params: params.clone(),
        boxes,
        extent: ([-GROUND_HALF_SIZE, 0.0, -GROUND_HALF_SIZE], [GROUND_HALF_SIZE, top, GROUND_HALF_SIZE]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_seed() {
        let p = SceneParams::default();
        assert_eq!(generate_scene(0, &p).unwrap(), generate_scene(0, &p).unwrap());
    }

    #[test]
    fn forced_count() {
        let p = SceneParams { primitive_count: (5, 5), ..Default::default() };
        let s = generate_scene(3, &p).unwrap();
        assert_eq!(s.boxes.len(), 5);
        assert_eq!(s.primitive_count(), 6);
    }

    #[test]
    fn different_seeds_differ() {
        let p = SceneParams::default();
        assert_ne!(generate_scene(1, &p).unwrap().boxes, generate_scene(2, &p).unwrap().boxes);
    }

    #[test]
    fn rejects_empty_range() {
        let p = SceneParams { primitive_count: (4, 2), ..Default::default() };
        assert!(generate_scene(0, &p).is_err());
    }

    #[test]
    fn primitives_inside_extent() {
        let s = generate_scene(7, &SceneParams::default()).unwrap();
        for b in &s.boxes {
            for a in 0..3 {
                assert!(b.min[a] >= s.extent.0[a] && b.max[a] <= s.extent.1[a]);
            }
        }
    }

    #[test]
    fn nearest_palette_class() {
        for c in SemanticClass::ALL {
            assert_eq!(SemanticClass::nearest_to(c.palette_color()), c);
        }
    }
}
