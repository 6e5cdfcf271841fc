use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::geometry::{is_inside, norm, sub, surface_distance, SceneObject, Shape, Vec3};
use super::relations::RelationThresholds;
use super::ScenegenError;
use crate::featex::CameraIntrinsics;

/// An object category: its caption word, primitive, size range and colour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub name: String,
    pub shape: Shape,
    pub min_size: Vec3,
    pub max_size: Vec3,
    pub albedo: [f32; 3],
    /// Draw one random factor for all three axes.
    #[serde(default)]
    pub uniform_scale: bool,
}

impl Category {
    fn new(name: &str, shape: Shape, min_size: Vec3, max_size: Vec3, albedo: [f32; 3], uniform: bool) -> Self {
        Self {
            name: name.into(),
            shape,
            min_size,
            max_size,
            albedo,
            uniform_scale: uniform,
        }
    }

    fn sample_size(&self, rng: &mut ChaCha8Rng) -> Vec3 {
        if self.uniform_scale || self.shape == Shape::Sphere {
            let t: f64 = rng.gen();
            let s = self.min_size[0] + t * (self.max_size[0] - self.min_size[0]);
            return [s; 3];
        }
        let mut out = [0.0; 3];
        for i in 0..3 {
            out[i] = rng.gen_range(self.min_size[i]..=self.max_size[i]);
        }
        out
    }
}

pub fn default_categories() -> Vec<Category> {
    vec![
        Category::new("cube", Shape::Box, [0.8; 3], [1.2; 3], [0.85, 0.2, 0.2], true),
        Category::new("block", Shape::Box, [1.3, 0.5, 0.6], [1.8, 0.8, 0.9], [0.2, 0.35, 0.9], false),
        Category::new("sphere", Shape::Sphere, [0.8; 3], [1.2; 3], [0.2, 0.8, 0.3], true),
        Category::new("ball", Shape::Sphere, [0.5; 3], [0.7; 3], [0.95, 0.85, 0.15], true),
        Category::new("bin", Shape::Bin, [1.5, 1.1, 1.5], [1.9, 1.4, 1.9], [0.65, 0.45, 0.3], false),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub categories: Vec<Category>,
    pub intrinsics: CameraIntrinsics,
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_separation: f64,
    pub depth_range: (f64, f64),
    pub background_z: f64,
    pub background_albedo: [f32; 3],
    /// Chance that a new object is placed in contact with an earlier one.
    pub touch_probability: f64,
    /// Chance that a new object is placed inside an earlier bin.
    pub nest_probability: f64,
    /// Chance that a heading points at, or copies, another object's.
    pub aligned_heading_probability: f64,
    pub heading_markers: bool,
    /// Smallest visible area, in pixels, for each object.
    pub min_visible_pixels: usize,
    pub max_attempts: usize,
    pub thresholds: RelationThresholds,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            categories: default_categories(),
            intrinsics: CameraIntrinsics::centered(64, 64),
            min_objects: 2,
            max_objects: 4,
            min_separation: 0.5,
            depth_range: (3.0, 7.5),
            background_z: 12.0,
            background_albedo: [0.55, 0.55, 0.6],
            touch_probability: 0.25,
            nest_probability: 0.6,
            aligned_heading_probability: 0.5,
            heading_markers: true,
            min_visible_pixels: 6,
            max_attempts: 200,
            thresholds: RelationThresholds::default(),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), ScenegenError> {
        let k = &self.intrinsics;
        k.validate().map_err(|e| ScenegenError::Config(e.to_string()))?;
        if self.categories.len() < 2 {
            return Err(ScenegenError::Config("need at least two object categories".into()));
        }
        if k.width < 32 || k.height < 32 {
            return Err(ScenegenError::Config(format!("image {}×{} is below 32×32", k.width, k.height)));
        }
        if self.min_objects < 2 || self.max_objects < self.min_objects || self.max_objects > self.categories.len() {
            return Err(ScenegenError::Config(format!(
                "object count range {}..={} is invalid for {} categories",
                self.min_objects,
                self.max_objects,
                self.categories.len()
            )));
        }
        let (z0, z1) = self.depth_range;
        if !(z0 > 0.0 && z1 > z0 && self.background_z > z1 + 1.0) {
            return Err(ScenegenError::Config("depth range must be positive and in front of the background".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
}

fn random_heading(rng: &mut ChaCha8Rng) -> Vec3 {
    let a = rng.gen_range(0.0..std::f64::consts::TAU);
    [a.cos(), 0.0, a.sin()]
}

fn flat_unit(v: Vec3) -> Option<Vec3> {
    let h = [v[0], 0.0, v[2]];
    let n = norm(h);
    (n > 1e-9).then(|| [h[0] / n, 0.0, h[2] / n])
}

impl SceneConfig {
    fn on_screen(&self, c: Vec3) -> bool {
        let k = &self.intrinsics;
        let u = k.fx * c[0] / c[2] + k.cx;
        let v = k.fy * c[1] / c[2] + k.cy;
        let mx = 0.1 * k.width as f64;
        let my = 0.1 * k.height as f64;
        c[2] > 0.0 && u >= mx && u < k.width as f64 - mx && v >= my && v < k.height as f64 - my
    }

    fn free_position(&self, rng: &mut ChaCha8Rng) -> Vec3 {
        let k = &self.intrinsics;
        let z = rng.gen_range(self.depth_range.0..self.depth_range.1);
        let half_u = 0.8 * (k.width as f64 / 2.0) / k.fx * z;
        let half_v = 0.8 * (k.height as f64 / 2.0) / k.fy * z;
        let x = rng.gen_range(-half_u..half_u);
        let y = rng.gen_range(-half_v..half_v);
        [x, y, z]
    }

    /// Against a random earlier object, sliding along x until the gap
    /// closes to a few millimetres.
    fn touching_position(&self, new: &SceneObject, other: &SceneObject, rng: &mut ChaCha8Rng) -> Vec3 {
        let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let floor = other.center[1] + other.size[1] / 2.0 - new.size[1] / 2.0;
        let z = other.center[2] + rng.gen_range(-0.2..0.2) * other.size[2];
        let mut probe = new.clone();
        let at = |dx: f64, probe: &mut SceneObject| {
            probe.center = [other.center[0] + side * dx, floor, z];
            surface_distance(probe, other)
        };
        let (mut lo, mut hi) = (0.0, other.size[0] + new.size[0] + 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if at(mid, &mut probe) < 0.005 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        [other.center[0] + side * hi, floor, z]
    }

    /// Resting on the floor of a bin.
    fn nested_position(&self, new: &SceneObject, bin: &SceneObject, rng: &mut ChaCha8Rng) -> Option<Vec3> {
        let wall = 0.05;
        let mut c = bin.center;
        for i in [0, 2] {
            let room = bin.size[i] / 2.0 - new.size[i] / 2.0 - wall;
            if room <= 0.0 {
                return None;
            }
            let offset = if i == 0 { rng.gen_range(0.5 * room..room) } else { rng.gen_range(-room..room) };
            c[i] += if i == 0 && rng.gen_bool(0.5) { -offset } else { offset };
        }
        if new.size[1] + wall >= bin.size[1] {
            return None;
        }
        c[1] = bin.center[1] + bin.size[1] / 2.0 - new.size[1] / 2.0 - 0.005;
        Some(c)
    }

    fn placement_ok(&self, new: &SceneObject, placed: &[SceneObject]) -> bool {
        let bz = self.background_z;
        if !self.on_screen(new.center) || new.aabb().hi[2] >= bz - 0.5 || new.aabb().lo[2] <= 0.5 {
            return false;
        }
        placed.iter().all(|p| {
            let sep = norm(sub(new.center, p.center)) >= self.min_separation;
            let nested = is_inside(new, p) || is_inside(p, new);
            let clear = surface_distance(new, p) > 0.0;
            sep && (nested || clear)
        })
    }
}

/// Deterministic scene for a given random stream.
pub fn generate_scene_with(rng: &mut ChaCha8Rng, config: &SceneConfig) -> Result<Scene, ScenegenError> {
    config.validate()?;
    'attempt: for _ in 0..config.max_attempts {
        let count = rng.gen_range(config.min_objects..=config.max_objects);
        let mut cats: Vec<&Category> = config.categories.iter().collect();
        cats.shuffle(rng);
        cats.truncate(count);
        // Bins go first so later objects can be placed inside them.
        cats.sort_by_key(|c| c.shape != Shape::Bin);
        let mut objects: Vec<SceneObject> = Vec::with_capacity(count);
        for cat in cats {
            let mut obj = SceneObject {
                name: cat.name.clone(),
                shape: cat.shape,
                center: [0.0; 3],
                size: cat.sample_size(rng),
                albedo: cat.albedo,
                heading: random_heading(rng),
            };
            let mut placed = false;
            for _ in 0..40 {
                let roll: f64 = rng.gen();
                let bins: Vec<&SceneObject> = objects.iter().filter(|o| o.shape == Shape::Bin).collect();
                obj.center = if roll < config.nest_probability && !bins.is_empty() && obj.shape != Shape::Bin {
                    let bin = bins[rng.gen_range(0..bins.len())];
                    match config.nested_position(&obj, bin, rng) {
                        Some(c) => c,
                        None => config.free_position(rng),
                    }
                } else if roll < config.nest_probability + config.touch_probability && !objects.is_empty() {
                    let other = &objects[rng.gen_range(0..objects.len())];
                    config.touching_position(&obj, other, rng)
                } else {
                    config.free_position(rng)
                };
                if config.placement_ok(&obj, &objects) {
                    placed = true;
                    break;
                }
            }
            if !placed {
                continue 'attempt;
            }
            objects.push(obj);
        }
        for i in 0..objects.len() {
            if rng.gen_bool(config.aligned_heading_probability) {
                let j = (i + rng.gen_range(1..objects.len())) % objects.len();
                let h = if rng.gen_bool(0.6) {
                    flat_unit(sub(objects[j].center, objects[i].center))
                } else {
                    Some(objects[j].heading)
                };
                if let Some(h) = h {
                    objects[i].heading = h;
                }
            }
        }
        let scene = Scene { objects };
        let (_, maps) = super::render::render(&scene, config)?;
        if maps
            .masks
            .iter()
            .all(|m| m.data().iter().filter(|&&x| x > 0.0).count() >= config.min_visible_pixels)
        {
            return Ok(scene);
        }
    }
    Err(ScenegenError::Placement {
        attempts: config.max_attempts,
    })
}

pub fn generate_scene(seed: u64, config: &SceneConfig) -> Result<Scene, ScenegenError> {
    use rand::SeedableRng;
    generate_scene_with(&mut ChaCha8Rng::seed_from_u64(seed), config)
}
