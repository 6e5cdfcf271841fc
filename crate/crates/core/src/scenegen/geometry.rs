use serde::{Deserialize, Serialize};

pub type Vec3 = [f64; 3];

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    /// Axis-aligned cuboid.
    Box,
    /// Sphere; `size[0]` is the diameter.
    Sphere,
    /// Axis-aligned cuboid shell with no front (camera-facing) wall.
    Bin,
}

/// Axis-aligned box given by its corners. Zero thickness is allowed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub lo: Vec3,
    pub hi: Vec3,
}

impl Aabb {
    pub fn around(center: Vec3, size: Vec3) -> Self {
        let h = scale(size, 0.5);
        Self {
            lo: sub(center, h),
            hi: add(center, h),
        }
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        (0..3).all(|i| other.lo[i] > self.lo[i] && other.hi[i] < self.hi[i])
    }

    pub fn overlaps_on(&self, other: &Aabb, axis: usize) -> bool {
        self.lo[axis] < other.hi[axis] && other.lo[axis] < self.hi[axis]
    }

    pub fn gap_on(&self, other: &Aabb, axis: usize) -> f64 {
        (other.lo[axis] - self.hi[axis]).max(self.lo[axis] - other.hi[axis]).max(0.0)
    }

    /// Euclidean distance between the closest points; zero when they meet.
    pub fn gap(&self, other: &Aabb) -> f64 {
        norm([self.gap_on(other, 0), self.gap_on(other, 1), self.gap_on(other, 2)])
    }

    pub fn distance_to_point(&self, p: Vec3) -> f64 {
        let d: Vec<f64> = (0..3).map(|i| (self.lo[i] - p[i]).max(p[i] - self.hi[i]).max(0.0)).collect();
        norm([d[0], d[1], d[2]])
    }

    /// Entry and exit parameters of the ray `o + t·d`, if it meets the box.
    pub fn ray_interval(&self, o: Vec3, d: Vec3) -> Option<(f64, f64)> {
        let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..3 {
            if d[i].abs() < 1e-15 {
                if o[i] < self.lo[i] || o[i] > self.hi[i] {
                    return None;
                }
                continue;
            }
            let a = (self.lo[i] - o[i]) / d[i];
            let b = (self.hi[i] - o[i]) / d[i];
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
        (t0 <= t1).then_some((t0, t1))
    }
}

/// A surface hit: ray parameter and outward normal of the face or sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub normal: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub name: String,
    pub shape: Shape,
    /// Camera frame: x right, y down, z forward. Metres.
    pub center: Vec3,
    pub size: Vec3,
    pub albedo: [f32; 3],
    /// Unit facing direction in the horizontal (x–z) plane.
    pub heading: Vec3,
}

impl SceneObject {
    pub fn aabb(&self) -> Aabb {
        Aabb::around(self.center, self.size)
    }

    pub fn radius(&self) -> f64 {
        self.size[0] / 2.0
    }

    pub fn diagonal(&self) -> f64 {
        norm(self.size)
    }

    /// The five walls of a bin as zero-thickness boxes.
    pub fn bin_walls(&self) -> [Aabb; 5] {
        let b = self.aabb();
        let (lo, hi) = (b.lo, b.hi);
        [
            Aabb { lo: [lo[0], lo[1], hi[2]], hi },
            Aabb { lo, hi: [lo[0], hi[1], hi[2]] },
            Aabb { lo: [hi[0], lo[1], lo[2]], hi },
            Aabb { lo, hi: [hi[0], lo[1], hi[2]] },
            Aabb { lo: [lo[0], hi[1], lo[2]], hi },
        ]
    }

    /// Solid pieces used for distance queries.
    fn pieces(&self) -> Vec<Aabb> {
        match self.shape {
            Shape::Bin => self.bin_walls().to_vec(),
            _ => vec![self.aabb()],
        }
    }

    /// Nearest intersection with `t > 0` of the ray from `o` along `d`.
    pub fn intersect(&self, o: Vec3, d: Vec3) -> Option<Hit> {
        match self.shape {
            Shape::Sphere => sphere_hit(self.center, self.radius(), o, d),
            Shape::Box => box_hit(&self.aabb(), o, d),
            Shape::Bin => self
                .bin_walls()
                .iter()
                .filter_map(|w| box_hit(w, o, d))
                .min_by(|a, b| a.t.total_cmp(&b.t)),
        }
    }
}

pub(crate) fn sphere_hit(c: Vec3, r: f64, o: Vec3, d: Vec3) -> Option<Hit> {
    let oc = sub(o, c);
    let a = dot(d, d);
    let b = 2.0 * dot(oc, d);
    let cc = dot(oc, oc) - r * r;
    let disc = b * b - 4.0 * a * cc;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t = [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)]
        .into_iter()
        .find(|&t| t > 1e-9)?;
    let p = add(o, scale(d, t));
    Some(Hit {
        t,
        normal: scale(sub(p, c), 1.0 / r),
    })
}

fn box_hit(b: &Aabb, o: Vec3, d: Vec3) -> Option<Hit> {
    let (t0, t1) = b.ray_interval(o, d)?;
    let t = if t0 > 1e-9 {
        t0
    } else if t1 > 1e-9 {
        t1
    } else {
        return None;
    };
    let p = add(o, scale(d, t));
    let mut normal = [0.0; 3];
    let mut best = f64::INFINITY;
    for i in 0..3 {
        for (face, sign) in [(b.lo[i], -1.0), (b.hi[i], 1.0)] {
            let e = (p[i] - face).abs();
            if e < best {
                best = e;
                normal = [0.0; 3];
                normal[i] = sign;
            }
        }
    }
    Some(Hit { t, normal })
}

/// Distance between the surfaces of two objects. Negative for spheres that
/// interpenetrate, zero for boxes that meet or overlap. For an object
/// inside a bin this is the clearance to the nearest wall.
pub fn surface_distance(a: &SceneObject, b: &SceneObject) -> f64 {
    match (a.shape, b.shape) {
        (Shape::Sphere, Shape::Sphere) => norm(sub(a.center, b.center)) - a.radius() - b.radius(),
        (Shape::Sphere, _) => sphere_to_pieces(a, &b.pieces()),
        (_, Shape::Sphere) => sphere_to_pieces(b, &a.pieces()),
        _ => {
            let (pa, pb) = (a.pieces(), b.pieces());
            pa.iter()
                .flat_map(|x| pb.iter().map(move |y| x.gap(y)))
                .fold(f64::INFINITY, f64::min)
        }
    }
}

fn sphere_to_pieces(s: &SceneObject, pieces: &[Aabb]) -> f64 {
    pieces
        .iter()
        .map(|p| p.distance_to_point(s.center) - s.radius())
        .fold(f64::INFINITY, f64::min)
}

/// `a` lies strictly within the bin `b`.
pub fn is_inside(a: &SceneObject, b: &SceneObject) -> bool {
    b.shape == Shape::Bin && b.aabb().contains_box(&a.aabb())
}

/// Angle in degrees between two vectors projected onto the x–z plane.
pub fn planar_angle(a: Vec3, b: Vec3) -> f64 {
    let (a2, b2) = ([a[0], 0.0, a[2]], [b[0], 0.0, b[2]]);
    let (na, nb) = (norm(a2), norm(b2));
    if na == 0.0 || nb == 0.0 {
        return 90.0;
    }
    (dot(a2, b2) / (na * nb)).clamp(-1.0, 1.0).acos().to_degrees()
}
