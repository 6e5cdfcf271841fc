use super::generate::{Scene, SceneConfig};
use super::geometry::{add, dot, norm, scale, sphere_hit, SceneObject, Shape, Vec3};
use super::{ScenegenError, SpatialMaps};
use crate::featex::{backproject, Raster};

const MARKER_ALBEDO: [f32; 3] = [0.95, 0.95, 0.95];

/// Small sphere protruding from the object along its heading.
pub fn heading_marker(obj: &SceneObject) -> (Vec3, f64) {
    let h = obj.heading;
    let r = 0.18 * obj.size.iter().copied().fold(f64::INFINITY, f64::min);
    let reach = match obj.shape {
        Shape::Sphere => obj.radius(),
        _ => (h[0].abs() * obj.size[0] + h[2].abs() * obj.size[2]) / 2.0,
    };
    (add(obj.center, scale(h, reach + 0.5 * r)), r)
}

fn quantize(x: f32) -> f32 {
    (x.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Ray-cast rendering: for each pixel, the nearest surface along the ray
/// through its centre owns the pixel. Depth is planar (the ray has unit
/// forward component, so the ray parameter equals `z`).
pub fn render(scene: &Scene, config: &SceneConfig) -> Result<(Raster, SpatialMaps), ScenegenError> {
    let k = config.intrinsics;
    k.validate().map_err(|e| ScenegenError::Config(e.to_string()))?;
    let (w, h) = (k.width, k.height);
    let light = {
        let l = [-0.5, -1.0, -0.7];
        scale(l, 1.0 / norm(l))
    };
    let markers: Vec<(Vec3, f64)> = scene.objects.iter().map(heading_marker).collect();
    let mut image = Raster::zeros(h, w, 3);
    let mut depth = Raster::zeros(h, w, 1);
    let mut owner = vec![usize::MAX; h * w];
    for v in 0..h {
        for u in 0..w {
            let d = [(u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0];
            let mut best: Option<(f64, Vec3, usize, bool)> = None;
            for (i, obj) in scene.objects.iter().enumerate() {
                let mut consider = |t: f64, n: Vec3, marker: bool| {
                    if best.map_or(true, |b| t < b.0) {
                        best = Some((t, n, i, marker));
                    }
                };
                if let Some(hit) = obj.intersect([0.0; 3], d) {
                    consider(hit.t, hit.normal, false);
                }
                if config.heading_markers {
                    if let Some(hit) = sphere_hit(markers[i].0, markers[i].1, [0.0; 3], d) {
                        consider(hit.t, hit.normal, true);
                    }
                }
            }
            let (z, color) = match best {
                Some((t, n, i, marker)) if t < config.background_z => {
                    owner[v * w + u] = i;
                    let n = if dot(n, d) > 0.0 { scale(n, -1.0) } else { n };
                    let shade = (0.4 + 0.6 * dot(n, light).max(0.0)) as f32;
                    let albedo = if marker { MARKER_ALBEDO } else { scene.objects[i].albedo };
                    (t, albedo.map(|a| a * shade))
                }
                _ => (config.background_z, config.background_albedo),
            };
            depth.set(v, u, 0, z as f32);
            for (c, &x) in color.iter().enumerate() {
                image.set(v, u, c, quantize(x));
            }
        }
    }
    let mut masks = vec![Raster::zeros(h, w, 1); scene.objects.len()];
    let mut edges = Raster::zeros(h, w, 1);
    for v in 0..h {
        for u in 0..w {
            let o = owner[v * w + u];
            if o == usize::MAX {
                continue;
            }
            masks[o].set(v, u, 0, 1.0);
            let boundary = [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)].iter().any(|&(dv, du)| {
                let (nv, nu) = (v as i64 + dv, u as i64 + du);
                nv >= 0 && nu >= 0 && (nv as usize) < h && (nu as usize) < w && owner[nv as usize * w + nu as usize] != o
            });
            if boundary {
                edges.set(v, u, 0, 1.0);
            }
        }
    }
    let coords = backproject(&depth, &k).coords;
    Ok((
        image,
        SpatialMaps {
            depth,
            coords,
            edges,
            masks,
        },
    ))
}
