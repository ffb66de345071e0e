//! Procedural RGB-D scenes of box-shaped furniture for fixtures and demos.
//!
//! Objects are axis-aligned boxes standing on a floor. Frames come from a
//! camera orbiting the room; color and depth are ray-cast exactly, and the
//! point cloud samples the visible box faces. Coordinates are narrowed to
//! `f32` and depth to whole millimeters at generation time, so a bundle
//! reloaded from disk is identical to the in-memory one.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::pipeline::bench::QueryLine;
use crate::scene::{
    mask_to_box3d, write_scene_bundle, Box3D, CameraFrame, DepthMap, InstanceMask, Intrinsics,
    Point, PointCloud, Pose, SceneBundle,
};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub width: u32,
    pub height: u32,
    pub frames: u32,
    /// Instances of the queried category (target plus distractors).
    pub same_category: usize,
    pub category: String,
    pub points_per_object: usize,
    pub orbit_radius: f64,
    pub camera_height: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            width: 128,
            height: 96,
            frames: 80,
            same_category: 4,
            category: "chair".into(),
            points_per_object: 400,
            orbit_radius: 4.5,
            camera_height: 2.6,
        }
    }
}

#[derive(Debug, Clone)]
struct Object {
    category: String,
    bounds: Box3D,
    color: [u8; 3],
}

#[derive(Debug, Clone, Serialize)]
pub struct SyntheticQuery {
    pub text: String,
    pub target_instance: u32,
    pub gt_category: String,
    pub gt_box: Box3D,
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub bundle: SceneBundle,
    pub queries: Vec<SyntheticQuery>,
}

const OTHER_OBJECTS: &[(&str, [f64; 3], [u8; 3])] = &[
    ("table", [1.2, 0.8, 0.75], [150, 100, 60]),
    ("cabinet", [0.6, 0.5, 1.1], [90, 90, 160]),
];

fn f32_round(v: f64) -> f64 {
    v as f32 as f64
}

fn ray_box(origin: [f64; 3], dir: [f64; 3], b: &Box3D) -> Option<(f64, usize)> {
    let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
    let mut axis = 0;
    for k in 0..3 {
        if dir[k].abs() < 1e-12 {
            if origin[k] < b.min[k] || origin[k] > b.max[k] {
                return None;
            }
            continue;
        }
        let (mut a, mut c) = (
            (b.min[k] - origin[k]) / dir[k],
            (b.max[k] - origin[k]) / dir[k],
        );
        if a > c {
            std::mem::swap(&mut a, &mut c);
        }
        if a > t0 {
            t0 = a;
            axis = k;
        }
        t1 = t1.min(c);
        if t0 > t1 {
            return None;
        }
    }
    (t0 > 1e-9).then_some((t0, axis))
}

fn render(objects: &[Object], pose: &Pose, k: &Intrinsics, w: u32, h: u32) -> (RgbImage, DepthMap) {
    let inv = pose.inverse().0;
    let origin = [inv[0][3], inv[1][3], inv[2][3]];
    let mut image = RgbImage::new(w, h);
    let mut depth = DepthMap::filled(w, h, 0.0);
    for v in 0..h {
        for u in 0..w {
            let dc = [(u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0];
            let dir: [f64; 3] =
                [0, 1, 2].map(|r| inv[r][0] * dc[0] + inv[r][1] * dc[1] + inv[r][2] * dc[2]);
            // with z_c = 1 along `dc`, the ray parameter equals camera depth
            let mut best: Option<(f64, Rgb<u8>)> = None;
            for o in objects {
                if let Some((t, axis)) = ray_box(origin, dir, &o.bounds) {
                    if best.is_none_or(|(bt, _)| t < bt) {
                        let shade = [1.0, 0.8, 0.6][axis];
                        best = Some((t, Rgb(o.color.map(|c| (c as f64 * shade) as u8))));
                    }
                }
            }
            if dir[2] < -1e-9 {
                let t = -origin[2] / dir[2];
                if best.is_none_or(|(bt, _)| t < bt) {
                    let x = origin[0] + t * dir[0];
                    let y = origin[1] + t * dir[1];
                    let checker = ((x.floor() + y.floor()) as i64).rem_euclid(2) == 0;
                    best = Some((
                        t,
                        Rgb(if checker {
                            [200, 200, 190]
                        } else {
                            [170, 170, 160]
                        }),
                    ));
                }
            }
            if let Some((t, c)) = best {
                image.put_pixel(u, v, c);
                let mm = (t * 1000.0).round().min(65535.0) / 1000.0;
                depth.set(u, v, mm as f32);
            }
        }
    }
    (image, depth)
}

/// Points on the five non-floor faces of `b`, narrowed to `f32`.
fn sample_box(b: &Box3D, n: usize, color: [u8; 3], rng: &mut ChaCha8Rng) -> Vec<Point> {
    let e = b.extent();
    let areas = [
        e[1] * e[2],
        e[1] * e[2],
        e[0] * e[2],
        e[0] * e[2],
        e[0] * e[1],
    ];
    let total: f64 = areas.iter().sum();
    let mut pts = Vec::with_capacity(n);
    for _ in 0..n {
        let mut pick = rng.gen_range(0.0..total);
        let mut face = 0;
        while face < 4 && pick > areas[face] {
            pick -= areas[face];
            face += 1;
        }
        let mut p = [0, 1, 2].map(|k| rng.gen_range(b.min[k]..=b.max[k]));
        match face {
            0 => p[0] = b.min[0],
            1 => p[0] = b.max[0],
            2 => p[1] = b.min[1],
            3 => p[1] = b.max[1],
            _ => p[2] = b.max[2],
        }
        pts.push(Point {
            xyz: p.map(f32_round),
            rgb: color,
        });
    }
    pts
}

/// A scene with `cfg.same_category` instances of `cfg.category` plus a table
/// and a cabinet, and one query per same-category instance.
pub fn generate_scene(scene_id: &str, cfg: &SyntheticConfig, seed: u64) -> Result<SyntheticScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // non-overlapping placement on a jittered 5x5 grid of 1.1 m cells
    let mut cells: Vec<(i32, i32)> = (-2..=2)
        .flat_map(|i| (-2..=2).map(move |j| (i, j)))
        .collect();
    let n_objects = cfg.same_category + OTHER_OBJECTS.len();
    if n_objects > cells.len() {
        return Err(Error::InvalidInput(format!(
            "too many objects ({n_objects})"
        )));
    }
    rand::seq::SliceRandom::shuffle(&mut cells[..], &mut rng);

    let mut objects = Vec::new();
    for (slot, &(i, j)) in cells.iter().take(n_objects).enumerate() {
        let (category, size, color) = if slot < cfg.same_category {
            let tint = rng.gen_range(0..60);
            (
                cfg.category.as_str(),
                [0.5, 0.5, 0.9],
                [200 - tint, 40 + tint, 40],
            )
        } else {
            let (c, s, col) = OTHER_OBJECTS[slot - cfg.same_category];
            (c, s, col)
        };
        let cx = i as f64 * 1.1 + rng.gen_range(-0.15..0.15);
        let cy = j as f64 * 1.1 + rng.gen_range(-0.15..0.15);
        let bounds = Box3D::new(
            [cx - size[0] / 2.0, cy - size[1] / 2.0, 0.0].map(f32_round),
            [cx + size[0] / 2.0, cy + size[1] / 2.0, size[2]].map(f32_round),
        )
        .expect("positive size");
        objects.push(Object {
            category: category.to_string(),
            bounds,
            color,
        });
    }

    let mut points = Vec::new();
    let mut masks = Vec::new();
    for (id, o) in objects.iter().enumerate() {
        let start = points.len() as u32;
        points.extend(sample_box(
            &o.bounds,
            cfg.points_per_object,
            o.color,
            &mut rng,
        ));
        masks.push(InstanceMask {
            instance_id: id as u32,
            category: o.category.clone(),
            confidence: (rng.gen_range(0.5f64..1.0) * 1000.0).round() / 1000.0,
            point_indices: (start..points.len() as u32).collect(),
        });
    }
    // floor samples, with a low-confidence spurious mask over a few of them
    let floor_start = points.len() as u32;
    for _ in 0..600 {
        let xyz = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), 0.0].map(f32_round);
        points.push(Point {
            xyz,
            rgb: [185, 185, 175],
        });
    }
    masks.push(InstanceMask {
        instance_id: objects.len() as u32,
        category: cfg.category.clone(),
        confidence: 0.1,
        point_indices: (floor_start..floor_start + 50).collect(),
    });
    let cloud = PointCloud::new(points).map_err(Error::InvalidInput)?;

    let k = Intrinsics {
        fx: cfg.width as f64 * 0.6,
        fy: cfg.width as f64 * 0.6,
        cx: cfg.width as f64 / 2.0,
        cy: cfg.height as f64 / 2.0,
    };
    let phase = rng.gen_range(0.0..TAU);
    let frames: Vec<CameraFrame> = (0..cfg.frames)
        .into_par_iter()
        .map(|f| {
            let a = phase + TAU * f as f64 / cfg.frames as f64;
            let eye = [
                cfg.orbit_radius * a.cos(),
                cfg.orbit_radius * a.sin(),
                cfg.camera_height,
            ];
            let pose = Pose::look_at(eye, [0.0, 0.0, 0.3], [0.0, 0.0, 1.0]);
            let (image, depth) = render(&objects, &pose, &k, cfg.width, cfg.height);
            CameraFrame {
                frame_id: f,
                image,
                depth,
                intrinsics: k,
                pose,
            }
        })
        .collect();

    let bundle = SceneBundle::new(scene_id, cloud, frames, masks)?;
    let phrases = [
        "the {c} next to the table",
        "a {c} standing near the cabinet",
        "the {c} in the corner of the room",
        "the red {c} by the wall",
        "find the {c} that is closest to the window",
        "the {c} facing the table",
    ];
    let queries = bundle
        .masks
        .iter()
        .filter(|m| m.category == cfg.category && m.confidence >= 0.5)
        .enumerate()
        .map(|(n, m)| SyntheticQuery {
            text: format!(
                "{} (#{n})",
                phrases[n % phrases.len()].replace("{c}", &cfg.category)
            ),
            target_instance: m.instance_id,
            gt_category: cfg.category.clone(),
            gt_box: mask_to_box3d(m, &bundle.cloud),
        })
        .collect();
    Ok(SyntheticScene { bundle, queries })
}

/// Writes `count` scenes under `<dir>/bundles/` and their queries to
/// `<dir>/queries.jsonl`, keeping at most `queries_per_scene` per scene.
/// Scene `i` has `2 + i % 5` distractors. Returns the query lines written.
pub fn write_fixture_suite(
    dir: &Path,
    count: usize,
    queries_per_scene: usize,
    seed: u64,
) -> Result<Vec<QueryLine>> {
    let bundles = dir.join("bundles");
    fs::create_dir_all(&bundles).map_err(|e| Error::io(&bundles, e))?;
    let mut lines = Vec::new();
    for i in 0..count {
        let cfg = SyntheticConfig {
            same_category: 3 + i % 5,
            ..Default::default()
        };
        let id = format!("synth_{i:03}");
        let scene = generate_scene(&id, &cfg, seed.wrapping_add(i as u64))?;
        write_scene_bundle(&scene.bundle, bundles.join(&id))?;
        lines.extend(
            scene
                .queries
                .into_iter()
                .take(queries_per_scene)
                .map(|q| QueryLine {
                    scene_id: id.clone(),
                    query: q.text,
                    gt_box: q.gt_box,
                    gt_category: q.gt_category,
                }),
        );
    }
    let text: String = lines
        .iter()
        .map(|l| serde_json::to_string(l).expect("serializable") + "\n")
        .collect();
    let qp = dir.join("queries.jsonl");
    fs::write(&qp, text).map_err(|e| Error::io(&qp, e))?;
    Ok(lines)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ray_hits_nearest_face() {
        let b = Box3D::new([1.0, -1.0, -1.0], [2.0, 1.0, 1.0]).unwrap();
        let (t, axis) = ray_box([0.0; 3], [1.0, 0.0, 0.0], &b).unwrap();
        assert_eq!((t, axis), (1.0, 0));
        assert!(ray_box([0.0; 3], [-1.0, 0.0, 0.0], &b).is_none());
    }

    #[test]
    fn scene_is_valid_and_seeded() {
        let cfg = SyntheticConfig {
            frames: 4,
            width: 64,
            height: 48,
            ..Default::default()
        };
        let a = generate_scene("s", &cfg, 3).unwrap();
        let b = generate_scene("s", &cfg, 3).unwrap();
        assert_eq!(a.bundle, b.bundle);
        a.bundle.validate().unwrap();
        assert_eq!(a.queries.len(), cfg.same_category);
        for q in &a.queries {
            let m = a
                .bundle
                .masks
                .iter()
                .find(|m| m.instance_id == q.target_instance)
                .unwrap();
            assert_eq!(mask_to_box3d(m, &a.bundle.cloud), q.gt_box);
        }
        // rendered depth sees something in every frame
        for f in &a.bundle.frames {
            assert!(f.depth.as_slice().iter().any(|&d| d > 0.0));
        }
    }
}
