//! Point-to-pixel projection with depth-consistent visibility, and view ranking.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::scene::{CameraFrame, DepthMap, InstanceMask, Intrinsics, PointCloud, Pose};
use crate::{Error, Result};

/// Camera-space depth at or below which a point counts as behind the camera.
pub const MIN_CAMERA_DEPTH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Sub-pixel image coordinates before rounding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    /// Nearest integer pixel, rounding halves away from zero.
    pub fn rounded(&self) -> (i64, i64) {
        (self.u.round() as i64, self.v.round() as i64)
    }

    /// Rounded coordinates if they fall inside a `width` x `height` raster.
    pub fn in_bounds(&self, width: u32, height: u32) -> Option<(u32, u32)> {
        let (u, v) = self.rounded();
        (u >= 0 && v >= 0 && u < width as i64 && v < height as i64).then_some((u as u32, v as u32))
    }
}

/// Every `interval`-th frame starting from the first.
pub fn sample_frames(frames: &[CameraFrame], interval: usize) -> Result<Vec<&CameraFrame>> {
    if interval == 0 {
        return Err(Error::Config("frame interval must be at least 1".into()));
    }
    Ok(frames.iter().step_by(interval).collect())
}

pub fn world_to_camera(p: [f64; 3], pose: &Pose) -> CameraPoint {
    let m = &pose.0;
    let row = |r: usize| m[r][0] * p[0] + m[r][1] * p[1] + m[r][2] * p[2] + m[r][3];
    CameraPoint {
        x: row(0),
        y: row(1),
        z: row(2),
    }
}

/// Pinhole projection; `None` when the point is behind the camera.
pub fn camera_to_pixel(c: CameraPoint, k: &Intrinsics) -> Option<Pixel> {
    if c.z <= MIN_CAMERA_DEPTH {
        return None;
    }
    Some(Pixel {
        u: c.x * k.fx / c.z + k.cx,
        v: c.y * k.fy / c.z + k.cy,
    })
}

/// Relative depth agreement between the sensor and the projected point.
/// Missing depth (0) never passes.
pub fn depth_consistent(u: u32, v: u32, z_c: f64, depth: &DepthMap, tau: f64) -> bool {
    let d = depth.get(u, v) as f64;
    d > 0.0 && ((d - z_c) / d).abs() <= tau
}

/// Visible footprint of one proposal in one frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ViewProjection {
    pub instance_id: u32,
    pub frame_id: u32,
    /// Distinct `(u, v)` pixels, sorted row-major (by `v`, then `u`).
    pub pixels: Vec<(u32, u32)>,
}

impl ViewProjection {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    /// Run-length text dump: a header line, then one line per image row
    /// `v: u0+len u1+len ...`.
    pub fn to_rle_text(&self) -> String {
        let mut out = format!(
            "instance {} frame {} area {}\n",
            self.instance_id,
            self.frame_id,
            self.area()
        );
        let mut i = 0;
        while i < self.pixels.len() {
            let v = self.pixels[i].1;
            let _ = write!(out, "{v}:");
            while i < self.pixels.len() && self.pixels[i].1 == v {
                let start = self.pixels[i].0;
                let mut len = 1;
                while i + len < self.pixels.len()
                    && self.pixels[i + len].1 == v
                    && self.pixels[i + len].0 == start + len as u32
                {
                    len += 1;
                }
                let _ = write!(out, " {start}+{len}");
                i += len;
            }
            out.push('\n');
        }
        out
    }
}

pub fn project_points(
    instance_id: u32,
    point_indices: &[u32],
    cloud: &PointCloud,
    frame: &CameraFrame,
    tau: f64,
) -> ViewProjection {
    let (w, h) = (frame.width(), frame.height());
    let mut pixels: Vec<(u32, u32)> = point_indices
        .iter()
        .filter_map(|&i| {
            let c = world_to_camera(cloud.xyz(i as usize), &frame.pose);
            let (u, v) = camera_to_pixel(c, &frame.intrinsics)?.in_bounds(w, h)?;
            depth_consistent(u, v, c.z, &frame.depth, tau).then_some((u, v))
        })
        .collect();
    pixels.sort_unstable_by_key(|&(u, v)| (v, u));
    pixels.dedup();
    ViewProjection {
        instance_id,
        frame_id: frame.frame_id,
        pixels,
    }
}

pub fn project_mask_to_view(
    mask: &InstanceMask,
    cloud: &PointCloud,
    frame: &CameraFrame,
    tau: f64,
) -> ViewProjection {
    project_points(mask.instance_id, &mask.point_indices, cloud, frame, tau)
}

/// Projects several point sets into several frames in parallel. Output is
/// grouped per set, frames in input order.
pub fn project_all(
    sets: &[(u32, &[u32])],
    cloud: &PointCloud,
    frames: &[&CameraFrame],
    tau: f64,
) -> Vec<Vec<ViewProjection>> {
    sets.par_iter()
        .map(|&(id, idx)| {
            frames
                .par_iter()
                .map(|f| project_points(id, idx, cloud, f, tau))
                .collect()
        })
        .collect()
}

/// Largest-area views first (ties by smaller frame id), empty views dropped,
/// at most `n_frame` kept.
pub fn rank_views(mut views: Vec<ViewProjection>, n_frame: usize) -> Vec<ViewProjection> {
    views.retain(|v| v.area() > 0);
    views.sort_by(|a, b| b.area().cmp(&a.area()).then(a.frame_id.cmp(&b.frame_id)));
    views.truncate(n_frame);
    views
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Point;
    use image::RgbImage;

    fn k() -> Intrinsics {
        Intrinsics {
            fx: 500.0,
            fy: 500.0,
            cx: 320.0,
            cy: 240.0,
        }
    }

    fn frame(id: u32, depth: f32) -> CameraFrame {
        CameraFrame {
            frame_id: id,
            image: RgbImage::new(640, 480),
            depth: DepthMap::filled(640, 480, depth),
            intrinsics: k(),
            pose: Pose::IDENTITY,
        }
    }

    #[test]
    fn sampling() {
        let frames: Vec<_> = (0..100).map(|i| frame(i, 1.0)).collect();
        let ids = |s: Vec<&CameraFrame>| s.iter().map(|f| f.frame_id).collect::<Vec<_>>();
        assert_eq!(
            ids(sample_frames(&frames, 20).unwrap()),
            vec![0, 20, 40, 60, 80]
        );
        assert_eq!(sample_frames(&frames, 1).unwrap().len(), 100);
        assert_eq!(ids(sample_frames(&frames[..5], 20).unwrap()), vec![0]);
        assert!(sample_frames(&frames, 0).is_err());
    }

    #[test]
    fn world_to_camera_cases() {
        let c = world_to_camera([1.0, 2.0, 3.0], &Pose::IDENTITY);
        assert_eq!((c.x, c.y, c.z), (1.0, 2.0, 3.0));
        let t = Pose::from_rotation_translation(
            [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            [1.0, 2.0, 3.0],
        );
        let c = world_to_camera([0.0; 3], &t);
        assert_eq!((c.x, c.y, c.z), (1.0, 2.0, 3.0));
    }

    #[test]
    fn pinhole_cases() {
        let p = camera_to_pixel(
            CameraPoint {
                x: 0.1,
                y: -0.05,
                z: 1.0,
            },
            &k(),
        )
        .unwrap();
        assert_eq!(p.rounded(), (370, 215));
        let p = camera_to_pixel(
            CameraPoint {
                x: 0.0,
                y: 0.0,
                z: 1.0,
            },
            &k(),
        )
        .unwrap();
        assert_eq!(p.rounded(), (320, 240));
        assert!(camera_to_pixel(
            CameraPoint {
                x: 0.0,
                y: 0.0,
                z: -0.5
            },
            &k()
        )
        .is_none());
        assert!(camera_to_pixel(
            CameraPoint {
                x: 0.0,
                y: 0.0,
                z: 1e-6
            },
            &k()
        )
        .is_none());
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(Pixel { u: 2.5, v: -2.5 }.rounded(), (3, -3));
        assert_eq!(Pixel { u: -0.4, v: 0.0 }.in_bounds(10, 10), Some((0, 0)));
        assert_eq!(Pixel { u: -0.5, v: 0.0 }.in_bounds(10, 10), None);
        assert_eq!(Pixel { u: 9.49, v: 9.5 }.in_bounds(10, 10), None);
    }

    #[test]
    fn depth_check_cases() {
        let d = DepthMap::filled(4, 4, 2.0);
        assert!(depth_consistent(1, 1, 2.4, &d, 0.25));
        assert!(!depth_consistent(1, 1, 3.0, &d, 0.25));
        let z = DepthMap::filled(4, 4, 0.0);
        assert!(!depth_consistent(1, 1, 0.0, &z, 0.25));
    }

    fn cloud(xyz: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(xyz.iter().map(|&xyz| Point { xyz, rgb: [0; 3] }).collect()).unwrap()
    }

    #[test]
    fn single_point_on_axis() {
        let c = cloud(&[[0.0, 0.0, 2.0]]);
        let v = project_points(0, &[0], &c, &frame(0, 2.0), 0.25);
        assert_eq!(v.pixels, vec![(320, 240)]);
    }

    #[test]
    fn occluded_mask_has_no_area() {
        let c = cloud(&[[0.0, 0.0, 2.0], [0.1, 0.1, 2.0]]);
        let v = project_points(0, &[0, 1], &c, &frame(0, 1.0), 0.25);
        assert_eq!(v.area(), 0);
    }

    #[test]
    fn coincident_pixels_counted_once() {
        let c = cloud(&[[0.0, 0.0, 2.0], [0.0001, 0.0, 2.0]]);
        let v = project_points(0, &[0, 1], &c, &frame(0, 2.0), 0.25);
        assert_eq!(v.area(), 1);
    }

    fn view(frame_id: u32, area: usize) -> ViewProjection {
        ViewProjection {
            instance_id: 0,
            frame_id,
            pixels: (0..area as u32).map(|u| (u, 0)).collect(),
        }
    }

    #[test]
    fn ranking() {
        let views: Vec<_> = [50, 200, 10, 200, 75]
            .iter()
            .enumerate()
            .map(|(i, &a)| view(i as u32, a))
            .collect();
        let ids: Vec<_> = rank_views(views, 3).iter().map(|v| v.frame_id).collect();
        assert_eq!(ids, vec![1, 3, 4]);
        assert!(rank_views(vec![view(0, 0), view(1, 0)], 5).is_empty());
        assert_eq!(
            rank_views(vec![view(0, 3), view(1, 0), view(2, 4)], 5).len(),
            2
        );
    }

    #[test]
    fn rle_dump() {
        let v = ViewProjection {
            instance_id: 3,
            frame_id: 20,
            pixels: vec![(1, 0), (2, 0), (3, 0), (7, 0), (2, 5)],
        };
        assert_eq!(
            v.to_rle_text(),
            "instance 3 frame 20 area 5\n0: 1+3 7+1\n5: 2+1\n"
        );
    }
}
