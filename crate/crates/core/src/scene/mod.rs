//! Scene data model: colored point cloud, posed RGB-D frames and instance masks.
//!
//! Everything here is immutable once a [`SceneBundle`] has been loaded or
//! assembled, so bundles can be shared read-only across worker threads.

mod bundle;
pub mod ply;

use image::RgbImage;
use serde::{Deserialize, Serialize};

pub use bundle::{load_scene_bundle, write_scene_bundle};

/// Tolerance on the orthonormality of a pose's rotation block.
pub const ROTATION_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub xyz: [f64; 3],
    pub rgb: [u8; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Result<Self, String> {
        if points.is_empty() {
            return Err("point cloud is empty".into());
        }
        if let Some(i) = points
            .iter()
            .position(|p| p.xyz.iter().any(|c| !c.is_finite()))
        {
            return Err(format!("point {i} has a non-finite coordinate"));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn xyz(&self, index: usize) -> [f64; 3] {
        self.points[index].xyz
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn validate(&self, width: u32, height: u32) -> Result<(), String> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            ));
        }
        if !(self.cx >= 0.0 && self.cx < width as f64 && self.cy >= 0.0 && self.cy < height as f64)
        {
            return Err(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, width, height
            ));
        }
        Ok(())
    }
}

/// Row-major 4x4 homogeneous transform from world to camera coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose(pub [[f64; 4]; 4]);

impl Pose {
    pub const IDENTITY: Pose = Pose([
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ]);

    /// Builds a pose from a rotation (rows) and translation.
    pub fn from_rotation_translation(rotation: [[f64; 3]; 3], translation: [f64; 3]) -> Self {
        let mut m = Self::IDENTITY.0;
        for r in 0..3 {
            m[r][..3].copy_from_slice(&rotation[r]);
            m[r][3] = translation[r];
        }
        Pose(m)
    }

    /// World-to-camera pose of a camera at `eye` looking at `target`.
    ///
    /// Camera axes follow the usual vision convention: x right, y down, z forward.
    pub fn look_at(eye: [f64; 3], target: [f64; 3], up: [f64; 3]) -> Self {
        let forward = normalize(sub(target, eye));
        let right = normalize(cross(forward, up));
        let down = cross(forward, right);
        let rotation = [right, down, forward];
        let t = rotation.map(|row| -dot(row, eye));
        Self::from_rotation_translation(rotation, t)
    }

    pub fn validate(&self) -> Result<(), String> {
        let m = &self.0;
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err("invalid homogeneous pose: non-finite entry".into());
        }
        if m[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(format!(
                "invalid homogeneous pose: bottom row is {:?}, expected [0, 0, 0, 1]",
                m[3]
            ));
        }
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|k| m[i][k] * m[j][k]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                if (d - expected).abs() > ROTATION_TOLERANCE {
                    return Err(
                        "invalid homogeneous pose: rotation block is not orthonormal".into(),
                    );
                }
            }
        }
        Ok(())
    }

    /// Inverse of a rigid transform.
    pub fn inverse(&self) -> Pose {
        let m = &self.0;
        let mut rt = [[0.0; 3]; 3];
        for (i, row) in rt.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = m[j][i];
            }
        }
        let t = [m[0][3], m[1][3], m[2][3]];
        let ti = rt.map(|row| -dot(row, t));
        Pose::from_rotation_translation(rt, ti)
    }
}

/// Depth raster in meters, row-major; 0 marks a missing measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    meters: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32, meters: Vec<f32>) -> Result<Self, String> {
        if meters.len() != width as usize * height as usize {
            return Err(format!(
                "depth buffer has {} values, expected {}x{}",
                meters.len(),
                width,
                height
            ));
        }
        if meters.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err("depth values must be finite and non-negative".into());
        }
        Ok(Self {
            width,
            height,
            meters,
        })
    }

    pub fn filled(width: u32, height: u32, meters: f32) -> Self {
        Self::new(
            width,
            height,
            vec![meters; width as usize * height as usize],
        )
        .expect("uniform depth map")
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, u: u32, v: u32) -> f32 {
        self.meters[v as usize * self.width as usize + u as usize]
    }

    pub fn set(&mut self, u: u32, v: u32, meters: f32) {
        let w = self.width as usize;
        self.meters[v as usize * w + u as usize] = meters;
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.meters
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraFrame {
    pub frame_id: u32,
    pub image: RgbImage,
    pub depth: DepthMap,
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

impl CameraFrame {
    pub fn width(&self) -> u32 {
        self.image.width()
    }

    pub fn height(&self) -> u32 {
        self.image.height()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.image.dimensions() != (self.depth.width, self.depth.height) {
            return Err(format!(
                "depth/image size mismatch: image {}x{}, depth {}x{}",
                self.image.width(),
                self.image.height(),
                self.depth.width,
                self.depth.height
            ));
        }
        self.intrinsics.validate(self.width(), self.height())?;
        self.pose.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMask {
    pub instance_id: u32,
    pub category: String,
    pub confidence: f64,
    pub point_indices: Vec<u32>,
}

impl InstanceMask {
    pub fn validate(&self, cloud_len: usize) -> Result<(), String> {
        if self.point_indices.is_empty() {
            return Err("mask is empty".into());
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(format!("confidence {} outside [0, 1]", self.confidence));
        }
        if self.point_indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err("mask indices must be strictly increasing".into());
        }
        let last = *self.point_indices.last().unwrap() as usize;
        if last >= cloud_len {
            return Err(format!(
                "mask index out of range: {last} >= point count {cloud_len}"
            ));
        }
        Ok(())
    }
}

/// Axis-aligned box in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Box3D {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self, String> {
        // negated so that NaN corners are rejected too
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if (0..3).any(|k| !(min[k] <= max[k])) {
            return Err(format!("box min {min:?} exceeds max {max:?}"));
        }
        Ok(Self { min, max })
    }

    pub fn extent(&self) -> [f64; 3] {
        [0, 1, 2].map(|k| self.max[k] - self.min[k])
    }

    pub fn volume(&self) -> f64 {
        self.extent().iter().product()
    }

    pub fn center(&self) -> [f64; 3] {
        [0, 1, 2].map(|k| 0.5 * (self.min[k] + self.max[k]))
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|k| self.min[k] <= p[k] && p[k] <= self.max[k])
    }
}

/// Axis-aligned bounds of the mask's points.
pub fn mask_to_box3d(mask: &InstanceMask, cloud: &PointCloud) -> Box3D {
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for &i in &mask.point_indices {
        let p = cloud.xyz(i as usize);
        for k in 0..3 {
            min[k] = min[k].min(p[k]);
            max[k] = max[k].max(p[k]);
        }
    }
    Box3D { min, max }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub scene_id: String,
    pub cloud: PointCloud,
    pub frames: Vec<CameraFrame>,
    pub masks: Vec<InstanceMask>,
}

impl SceneBundle {
    /// Assembles an in-memory bundle, applying the same checks as loading.
    pub fn new(
        scene_id: impl Into<String>,
        cloud: PointCloud,
        frames: Vec<CameraFrame>,
        masks: Vec<InstanceMask>,
    ) -> crate::Result<Self> {
        let bundle = Self {
            scene_id: scene_id.into(),
            cloud,
            frames,
            masks,
        };
        bundle.validate().map_err(crate::Error::InvalidInput)?;
        Ok(bundle)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self
            .frames
            .windows(2)
            .any(|w| w[0].frame_id >= w[1].frame_id)
        {
            return Err("frame ids must be unique and ascending".into());
        }
        for f in &self.frames {
            f.validate()
                .map_err(|e| format!("frame {}: {e}", f.frame_id))?;
        }
        for m in &self.masks {
            m.validate(self.cloud.len())
                .map_err(|e| format!("mask {}: {e}", m.instance_id))?;
        }
        check_unique_instances(&self.masks)
    }
}

pub(crate) fn check_unique_instances(masks: &[InstanceMask]) -> Result<(), String> {
    let mut ids: Vec<u32> = masks.iter().map(|m| m.instance_id).collect();
    ids.sort_unstable();
    match ids.windows(2).find(|w| w[0] == w[1]) {
        Some(w) => Err(format!("duplicate instance id {}", w[0])),
        None => Ok(()),
    }
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = dot(a, a).sqrt();
    a.map(|v| v / n)
}
