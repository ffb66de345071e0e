//! On-disk bundle layout:
//!
//! ```text
//! <bundle>/scene.json                 scene id, counts, frame manifest
//! <bundle>/cloud.ply                  binary LE, x y z float + red green blue uchar
//! <bundle>/masks.json                 [{instance_id, category, confidence, point_indices}]
//! <bundle>/frames/<id>/color.png      8-bit RGB
//! <bundle>/frames/<id>/depth.png      16-bit gray, millimeters (0 = no measurement)
//! <bundle>/frames/<id>/pose.txt       4x4 world-to-camera, row-major
//! <bundle>/frames/<id>/intrinsics.txt fx fy cx cy
//! ```

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use super::{ply, CameraFrame, DepthMap, InstanceMask, Intrinsics, PointCloud, Pose, SceneBundle};
use crate::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct SceneManifest {
    scene_id: String,
    num_points: usize,
    num_masks: usize,
    frames: Vec<u32>,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn load_scene_bundle(dir: impl AsRef<Path>) -> Result<SceneBundle> {
    let dir = dir.as_ref();

    let manifest_path = dir.join("scene.json");
    let manifest: SceneManifest = serde_json::from_str(&read_text(&manifest_path)?)
        .map_err(|e| Error::bundle(&manifest_path, "manifest", e.to_string()))?;
    if manifest.frames.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::bundle(
            &manifest_path,
            "frames",
            "frame ids must be unique and ascending",
        ));
    }

    let cloud_path = dir.join("cloud.ply");
    let file = fs::File::open(&cloud_path).map_err(|e| Error::io(&cloud_path, e))?;
    let points =
        ply::read_ply(BufReader::new(file)).map_err(|e| Error::bundle(&cloud_path, "vertex", e))?;
    if points.len() != manifest.num_points {
        return Err(Error::bundle(
            &manifest_path,
            "num_points",
            format!(
                "manifest says {}, cloud has {}",
                manifest.num_points,
                points.len()
            ),
        ));
    }
    let cloud = PointCloud::new(points).map_err(|e| Error::bundle(&cloud_path, "vertex", e))?;

    let masks_path = dir.join("masks.json");
    let masks: Vec<InstanceMask> = serde_json::from_str(&read_text(&masks_path)?)
        .map_err(|e| Error::bundle(&masks_path, "masks", e.to_string()))?;
    if masks.len() != manifest.num_masks {
        return Err(Error::bundle(
            &manifest_path,
            "num_masks",
            format!(
                "manifest says {}, masks.json has {}",
                manifest.num_masks,
                masks.len()
            ),
        ));
    }
    for (i, m) in masks.iter().enumerate() {
        m.validate(cloud.len()).map_err(|e| {
            Error::bundle(
                &masks_path,
                format!("[{i}].point_indices (instance {})", m.instance_id),
                e,
            )
        })?;
    }

    super::check_unique_instances(&masks)
        .map_err(|e| Error::bundle(&masks_path, "instance_id", e))?;

    let frames = manifest
        .frames
        .iter()
        .map(|&id| load_frame(&dir.join("frames").join(id.to_string()), id))
        .collect::<Result<Vec<_>>>()?;

    Ok(SceneBundle {
        scene_id: manifest.scene_id,
        cloud,
        frames,
        masks,
    })
}

fn load_frame(dir: &Path, frame_id: u32) -> Result<CameraFrame> {
    let color_path = dir.join("color.png");
    let image = match open_image(&color_path)? {
        DynamicImage::ImageRgb8(img) => img,
        other => {
            return Err(Error::bundle(
                &color_path,
                "color",
                format!("expected 8-bit RGB, found {:?}", other.color()),
            ))
        }
    };

    let depth_path = dir.join("depth.png");
    let depth_raw = match open_image(&depth_path)? {
        DynamicImage::ImageLuma16(img) => img,
        other => {
            return Err(Error::bundle(
                &depth_path,
                "depth",
                format!("expected 16-bit single channel, found {:?}", other.color()),
            ))
        }
    };
    if depth_raw.dimensions() != image.dimensions() {
        return Err(Error::bundle(
            &depth_path,
            "depth",
            format!(
                "depth/image size mismatch: depth {:?}, color {:?}",
                depth_raw.dimensions(),
                image.dimensions()
            ),
        ));
    }
    let (w, h) = depth_raw.dimensions();
    let meters = depth_raw.pixels().map(|p| p.0[0] as f32 / 1000.0).collect();
    let depth = DepthMap::new(w, h, meters).map_err(|e| Error::bundle(&depth_path, "depth", e))?;

    let pose_path = dir.join("pose.txt");
    let pose =
        parse_pose(&read_text(&pose_path)?).map_err(|e| Error::bundle(&pose_path, "pose", e))?;

    let intr_path = dir.join("intrinsics.txt");
    let intrinsics = parse_intrinsics(&read_text(&intr_path)?)
        .map_err(|e| Error::bundle(&intr_path, "intrinsics", e))?;
    intrinsics
        .validate(w, h)
        .map_err(|e| Error::bundle(&intr_path, "intrinsics", e))?;

    Ok(CameraFrame {
        frame_id,
        image,
        depth,
        intrinsics,
        pose,
    })
}

fn open_image(path: &Path) -> Result<DynamicImage> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "missing file"),
        ));
    }
    image::open(path).map_err(|e| Error::bundle(path, "image", e.to_string()))
}

fn parse_numbers(text: &str) -> Result<Vec<Vec<f64>>, String> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| format!("not a number: `{t}`")))
                .collect()
        })
        .collect()
}

pub(crate) fn parse_pose(text: &str) -> Result<Pose, String> {
    let rows = parse_numbers(text)?;
    if rows.len() != 4 || rows.iter().any(|r| r.len() != 4) {
        return Err("malformed pose matrix: expected 4 rows of 4 values".into());
    }
    let mut m = [[0.0; 4]; 4];
    for (dst, src) in m.iter_mut().zip(&rows) {
        dst.copy_from_slice(src);
    }
    let pose = Pose(m);
    pose.validate()?;
    Ok(pose)
}

fn parse_intrinsics(text: &str) -> Result<Intrinsics, String> {
    let rows = parse_numbers(text)?;
    match rows.as_slice() {
        [r] if r.len() == 4 => Ok(Intrinsics {
            fx: r[0],
            fy: r[1],
            cx: r[2],
            cy: r[3],
        }),
        _ => Err("expected `fx fy cx cy` on one line".into()),
    }
}

/// Writes a bundle in the layout read by [`load_scene_bundle`].
///
/// Depth is stored in whole millimeters, so a reloaded bundle carries depth
/// quantized to 1 mm and coordinates narrowed to `f32`.
pub fn write_scene_bundle(bundle: &SceneBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let mkdir = |p: &PathBuf| fs::create_dir_all(p).map_err(|e| Error::io(p, e));
    let write = |p: PathBuf, bytes: &[u8]| fs::write(&p, bytes).map_err(|e| Error::io(&p, e));
    mkdir(&dir.to_path_buf())?;

    let manifest = SceneManifest {
        scene_id: bundle.scene_id.clone(),
        num_points: bundle.cloud.len(),
        num_masks: bundle.masks.len(),
        frames: bundle.frames.iter().map(|f| f.frame_id).collect(),
    };
    write(
        dir.join("scene.json"),
        &serde_json::to_vec_pretty(&manifest)?,
    )?;
    write(dir.join("masks.json"), &serde_json::to_vec(&bundle.masks)?)?;

    let mut ply_bytes = Vec::new();
    ply::write_ply(&mut ply_bytes, bundle.cloud.points()).expect("in-memory write");
    write(dir.join("cloud.ply"), &ply_bytes)?;

    for frame in &bundle.frames {
        let fdir = dir.join("frames").join(frame.frame_id.to_string());
        mkdir(&fdir)?;
        frame.image.save(fdir.join("color.png"))?;
        let (w, h) = (frame.depth.width(), frame.depth.height());
        let mm: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(w, h, |u, v| {
            Luma([(frame.depth.get(u, v) * 1000.0).round().clamp(0.0, 65535.0) as u16])
        });
        mm.save(fdir.join("depth.png"))?;
        let pose: String = frame
            .pose
            .0
            .iter()
            .map(|r| format!("{} {} {} {}\n", r[0], r[1], r[2], r[3]))
            .collect();
        write(fdir.join("pose.txt"), pose.as_bytes())?;
        let k = frame.intrinsics;
        write(
            fdir.join("intrinsics.txt"),
            format!("{} {} {} {}\n", k.fx, k.fy, k.cx, k.cy).as_bytes(),
        )?;
    }
    Ok(())
}
