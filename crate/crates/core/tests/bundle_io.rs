use std::fs;
use std::path::Path;

use image::{ImageBuffer, Luma};
use mvground::scene::{load_scene_bundle, write_scene_bundle, SceneBundle};
use mvground::synthetic::{generate_scene, SyntheticConfig};
use mvground::Error;

fn small_scene() -> SceneBundle {
    let cfg = SyntheticConfig {
        width: 48,
        height: 36,
        frames: 3,
        same_category: 2,
        points_per_object: 50,
        ..Default::default()
    };
    generate_scene("small", &cfg, 11).unwrap().bundle
}

fn written() -> (tempfile::TempDir, SceneBundle) {
    let dir = tempfile::tempdir().unwrap();
    let b = small_scene();
    write_scene_bundle(&b, dir.path()).unwrap();
    (dir, b)
}

fn bundle_error(dir: &Path) -> (String, String) {
    match load_scene_bundle(dir) {
        Err(Error::Bundle {
            file,
            field,
            message,
        }) => (
            file.file_name().unwrap().to_string_lossy().into_owned(),
            format!("{field}: {message}"),
        ),
        other => panic!("expected bundle error, got {other:?}"),
    }
}

#[test]
fn write_then_load_is_identity_for_synthetic_scenes() {
    let (dir, b) = written();
    let loaded = load_scene_bundle(dir.path()).unwrap();
    // synthetic scenes are built f32-exact and mm-quantized, so nothing is lost
    assert_eq!(loaded, b);
}

#[test]
fn mask_index_past_cloud_is_named() {
    let (dir, b) = written();
    let mut masks = b.masks.clone();
    let n = b.cloud.len() as u32;
    masks[1].point_indices.push(n);
    fs::write(
        dir.path().join("masks.json"),
        serde_json::to_vec(&masks).unwrap(),
    )
    .unwrap();
    let (file, msg) = bundle_error(dir.path());
    assert_eq!(file, "masks.json");
    assert!(msg.contains("mask index out of range"), "{msg}");
    assert!(msg.contains(&n.to_string()), "{msg}");
    assert!(
        msg.contains(&format!("instance {}", masks[1].instance_id)),
        "{msg}"
    );
}

#[test]
fn non_homogeneous_pose_is_rejected() {
    let (dir, _) = written();
    let pose = dir.path().join("frames/1/pose.txt");
    let text = fs::read_to_string(&pose).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[3] = "0 0 0 2";
    fs::write(&pose, lines.join("\n")).unwrap();
    let (file, msg) = bundle_error(dir.path());
    assert_eq!(file, "pose.txt");
    assert!(msg.contains("invalid homogeneous pose"), "{msg}");
}

#[test]
fn missing_file_is_an_io_error_with_path() {
    let (dir, _) = written();
    let color = dir.path().join("frames/2/color.png");
    fs::remove_file(&color).unwrap();
    match load_scene_bundle(dir.path()) {
        Err(Error::Io { path, .. }) => assert_eq!(path, color),
        other => panic!("expected io error, got {other:?}"),
    }
}

#[test]
fn depth_size_mismatch_is_rejected() {
    let (dir, _) = written();
    let depth: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::new(10, 10);
    depth.save(dir.path().join("frames/0/depth.png")).unwrap();
    let (file, msg) = bundle_error(dir.path());
    assert_eq!(file, "depth.png");
    assert!(msg.contains("depth/image size mismatch"), "{msg}");
}

#[test]
fn manifest_counts_must_agree() {
    let (dir, _) = written();
    let p = dir.path().join("scene.json");
    let mut m: serde_json::Value = serde_json::from_slice(&fs::read(&p).unwrap()).unwrap();
    m["num_masks"] = 99.into();
    fs::write(&p, m.to_string()).unwrap();
    let (_, msg) = bundle_error(dir.path());
    assert!(msg.starts_with("num_masks"), "{msg}");
}

#[test]
fn duplicate_instance_ids_are_rejected() {
    let (dir, b) = written();
    let mut masks = b.masks.clone();
    masks[1].instance_id = masks[0].instance_id;
    fs::write(
        dir.path().join("masks.json"),
        serde_json::to_vec(&masks).unwrap(),
    )
    .unwrap();
    let (file, msg) = bundle_error(dir.path());
    assert_eq!(file, "masks.json");
    assert!(msg.starts_with("instance_id"), "{msg}");
}
