#![allow(dead_code)]

use wcluster::frame_io::{Primitive, SceneObject, SyntheticSceneSpec};

pub fn sphere(center: [f64; 3], radius: f64, color: [u8; 3]) -> SceneObject {
    SceneObject::new(Primitive::Sphere { center, radius }, color)
}

pub fn cuboid(center: [f64; 3], half_extents: [f64; 3], color: [u8; 3]) -> SceneObject {
    SceneObject::new(Primitive::Box { center, half_extents }, color)
}

/// Three solid objects in front of a gray wall. The wall is itself a labeled
/// object (label 4), so scoring covers every pixel.
pub fn three_objects(frame_count: usize) -> SyntheticSceneSpec {
    SyntheticSceneSpec {
        objects: vec![
            sphere([-0.7, 0.1, 2.0], 0.3, [220, 40, 40]),
            cuboid([0.1, -0.2, 2.2], [0.25, 0.25, 0.2], [40, 200, 60]),
            sphere([0.8, 0.3, 1.8], 0.25, [40, 60, 220]),
            SceneObject::new(
                Primitive::Plane { center: [0.0, 0.0, 3.2], normal: [0.0, 0.0, -1.0], radius: 20.0 },
                [120, 120, 120],
            ),
        ],
        background_depth: None,
        background_color: [120, 120, 120],
        frame_count,
        depth_noise: 0.003,
        color_noise: 4.0,
    }
}

/// Desk-scale variant: small objects about a meter away, wall at 1.5 m.
pub fn desk_scene(frame_count: usize) -> SyntheticSceneSpec {
    SyntheticSceneSpec {
        objects: vec![
            sphere([-0.35, 0.05, 1.1], 0.12, [220, 40, 40]),
            cuboid([0.0, -0.12, 1.2], [0.1, 0.1, 0.08], [40, 200, 60]),
            sphere([0.35, 0.12, 1.0], 0.1, [40, 60, 220]),
            SceneObject::new(
                Primitive::Plane { center: [0.0, 0.0, 1.5], normal: [0.0, 0.0, -1.0], radius: 10.0 },
                [120, 120, 120],
            ),
        ],
        background_depth: None,
        background_color: [120, 120, 120],
        frame_count,
        depth_noise: 0.003,
        color_noise: 4.0,
    }
}

/// Prints a one-line verdict and fails the test when `ok` is false.
pub fn verdict(id: u32, name: &str, ok: bool, detail: &str) {
    let tag = if ok { "PASS" } else { "FAIL" };
    println!("[{tag}] criterion {id}: {name} -- {detail}");
    assert!(ok, "criterion {id} ({name}) failed: {detail}");
}
