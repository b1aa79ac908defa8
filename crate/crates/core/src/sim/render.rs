//! Orthographic signed-distance renderer for the eye-in-hand view.

use super::{len2, sub, CameraConfig, SimConfig, SimWorld};
use crate::raster::Image;
use crate::RigidTransform;

pub const BACKGROUND: f64 = 30.0;
pub const TARGET_LEVEL: f64 = 120.0;
pub const OBJECT_LEVEL: f64 = 200.0;
pub const GRIPPER_LEVEL: f64 = 255.0;
/// Half width of the target ring stroke, meters.
pub const RING_HALF_WIDTH: f64 = 0.004;

#[inline]
fn coverage(sdf: f64, pixel: f64) -> f64 {
    (0.5 - sdf / pixel).clamp(0.0, 1.0)
}

/// Renders the table seen from `cam_from_world`. The gripper is rigidly
/// attached to the camera and therefore always drawn at the image centre.
pub fn render(cfg: &SimConfig, world: &SimWorld, cam_from_world: &RigidTransform) -> Image {
    render_scene(&cfg.camera, cfg, world.object, world.target, cam_from_world)
}

pub(crate) fn render_scene(
    cam: &CameraConfig,
    cfg: &SimConfig,
    object: [f64; 2],
    target: [f64; 2],
    cam_from_world: &RigidTransform,
) -> Image {
    let n = cam.resolution;
    let pitch = cam.pitch();
    let mut img = Image::gray(n, n, BACKGROUND as u8);
    let world_from_cam = cam_from_world.inverse();
    let r = world_from_cam.rotation.to_matrix();
    let c = world_from_cam.translation;
    let half = n as f64 / 2.0;
    for v in 0..n {
        let yc = (v as f64 + 0.5 - half) * pitch;
        for u in 0..n {
            let xc = (u as f64 + 0.5 - half) * pitch;
            let mut val = BACKGROUND;
            // Orthographic ray (xc, yc, lambda) hits the table at z = 0.
            if r[2][2].abs() > 1e-9 {
                let lambda = -(r[2][0] * xc + r[2][1] * yc + c[2]) / r[2][2];
                let p = [
                    r[0][0] * xc + r[0][1] * yc + r[0][2] * lambda + c[0],
                    r[1][0] * xc + r[1][1] * yc + r[1][2] * lambda + c[1],
                ];
                let ring = (len2(sub(p, target)) - cfg.success_radius).abs() - RING_HALF_WIDTH;
                val += coverage(ring, pitch) * (TARGET_LEVEL - val);
                let disk = len2(sub(p, object)) - cfg.object_radius;
                val += coverage(disk, pitch) * (OBJECT_LEVEL - val);
            }
            let grip = (xc * xc + yc * yc).sqrt() - cfg.gripper_radius;
            val += coverage(grip, pitch) * (GRIPPER_LEVEL - val);
            img.set(u, v, 0, val.round() as u8);
        }
    }
    img
}
