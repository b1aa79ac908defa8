//! Planar quasi-static pushing world observed by a top-down eye-in-hand
//! camera.
//!
//! The world is the table plane `z = 0`; the camera hovers at `camera.height`
//! above the gripper looking straight down. Camera axes: `x` = world `x`,
//! `y` = world `-y` (image rows grow towards world `-y`), `z` = down.

pub mod datagen;
pub mod expert;
pub mod render;

use serde::{Deserialize, Serialize};

use crate::geometry::FrameTag;
use crate::{RigidTransform, Rotation};

pub type Vec2 = [f64; 2];

#[inline]
pub(crate) fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub(crate) fn add(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
pub(crate) fn scale(a: Vec2, s: f64) -> Vec2 {
    [a[0] * s, a[1] * s]
}

#[inline]
pub(crate) fn dot2(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub(crate) fn len2(a: Vec2) -> f64 {
    dot2(a, a).sqrt()
}

/// Unit-length planar direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dir2([f64; 2]);

impl Dir2 {
    /// Normalizes `v`; `None` when `v` is (numerically) zero or not finite.
    pub fn new(v: Vec2) -> Option<Self> {
        let n = len2(v);
        (n > 1e-12 && n.is_finite()).then(|| Dir2([v[0] / n, v[1] / n]))
    }

    pub fn from_angle(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Dir2([c, s])
    }

    pub fn get(&self) -> Vec2 {
        self.0
    }

    pub fn angle(&self) -> f64 {
        self.0[1].atan2(self.0[0])
    }

    pub fn rotated(&self, theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        let [x, y] = self.0;
        Dir2([c * x - s * y, s * x + c * y])
    }

    /// World-frame direction of a camera-frame planar action.
    pub fn from_camera(cam_xy: Vec2) -> Option<Self> {
        Dir2::new([cam_xy[0], -cam_xy[1]])
    }

    /// Camera-frame planar components of this world direction.
    pub fn to_camera(&self) -> Vec2 {
        [self.0[0], -self.0[1]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraConfig {
    /// Side of the square ground footprint, meters.
    pub window: f64,
    /// Pixels per side.
    pub resolution: usize,
    /// Height above the table, meters (planar-scene depth).
    pub height: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig {
            window: 0.48,
            resolution: 64,
            height: 0.30,
        }
    }
}

impl CameraConfig {
    /// Meters per pixel.
    pub fn pitch(&self) -> f64 {
        self.window / self.resolution as f64
    }
}

/// Start-configuration distribution, all lengths in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StartConfig {
    /// Target `x` is uniform in `[-target_x, target_x]`.
    pub target_x: f64,
    /// Target `y` range.
    pub target_y: [f64; 2],
    /// Object sits this far from the target...
    pub push_distance: [f64; 2],
    /// ...at this angular spread (radians) around straight below it.
    pub push_spread: f64,
    /// Gripper distance from the object.
    pub gripper_distance: [f64; 2],
    /// Gripper bearing spread (radians) around the pushing side.
    pub gripper_spread: f64,
}

impl Default for StartConfig {
    fn default() -> Self {
        StartConfig {
            target_x: 0.06,
            target_y: [0.08, 0.14],
            push_distance: [0.10, 0.16],
            push_spread: 0.5,
            gripper_distance: [0.07, 0.11],
            gripper_spread: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Half extents of the table rectangle centred at the origin.
    pub table_half: Vec2,
    pub object_radius: f64,
    pub gripper_radius: f64,
    pub success_radius: f64,
    pub step_length: f64,
    /// Expert standoff behind the object before pushing.
    pub standoff: f64,
    pub max_steps: usize,
    pub camera: CameraConfig,
    pub start: StartConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            table_half: [0.3, 0.3],
            object_radius: 0.03,
            gripper_radius: 0.01,
            success_radius: 0.03,
            step_length: 0.01,
            standoff: 0.05,
            max_steps: 400,
            camera: CameraConfig::default(),
            start: StartConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Running,
    Success,
    OutOfBounds,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimWorld {
    pub gripper: Vec2,
    pub object: Vec2,
    pub target: Vec2,
    pub status: Status,
}

impl SimWorld {
    pub fn new(cfg: &SimConfig, gripper: Vec2, object: Vec2, target: Vec2) -> Self {
        let mut w = SimWorld {
            gripper,
            object,
            target,
            status: Status::Running,
        };
        w.status = w.classify(cfg);
        w
    }

    fn in_bounds(cfg: &SimConfig, p: Vec2) -> bool {
        p[0].abs() <= cfg.table_half[0] && p[1].abs() <= cfg.table_half[1]
    }

    fn classify(&self, cfg: &SimConfig) -> Status {
        if !Self::in_bounds(cfg, self.gripper) || !Self::in_bounds(cfg, self.object) {
            Status::OutOfBounds
        } else if len2(sub(self.object, self.target)) <= cfg.success_radius {
            Status::Success
        } else {
            Status::Running
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.status != Status::Running
    }

    /// Moves the gripper one step along `dir`. If the gripper disk then
    /// overlaps the object, the object is translated by the minimal vector
    /// that resolves the overlap. Terminal worlds are returned unchanged.
    pub fn step(&self, cfg: &SimConfig, dir: Dir2) -> SimWorld {
        if self.is_terminal() {
            return *self;
        }
        let gripper = add(self.gripper, scale(dir.get(), cfg.step_length));
        let contact = cfg.object_radius + cfg.gripper_radius;
        let offset = sub(self.object, gripper);
        let dist = len2(offset);
        let object = if dist < contact {
            let normal = if dist > 0.0 { scale(offset, 1.0 / dist) } else { dir.get() };
            add(gripper, scale(normal, contact))
        } else {
            self.object
        };
        let mut next = SimWorld {
            gripper,
            object,
            target: self.target,
            status: Status::Running,
        };
        next.status = next.classify(cfg);
        next
    }
}

/// `cam_from_world` of a top-down camera hovering over planar point `xy`.
pub fn camera_pose(cfg: &CameraConfig, xy: Vec2) -> RigidTransform {
    // World-from-camera is a half turn about x; it is its own inverse.
    let half_turn = Rotation::from_quaternion(0.0, 1.0, 0.0, 0.0).expect("unit quaternion");
    RigidTransform::new(half_turn, [-xy[0], xy[1], cfg.height], FrameTag::World, FrameTag::Named("camera"))
}
