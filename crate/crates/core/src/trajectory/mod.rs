//! Posed trajectories: ingest, scale bookkeeping, expert actions and
//! view-synthesis finetuning pairs.
//!
//! Every frame stores `cam_from_world` (`t_T_w`), i.e. the transform that maps
//! world points into the camera at that frame. This is the COLMAP convention;
//! sources that store world-from-camera can be inverted at ingest with
//! [`colmap::PoseConvention::WorldFromCam`].

pub mod colmap;
pub mod native;
pub mod triples;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, FrameTag, GeometryError};
use crate::{RigidTransform, RotationVector};

/// Displacements below this (in trajectory units) count as "no motion".
pub const ZERO_MOTION_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("duplicate image name {0:?}")]
    DuplicateImageName(String),
    #[error("unsupported trajectory format version {found} (expected {expected})")]
    VersionMismatch { found: u64, expected: u64 },
    #[error("trajectory needs at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("frame indices must be strictly increasing ({prev} then {next})")]
    NonIncreasingIndex { prev: usize, next: usize },
    #[error("frame {0} has an empty image reference")]
    EmptyImageRef(usize),
    #[error("declared scale {declared} disagrees with the frames ({computed})")]
    ScaleMismatch { declared: f64, computed: f64 },
    #[error("all frames coincide; trajectory scale is zero")]
    DegenerateTrajectory,
    #[error("frame position {index} out of range for {len} frames")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("action has zero translation and cannot be normalized")]
    ZeroAction,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Gripper {
    Open,
    Closed,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: usize,
    pub image_ref: String,
    pub cam_from_world: RigidTransform,
    pub timestamp: Option<f64>,
    pub gripper: Gripper,
}

impl Frame {
    pub fn new(index: usize, image_ref: impl Into<String>, cam_from_world: RigidTransform) -> Self {
        Frame {
            index,
            image_ref: image_ref.into(),
            cam_from_world: cam_from_world.with_frames(FrameTag::World, FrameTag::Camera(index)),
            timestamp: None,
            gripper: Gripper::None,
        }
    }

    /// Camera center in world coordinates.
    pub fn position(&self) -> [f64; 3] {
        self.cam_from_world.inverse().translation
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scale {
    /// Translations are in meters.
    Metric,
    /// Up-to-scale reconstruction; `s` is the largest adjacent displacement.
    Reconstruction(f64),
}

impl Scale {
    pub fn is_metric(&self) -> bool {
        matches!(self, Scale::Metric)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrajectoryKind {
    Task,
    Play,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    id: String,
    frames: Vec<Frame>,
    scale: Scale,
    kind: TrajectoryKind,
}

impl Trajectory {
    /// Validates frame ordering and, for reconstruction scale, that `s`
    /// matches the frames exactly.
    pub fn new(
        id: impl Into<String>,
        frames: Vec<Frame>,
        scale: Scale,
        kind: TrajectoryKind,
    ) -> Result<Self, TrajectoryError> {
        if frames.len() < 2 {
            return Err(TrajectoryError::TooFewFrames(frames.len()));
        }
        for pair in frames.windows(2) {
            if pair[1].index <= pair[0].index {
                return Err(TrajectoryError::NonIncreasingIndex {
                    prev: pair[0].index,
                    next: pair[1].index,
                });
            }
        }
        if let Some(f) = frames.iter().find(|f| f.image_ref.is_empty()) {
            return Err(TrajectoryError::EmptyImageRef(f.index));
        }
        let t = Trajectory {
            id: id.into(),
            frames,
            scale,
            kind,
        };
        if let Scale::Reconstruction(declared) = scale {
            let computed = compute_scale(&t)?;
            if declared != computed {
                return Err(TrajectoryError::ScaleMismatch { declared, computed });
            }
        }
        Ok(t)
    }

    /// Builds an up-to-scale trajectory, dropping frames that do not move
    /// relative to their predecessor and computing `s`.
    pub fn reconstruction(
        id: impl Into<String>,
        frames: Vec<Frame>,
        kind: TrajectoryKind,
    ) -> Result<Self, TrajectoryError> {
        let id = id.into();
        let frames = drop_stationary_frames(&id, frames)?;
        let probe = Trajectory {
            id: id.clone(),
            frames,
            scale: Scale::Metric,
            kind,
        };
        if probe.frames.len() < 2 {
            return Err(TrajectoryError::TooFewFrames(probe.frames.len()));
        }
        let s = compute_scale(&probe)?;
        Trajectory::new(id, probe.frames, Scale::Reconstruction(s), kind)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn scale(&self) -> Scale {
        self.scale
    }

    pub fn kind(&self) -> TrajectoryKind {
        self.kind
    }

    pub fn frame(&self, pos: usize) -> Result<&Frame, TrajectoryError> {
        self.frames.get(pos).ok_or(TrajectoryError::IndexOutOfRange {
            index: pos,
            len: self.frames.len(),
        })
    }

    /// `a_T_b` between the frames at positions `a` and `b`.
    pub fn relative(&self, a: usize, b: usize) -> Result<RigidTransform, TrajectoryError> {
        let fa = self.frame(a)?;
        let fb = self.frame(b)?;
        Ok(geometry::relative_pose(&fa.cam_from_world, &fb.cam_from_world)?)
    }
}

/// Drops every frame whose pose coincides (within [`ZERO_MOTION_EPS`]) with
/// the last kept frame.
pub fn drop_stationary_frames(id: &str, frames: Vec<Frame>) -> Result<Vec<Frame>, TrajectoryError> {
    let mut kept: Vec<Frame> = Vec::with_capacity(frames.len());
    for f in frames {
        if let Some(prev) = kept.last() {
            let rel = geometry::relative_pose(&prev.cam_from_world, &f.cam_from_world)?;
            if geometry::norm(&rel.translation) < ZERO_MOTION_EPS {
                warn!(
                    "trajectory {id}: dropping frame {} ({}) with no motion since frame {}",
                    f.index, f.image_ref, prev.index
                );
                continue;
            }
        }
        kept.push(f);
    }
    Ok(kept)
}

/// Largest translation magnitude between adjacent frames.
pub fn compute_scale(t: &Trajectory) -> Result<f64, TrajectoryError> {
    if t.frames.len() < 2 {
        return Err(TrajectoryError::TooFewFrames(t.frames.len()));
    }
    let mut s = 0.0f64;
    for i in 0..t.frames.len() - 1 {
        s = s.max(geometry::norm(&t.relative(i, i + 1)?.translation));
    }
    if s <= 0.0 {
        return Err(TrajectoryError::DegenerateTrajectory);
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionMode {
    /// Translation only.
    #[default]
    Translation,
    /// Translation plus rotation vector.
    SixDof,
}

/// Relative end-effector motion expressed in the current camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action {
    pub translation: [f64; 3],
    pub rotation: Option<RotationVector>,
}

impl Action {
    /// Builds the action carried by `rel` (a `cur_T_target` transform).
    /// Translation is unit-normalized unless `scale` is metric.
    pub fn from_relative(rel: &RigidTransform, scale: Scale, mode: ActionMode) -> Result<Self, TrajectoryError> {
        let n = geometry::norm(&rel.translation);
        let translation = match scale {
            Scale::Metric => rel.translation,
            Scale::Reconstruction(_) => {
                if n < ZERO_MOTION_EPS {
                    return Err(TrajectoryError::ZeroAction);
                }
                rel.translation.map(|v| v / n)
            }
        };
        let rotation = match mode {
            ActionMode::Translation => None,
            ActionMode::SixDof => Some(rel.rotation.to_rotation_vector()),
        };
        Ok(Action { translation, rotation })
    }

    pub fn translation_norm(&self) -> f64 {
        geometry::norm(&self.translation)
    }

    /// Translation scaled to unit length; `None` for a zero translation.
    pub fn unit_translation(&self) -> Option<[f64; 3]> {
        let n = self.translation_norm();
        (n >= ZERO_MOTION_EPS).then(|| self.translation.map(|v| v / n))
    }
}

/// The demonstrated action at frame position `i`: motion from frame `i` to
/// frame `i + 1`, expressed in frame `i`.
pub fn expert_action(t: &Trajectory, i: usize, mode: ActionMode) -> Result<Action, TrajectoryError> {
    if i + 1 >= t.len() {
        return Err(TrajectoryError::IndexOutOfRange { index: i, len: t.len() });
    }
    Action::from_relative(&t.relative(i, i + 1)?, t.scale, mode)
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::Rotation;

    /// Camera at world position `p` with identity orientation.
    pub fn frame_at(index: usize, p: [f64; 3]) -> Frame {
        Frame::new(
            index,
            format!("f{index:03}.png"),
            RigidTransform::from_translation([-p[0], -p[1], -p[2]], FrameTag::World, FrameTag::Camera(index)),
        )
    }

    pub fn posed_frame(index: usize, rot: Rotation, p: [f64; 3]) -> Frame {
        let world_from_cam = RigidTransform::new(rot, p, FrameTag::Camera(index), FrameTag::World);
        Frame::new(index, format!("f{index:03}.png"), world_from_cam.inverse())
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;
    use crate::Rotation;

    fn line(xs: &[f64], scale_metric: bool) -> Trajectory {
        let frames = xs.iter().enumerate().map(|(i, &x)| frame_at(i, [x, 0.0, 0.0])).collect();
        if scale_metric {
            Trajectory::new("line", frames, Scale::Metric, TrajectoryKind::Task).unwrap()
        } else {
            Trajectory::reconstruction("line", frames, TrajectoryKind::Task).unwrap()
        }
    }

    #[test]
    fn scale_is_largest_step() {
        let t = line(&[0.0, 1.0, 3.0], true);
        assert_eq!(compute_scale(&t).unwrap(), 2.0);
        assert_eq!(line(&[0.0, 1.0, 3.0], false).scale(), Scale::Reconstruction(2.0));
    }

    #[test]
    fn coincident_frames_are_degenerate() {
        let frames = vec![frame_at(0, [1.0, 1.0, 0.0]), frame_at(1, [1.0, 1.0, 0.0])];
        let t = Trajectory::new("d", frames.clone(), Scale::Metric, TrajectoryKind::Task).unwrap();
        assert!(matches!(compute_scale(&t), Err(TrajectoryError::DegenerateTrajectory)));
        // Ingest drops the stationary frame, leaving too few.
        assert!(matches!(
            Trajectory::reconstruction("d", frames, TrajectoryKind::Task),
            Err(TrajectoryError::TooFewFrames(1))
        ));
    }

    #[test]
    fn stationary_frames_dropped_at_ingest() {
        let frames = vec![
            frame_at(0, [0.0, 0.0, 0.0]),
            frame_at(1, [0.0, 0.0, 0.0]),
            frame_at(2, [0.5, 0.0, 0.0]),
        ];
        let t = Trajectory::reconstruction("s", frames, TrajectoryKind::Play).unwrap();
        let idx: Vec<usize> = t.frames().iter().map(|f| f.index).collect();
        assert_eq!(idx, vec![0, 2]);
    }

    #[test]
    fn validation_errors() {
        let one = vec![frame_at(0, [0.0; 3])];
        assert!(matches!(
            Trajectory::new("x", one, Scale::Metric, TrajectoryKind::Task),
            Err(TrajectoryError::TooFewFrames(1))
        ));
        let backwards = vec![frame_at(1, [0.0; 3]), frame_at(1, [1.0, 0.0, 0.0])];
        assert!(matches!(
            Trajectory::new("x", backwards, Scale::Metric, TrajectoryKind::Task),
            Err(TrajectoryError::NonIncreasingIndex { .. })
        ));
        let mut empty = vec![frame_at(0, [0.0; 3]), frame_at(1, [1.0, 0.0, 0.0])];
        empty[1].image_ref.clear();
        assert!(matches!(
            Trajectory::new("x", empty, Scale::Metric, TrajectoryKind::Task),
            Err(TrajectoryError::EmptyImageRef(1))
        ));
        let frames = vec![frame_at(0, [0.0; 3]), frame_at(1, [1.0, 0.0, 0.0])];
        assert!(matches!(
            Trajectory::new("x", frames, Scale::Reconstruction(2.0), TrajectoryKind::Task),
            Err(TrajectoryError::ScaleMismatch { .. })
        ));
    }

    #[test]
    fn expert_action_normalizes_reconstruction_units() {
        let frames = vec![frame_at(0, [0.0; 3]), frame_at(1, [0.0, 0.5, 0.0])];
        let t = Trajectory::reconstruction("a", frames.clone(), TrajectoryKind::Task).unwrap();
        let a = expert_action(&t, 0, ActionMode::Translation).unwrap();
        assert_eq!(a.translation, [0.0, 1.0, 0.0]);
        assert!(a.rotation.is_none());

        let m = Trajectory::new("a", frames, Scale::Metric, TrajectoryKind::Task).unwrap();
        assert_eq!(expert_action(&m, 0, ActionMode::Translation).unwrap().translation, [0.0, 0.5, 0.0]);
        assert!(matches!(
            expert_action(&m, 1, ActionMode::Translation),
            Err(TrajectoryError::IndexOutOfRange { index: 1, len: 2 })
        ));
    }

    #[test]
    fn zero_action_in_reconstruction_units() {
        let id = RigidTransform::identity(FrameTag::Camera(0));
        assert!(matches!(
            Action::from_relative(&id, Scale::Reconstruction(1.0), ActionMode::Translation),
            Err(TrajectoryError::ZeroAction)
        ));
        let metric = Action::from_relative(&id, Scale::Metric, ActionMode::Translation).unwrap();
        assert_eq!(metric.translation, [0.0; 3]);
        assert_eq!(metric.unit_translation(), None);
    }

    #[test]
    fn six_dof_action_carries_rotation() {
        let frames = vec![
            posed_frame(0, Rotation::identity(), [0.0; 3]),
            posed_frame(1, Rotation::from_euler(0.2, 0.0, 0.0), [0.0, 0.0, 0.03]),
        ];
        let t = Trajectory::new("r", frames, Scale::Metric, TrajectoryKind::Task).unwrap();
        let a = expert_action(&t, 0, ActionMode::SixDof).unwrap();
        let rv = a.rotation.unwrap().0;
        assert!((rv[2] - 0.2).abs() < 1e-12);
        assert!((a.translation[2] - 0.03).abs() < 1e-15);
    }
}
