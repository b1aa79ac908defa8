//! Perturbed-view augmentation with corrective k-step labels.
//!
//! For a demonstrated frame `t`, a virtual camera `t~` is placed at a small
//! offset `t_T_t~`, its view is synthesized, and it is labelled with the
//! motion that brings it to frame `t + k`:
//!
//! ```text
//! a~ = t~_T_{t+k} = (t_T_t~)^-1 * t_T_w * (t+k_T_w)^-1
//! ```

pub mod dataset;

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::PathBuf;

use log::warn;
use rand::Rng;
use rand_distr::{Distribution, UnitSphere};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, FrameTag};
use crate::raster::{Image, RasterError};
use crate::rng;
use crate::synthesis::{SynthError, SynthRequest, Synthesizer, SynthesizerId};
use crate::trajectory::{expert_action, Action, ActionMode, Scale, Trajectory, TrajectoryError};
use crate::{RigidTransform, Rotation};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("invalid perturbation spec: {0}")]
    InvalidSpec(String),
    #[error("trajectory scale is unavailable")]
    MissingScale,
    #[error("trajectory {id} has {len} frames, lookahead {k} needs at least {}", k + 1)]
    TooShort { id: String, len: usize, k: usize },
    #[error("no image for {0}")]
    MissingImage(String),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum DirectionMode {
    /// Uniform on the unit sphere.
    Sphere,
    /// Uniform angle in the plane orthogonal to `normal`.
    InPlane { normal: [f64; 3] },
}

/// Rotation bounds in radians, `[lo, hi]` per intrinsic ZYX angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationRanges {
    pub yaw: [f64; 2],
    pub pitch: [f64; 2],
    pub roll: [f64; 2],
}

impl Default for RotationRanges {
    fn default() -> Self {
        let d = PI / 180.0;
        RotationRanges {
            yaw: [-10.0 * d, 10.0 * d],
            pitch: [-10.0 * d, 10.0 * d],
            roll: [-10.0 * d, 15.0 * d],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    /// Meters for metric trajectories; fractions of the scale `s` otherwise.
    pub translation_range: [f64; 2],
    pub direction: DirectionMode,
    pub rotation: Option<RotationRanges>,
    pub samples_per_frame: usize,
    pub lookahead_k: usize,
}

impl PerturbationSpec {
    /// Translation-only offsets of 2-4 cm in any direction.
    pub fn metric() -> Self {
        PerturbationSpec {
            translation_range: [0.02, 0.04],
            direction: DirectionMode::Sphere,
            rotation: None,
            samples_per_frame: 2,
            lookahead_k: 3,
        }
    }

    /// Offsets of `[0.2 s, s]` for up-to-scale reconstructions.
    pub fn reconstruction() -> Self {
        PerturbationSpec {
            translation_range: [0.2, 1.0],
            ..Self::metric()
        }
    }

    /// Offsets in the camera image plane, as used by the planar pushing task.
    pub fn planar() -> Self {
        PerturbationSpec {
            direction: DirectionMode::InPlane { normal: [0.0, 0.0, 1.0] },
            ..Self::metric()
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let [lo, hi] = self.translation_range;
        let bad = |m: String| Err(AugmentError::InvalidSpec(m));
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return bad(format!("translation range must satisfy 0 < lo < hi, got [{lo}, {hi}]"));
        }
        if self.samples_per_frame == 0 {
            return bad("samples_per_frame must be at least 1".into());
        }
        if !(1..=10).contains(&self.lookahead_k) {
            return bad(format!("lookahead_k must be in 1..=10, got {}", self.lookahead_k));
        }
        if let DirectionMode::InPlane { normal } = self.direction {
            if !(geometry::norm(&normal) > 1e-12) {
                return bad("in-plane normal must be non-zero".into());
            }
        }
        if let Some(r) = &self.rotation {
            for (name, [a, b]) in [("yaw", r.yaw), ("pitch", r.pitch), ("roll", r.roll)] {
                if !(a <= b && a.is_finite() && b.is_finite()) {
                    return bad(format!("{name} range [{a}, {b}] is invalid"));
                }
            }
        }
        Ok(())
    }
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        Self::metric()
    }
}

/// A sampled virtual-camera offset for one (trajectory, frame, sample).
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    /// `t_T_t~`, from `Perturbed { frame, sample }` to `Camera(frame)`.
    pub t_from_tilde: RigidTransform,
    /// Position of the source frame within the trajectory.
    pub frame_pos: usize,
    pub sample: usize,
    pub traj_id: String,
}

impl Perturbation {
    pub fn identity(t: &Trajectory, frame_pos: usize, sample: usize) -> Result<Self, AugmentError> {
        let index = t.frame(frame_pos)?.index;
        Ok(Perturbation {
            t_from_tilde: RigidTransform::identity(FrameTag::Camera(index))
                .with_frames(FrameTag::Perturbed { frame: index, sample }, FrameTag::Camera(index)),
            frame_pos,
            sample,
            traj_id: t.id().to_string(),
        })
    }

    /// `traj:frame:sample`, used in logs and errors.
    pub fn provenance(&self) -> String {
        format!("{}:{}:{}", self.traj_id, self.frame_pos, self.sample)
    }
}

fn orthonormal_pair(n: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let l = geometry::norm(&n);
    let n = n.map(|v| v / l);
    // Start from the world axis least aligned with n.
    let a = if n[0].abs() <= n[1].abs() && n[0].abs() <= n[2].abs() {
        [1.0, 0.0, 0.0]
    } else if n[1].abs() <= n[2].abs() {
        [0.0, 1.0, 0.0]
    } else {
        [0.0, 0.0, 1.0]
    };
    let d = a[0] * n[0] + a[1] * n[1] + a[2] * n[2];
    let u = [a[0] - d * n[0], a[1] - d * n[1], a[2] - d * n[2]];
    let ul = geometry::norm(&u);
    let u = u.map(|v| v / ul);
    let v = [
        n[1] * u[2] - n[2] * u[1],
        n[2] * u[0] - n[0] * u[2],
        n[0] * u[1] - n[1] * u[0],
    ];
    (u, v)
}

/// Magnitude bounds in trajectory units.
pub fn magnitude_range(spec: &PerturbationSpec, scale: Scale) -> Result<[f64; 2], AugmentError> {
    let [lo, hi] = spec.translation_range;
    match scale {
        Scale::Metric => Ok([lo, hi]),
        Scale::Reconstruction(s) if s > 0.0 && s.is_finite() => Ok([lo * s, hi * s]),
        Scale::Reconstruction(_) => Err(AugmentError::MissingScale),
    }
}

/// Draws the perturbation for `(traj, frame_pos, sample)` from its own
/// stream, so the result does not depend on what else was sampled.
pub fn sample_perturbation(
    spec: &PerturbationSpec,
    t: &Trajectory,
    frame_pos: usize,
    sample: usize,
    master_seed: u64,
) -> Result<Perturbation, AugmentError> {
    let [lo, hi] = magnitude_range(spec, t.scale())?;
    let index = t.frame(frame_pos)?.index;
    let mut r = rng::stream(master_seed, &["perturb".into(), t.id().into(), index.into(), sample.into()]);
    let dir: [f64; 3] = match spec.direction {
        DirectionMode::Sphere => UnitSphere.sample(&mut r),
        DirectionMode::InPlane { normal } => {
            let (u, v) = orthonormal_pair(normal);
            let th = r.random_range(0.0..2.0 * PI);
            let (s, c) = th.sin_cos();
            [c * u[0] + s * v[0], c * u[1] + s * v[1], c * u[2] + s * v[2]]
        }
    };
    let m = r.random_range(lo..=hi);
    let rotation = match &spec.rotation {
        None => Rotation::identity(),
        Some(rr) => {
            let mut draw = |[a, b]: [f64; 2]| if a < b { r.random_range(a..=b) } else { a };
            let yaw = draw(rr.yaw);
            let pitch = draw(rr.pitch);
            let roll = draw(rr.roll);
            Rotation::from_euler(yaw, pitch, roll)
        }
    };
    Ok(Perturbation {
        t_from_tilde: RigidTransform::new(
            rotation,
            dir.map(|d| d * m),
            FrameTag::Perturbed { frame: index, sample },
            FrameTag::Camera(index),
        ),
        frame_pos,
        sample,
        traj_id: t.id().to_string(),
    })
}

/// `t~_T_{t+k}` for the perturbation's source frame.
pub fn label_transform(p: &Perturbation, t: &Trajectory, k: usize) -> Result<RigidTransform, AugmentError> {
    let target = p.frame_pos + k;
    if target >= t.len() {
        return Err(TrajectoryError::IndexOutOfRange {
            index: target,
            len: t.len(),
        }
        .into());
    }
    let t_from_w = &t.frame(p.frame_pos)?.cam_from_world;
    let w_from_tk = t.frame(target)?.cam_from_world.inverse();
    let chain = t_from_w.compose(&w_from_tk).map_err(TrajectoryError::from)?;
    Ok(p.t_from_tilde.inverse().compose(&chain).map_err(TrajectoryError::from)?)
}

pub fn compute_label(p: &Perturbation, t: &Trajectory, k: usize, mode: ActionMode) -> Result<Action, AugmentError> {
    let rel = label_transform(p, t, k)?;
    Ok(Action::from_relative(&rel, t.scale(), mode)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSample {
    pub image: Image,
    pub action: Action,
    pub k: usize,
    pub perturbation: Perturbation,
    pub synthesizer: SynthesizerId,
}

/// Whether the label, expressed in the source camera frame, points against
/// the demonstrated step at that frame.
pub fn overshoots(sample: &AugmentedSample, t: &Trajectory) -> Result<bool, AugmentError> {
    let step = expert_action(t, sample.perturbation.frame_pos, ActionMode::Translation)?;
    let in_t = sample.perturbation.t_from_tilde.rotation.rotate(&sample.action.translation);
    let dot: f64 = (0..3).map(|i| in_t[i] * step.translation[i]).sum();
    Ok(dot < 0.0)
}

/// Fraction of samples whose label opposes the expert's direction of motion.
pub fn overshoot_fraction(samples: &[AugmentedSample], t: &Trajectory) -> Result<f64, AugmentError> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut n = 0usize;
    for s in samples {
        if overshoots(s, t)? {
            n += 1;
        }
    }
    Ok(n as f64 / samples.len() as f64)
}

/// Where augmentation reads the observed images from.
pub trait ImageSource: Sync {
    fn load(&self, image_ref: &str) -> Result<Image, AugmentError>;
}

impl ImageSource for HashMap<String, Image> {
    fn load(&self, image_ref: &str) -> Result<Image, AugmentError> {
        self.get(image_ref)
            .cloned()
            .ok_or_else(|| AugmentError::MissingImage(image_ref.to_string()))
    }
}

/// PNG files resolved relative to a root directory.
#[derive(Debug, Clone)]
pub struct DirImages(pub PathBuf);

impl ImageSource for DirImages {
    fn load(&self, image_ref: &str) -> Result<Image, AugmentError> {
        let path = self.0.join(image_ref);
        if !path.exists() {
            return Err(AugmentError::MissingImage(path.display().to_string()));
        }
        Ok(Image::load_png(&path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailurePolicy {
    #[default]
    Abort,
    /// Log and drop samples whose synthesis fails.
    Skip,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AugmentOptions {
    pub action_mode: ActionMode,
    pub failure_policy: FailurePolicy,
    /// Drop samples whose label opposes the expert step. Off by default.
    pub filter_overshoot: bool,
    /// Use identity perturbations regardless of the spec.
    pub force_identity: bool,
    pub master_seed: u64,
}

/// Augments one trajectory. Output is frame-major, sample-minor whatever the
/// degree of parallelism.
pub fn augment_trajectory(
    t: &Trajectory,
    spec: &PerturbationSpec,
    opts: &AugmentOptions,
    synth: &dyn Synthesizer,
    images: &dyn ImageSource,
) -> Result<Vec<AugmentedSample>, AugmentError> {
    spec.validate()?;
    let k = spec.lookahead_k;
    if t.len() < k + 1 {
        return Err(AugmentError::TooShort {
            id: t.id().to_string(),
            len: t.len(),
            k,
        });
    }
    let id = synth.id();
    let eligible = t.len() - k;
    let per_frame: Vec<Vec<Result<Option<AugmentedSample>, AugmentError>>> = (0..eligible)
        .into_par_iter()
        .map(|pos| {
            let frame = match t.frame(pos) {
                Ok(f) => f,
                Err(e) => return vec![Err(e.into())],
            };
            let image = match images.load(&frame.image_ref) {
                Ok(i) => i,
                Err(e) => return vec![Err(e)],
            };
            (0..spec.samples_per_frame)
                .map(|sample| augment_one(t, spec, opts, synth, &id, &image, pos, sample))
                .collect()
        })
        .collect();

    let mut out = Vec::with_capacity(eligible * spec.samples_per_frame);
    for r in per_frame.into_iter().flatten() {
        match r {
            Ok(Some(s)) => out.push(s),
            Ok(None) => {}
            Err(AugmentError::Synth(e)) if opts.failure_policy == FailurePolicy::Skip => {
                warn!("skipping sample: {e}");
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn augment_one(
    t: &Trajectory,
    spec: &PerturbationSpec,
    opts: &AugmentOptions,
    synth: &dyn Synthesizer,
    id: &SynthesizerId,
    image: &Image,
    pos: usize,
    sample: usize,
) -> Result<Option<AugmentedSample>, AugmentError> {
    let p = if opts.force_identity {
        Perturbation::identity(t, pos, sample)?
    } else {
        sample_perturbation(spec, t, pos, sample, opts.master_seed)?
    };
    let action = match compute_label(&p, t, spec.lookahead_k, opts.action_mode) {
        Ok(a) => a,
        Err(AugmentError::Trajectory(TrajectoryError::ZeroAction)) => {
            warn!("{}: label has no translation, dropped", p.provenance());
            return Ok(None);
        }
        Err(e) => return Err(e),
    };
    let frame = t.frame(pos)?;
    let seed = rng::child_seed(opts.master_seed, &["synth".into(), t.id().into(), frame.index.into(), sample.into()]);
    let synthesized = synth
        .synthesize(&SynthRequest {
            image,
            t_from_tilde: &p.t_from_tilde,
            seed,
            source_pose: Some(&frame.cam_from_world),
            image_ref: Some(&frame.image_ref),
        })
        .map_err(|e| e.with_provenance(p.provenance()))?;
    let s = AugmentedSample {
        image: synthesized,
        action,
        k: spec.lookahead_k,
        perturbation: p,
        synthesizer: id.clone(),
    };
    if opts.filter_overshoot && overshoots(&s, t)? {
        return Ok(None);
    }
    Ok(Some(s))
}

/// Mirrors an (image, action) pair about the camera's vertical axis: the
/// lateral (camera-x) component flips sign, and so does the rotation about
/// the other two axes.
pub fn flip_pair(image: &Image, action: &Action) -> (Image, Action) {
    let [x, y, z] = action.translation;
    let rotation = action
        .rotation
        .map(|r| geometry::RotationVector([r.0[0], -r.0[1], -r.0[2]]));
    (
        image.flip_horizontal(),
        Action {
            translation: [-x, y, z],
            rotation,
        },
    )
}

pub fn flip_augment(s: &AugmentedSample) -> AugmentedSample {
    let (image, action) = flip_pair(&s.image, &s.action);
    AugmentedSample {
        image,
        action,
        ..s.clone()
    }
}

/// `clamp(round(gain * p + bias))` per pixel; bias in intensity levels.
pub fn jitter_image(image: &Image, gain: f64, bias: f64) -> Image {
    let mut out = image.clone();
    for p in out.data_mut() {
        *p = (gain * *p as f64 + bias).round().clamp(0.0, 255.0) as u8;
    }
    out
}

/// Gain uniform in [0.8, 1.2], bias uniform in ±10% of full scale.
pub fn random_jitter(image: &Image, rng: &mut impl Rng) -> Image {
    let gain = rng.random_range(0.8..=1.2);
    let bias = rng.random_range(-0.1..=0.1) * 255.0;
    jitter_image(image, gain, bias)
}

pub fn jitter_augment(s: &AugmentedSample, rng: &mut impl Rng) -> AugmentedSample {
    AugmentedSample {
        image: random_jitter(&s.image, rng),
        ..s.clone()
    }
}
