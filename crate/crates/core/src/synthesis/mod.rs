//! View synthesis backends realizing `f(I_t, t_T_t~)`: given an observed
//! image and the pose of a virtual camera relative to it, produce the image
//! that virtual camera would see.

pub mod homography;
pub mod oracle;
pub mod remote;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::Image;
use crate::RigidTransform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Oracle,
    Homography,
    Remote,
    Identity,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Oracle => "oracle",
            BackendKind::Homography => "homography",
            BackendKind::Remote => "remote",
            BackendKind::Identity => "identity",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SynthesizerId {
    pub kind: BackendKind,
    pub version: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthErrorKind {
    Unavailable,
    MalformedResponse,
    DimensionMismatch,
}

#[derive(Debug, Clone, Error)]
#[error("synthesizer {kind:?}: {message}{}", provenance.as_deref().map(|p| format!(" [{p}]")).unwrap_or_default())]
pub struct SynthError {
    pub kind: SynthErrorKind,
    pub message: String,
    /// Which sample the request belonged to, e.g. `demo-003:12:1`.
    pub provenance: Option<String>,
}

impl SynthError {
    pub fn new(kind: SynthErrorKind, message: impl Into<String>) -> Self {
        SynthError {
            kind,
            message: message.into(),
            provenance: None,
        }
    }

    pub fn with_provenance(mut self, p: impl Into<String>) -> Self {
        self.provenance = Some(p.into());
        self
    }
}

/// One synthesis call.
#[derive(Debug, Clone, Copy)]
pub struct SynthRequest<'a> {
    pub image: &'a Image,
    /// `t_T_t~`: maps virtual-camera points into the observed camera.
    pub t_from_tilde: &'a RigidTransform,
    pub seed: u64,
    /// `t_T_w` of the observed camera (oracle backend only).
    pub source_pose: Option<&'a RigidTransform>,
    /// Image reference of the observed frame (oracle backend only).
    pub image_ref: Option<&'a str>,
}

pub trait Synthesizer: Send + Sync {
    fn id(&self) -> SynthesizerId;
    fn synthesize(&self, req: &SynthRequest<'_>) -> Result<Image, SynthError>;
}

/// Returns the input image untouched. Augmenting with it degenerates to
/// relabelling the original view.
#[derive(Debug, Clone, Default)]
pub struct IdentitySynth;

impl Synthesizer for IdentitySynth {
    fn id(&self) -> SynthesizerId {
        SynthesizerId {
            kind: BackendKind::Identity,
            version: "1".into(),
        }
    }

    fn synthesize(&self, req: &SynthRequest<'_>) -> Result<Image, SynthError> {
        Ok(req.image.clone())
    }
}

pub(crate) fn check_dims(image: &Image, width: usize, height: usize) -> Result<(), SynthError> {
    if image.width() != width || image.height() != height {
        return Err(SynthError::new(
            SynthErrorKind::DimensionMismatch,
            format!(
                "image is {}x{}, backend expects {width}x{height}",
                image.width(),
                image.height()
            ),
        ));
    }
    Ok(())
}
