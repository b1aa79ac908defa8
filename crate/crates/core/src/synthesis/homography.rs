//! Planar-homography warp.
//!
//! Assumes the whole scene is the plane `z = depth` in the observed camera
//! frame (the table seen by a camera looking straight down) and models the
//! camera as a pinhole whose footprint on that plane matches the image.
//! Under this model the view from a virtual camera is a homography of the
//! observed image. Anything off the plane (the gripper, which rides with the
//! camera) is warped as if it were painted on the table, and pixels that come
//! from outside the observed image are filled with zero. Those are the
//! artifacts that make this a degraded synthesizer.

use serde::{Deserialize, Serialize};

use super::{check_dims, BackendKind, SynthError, SynthRequest, Synthesizer, SynthesizerId};
use crate::geometry::Mat3;
use crate::raster::Image;
use crate::RigidTransform;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomographyConfig {
    pub width: usize,
    pub height: usize,
    /// Plane footprint of one pixel, meters.
    pub pitch: f64,
    /// Distance from the camera to the scene plane, meters.
    pub depth: f64,
}

impl HomographyConfig {
    pub fn from_camera(cam: &crate::sim::CameraConfig) -> Self {
        HomographyConfig {
            width: cam.resolution,
            height: cam.resolution,
            pitch: cam.pitch(),
            depth: cam.height,
        }
    }

    /// Focal length in pixels of the equivalent pinhole camera.
    pub fn focal(&self) -> f64 {
        self.depth / self.pitch
    }
}

#[derive(Debug, Clone)]
pub struct HomographySynth {
    cfg: HomographyConfig,
}

fn mat_vec(m: &Mat3<f64>, v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Homography (in normalized camera coordinates) taking rays of the virtual
/// camera to rays of the observed camera, for the plane `n . X = depth` with
/// `n = (0, 0, 1)` in the observed frame. `None` when the virtual camera is
/// on or behind the plane.
pub fn virtual_to_observed(t_from_tilde: &RigidTransform, depth: f64) -> Option<Mat3<f64>> {
    let r = t_from_tilde.rotation.to_matrix();
    let t = t_from_tilde.translation;
    // Plane in the virtual frame: n2 . X2 = d2.
    let n2 = [r[2][0], r[2][1], r[2][2]];
    let d2 = depth - t[2];
    if d2 <= 0.0 {
        return None;
    }
    let mut h = r;
    for (i, row) in h.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v += t[i] * n2[j] / d2;
        }
    }
    Some(h)
}

/// Bilinear sample at continuous pixel coordinates (integers at pixel
/// centres); samples outside the image read as zero.
fn bilinear(img: &Image, x: f64, y: f64, c: usize) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (w, h) = (img.width() as i64, img.height() as i64);
    let px = |xi: i64, yi: i64| -> f64 {
        if xi < 0 || yi < 0 || xi >= w || yi >= h {
            0.0
        } else {
            img.get(xi as usize, yi as usize, c) as f64
        }
    };
    let (xi, yi) = (x0 as i64, y0 as i64);
    let top = px(xi, yi) * (1.0 - fx) + px(xi + 1, yi) * fx;
    let bottom = px(xi, yi + 1) * (1.0 - fx) + px(xi + 1, yi + 1) * fx;
    top * (1.0 - fy) + bottom * fy
}

impl HomographySynth {
    pub fn new(cfg: HomographyConfig) -> Self {
        HomographySynth { cfg }
    }

    pub fn config(&self) -> &HomographyConfig {
        &self.cfg
    }

    pub fn warp(&self, image: &Image, t_from_tilde: &RigidTransform) -> Image {
        let c = &self.cfg;
        let mut out = Image::new(image.width(), image.height(), image.channels(), 0);
        let Some(h) = virtual_to_observed(t_from_tilde, c.depth) else {
            return out;
        };
        let f = c.focal();
        let (cx, cy) = (c.width as f64 / 2.0, c.height as f64 / 2.0);
        for v in 0..c.height {
            for u in 0..c.width {
                let ray = [(u as f64 + 0.5 - cx) / f, (v as f64 + 0.5 - cy) / f, 1.0];
                let src = mat_vec(&h, ray);
                if src[2] <= 0.0 {
                    continue;
                }
                let xs = f * src[0] / src[2] + cx - 0.5;
                let ys = f * src[1] / src[2] + cy - 0.5;
                for ch in 0..image.channels().count() {
                    let val = bilinear(image, xs, ys, ch);
                    out.set(u, v, ch, val.round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        out
    }
}

impl Synthesizer for HomographySynth {
    fn id(&self) -> SynthesizerId {
        SynthesizerId {
            kind: BackendKind::Homography,
            version: format!("1;depth={};pitch={}", self.cfg.depth, self.cfg.pitch),
        }
    }

    fn synthesize(&self, req: &SynthRequest<'_>) -> Result<Image, SynthError> {
        check_dims(req.image, self.cfg.width, self.cfg.height)?;
        Ok(self.warp(req.image, req.t_from_tilde))
    }
}
