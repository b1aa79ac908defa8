//! `.aug.jsonl` augmented datasets.
//!
//! A header line records how the data was made; each following line is one
//! sample whose synthesized image is a PNG next to the index file:
//!
//! ```text
//! {"v":1,"seed":7,"synthesizer":{"kind":"oracle","version":"1"},"spec":{..},"options":{..}}
//! {"img":"aug/demo-000/000004_1.png","traj":"demo-000","frame":4,"pos":4,"sample":1,"k":3,"t":[..],"r":null,"q":[..],"p":[..]}
//! ```
//!
//! `q`/`p` hold the perturbation `t_T_t~`; `t`/`r` the label.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AugmentError, AugmentOptions, AugmentedSample, Perturbation, PerturbationSpec};
use crate::geometry::{self, FrameTag};
use crate::raster::Image;
use crate::synthesis::SynthesizerId;
use crate::trajectory::Action;
use crate::{RigidTransform, Rotation};

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugHeader {
    pub v: u64,
    pub seed: u64,
    pub synthesizer: SynthesizerId,
    pub spec: PerturbationSpec,
    pub options: AugmentOptions,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SampleRecord {
    img: String,
    traj: String,
    frame: usize,
    pos: usize,
    sample: usize,
    k: usize,
    t: [f64; 3],
    r: Option<[f64; 3]>,
    q: [f64; 4],
    p: [f64; 3],
}

pub fn image_path(s: &AugmentedSample) -> String {
    let frame = match s.perturbation.t_from_tilde.to {
        FrameTag::Camera(i) => i,
        _ => s.perturbation.frame_pos,
    };
    format!("aug/{}/{frame:06}_{}.png", s.perturbation.traj_id, s.perturbation.sample)
}

/// Writes `index` (the `.aug.jsonl` file) and one PNG per sample under the
/// index's directory.
pub fn write_dataset(index: &Path, header: &AugHeader, samples: &[AugmentedSample]) -> Result<(), AugmentError> {
    let root = index.parent().unwrap_or(Path::new("."));
    let mut w = BufWriter::new(fs::File::create(index)?);
    serde_json::to_writer(&mut w, header)?;
    writeln!(w)?;
    for s in samples {
        let img = image_path(s);
        let path = root.join(&img);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        s.image.save_png(&path)?;
        let frame = match s.perturbation.t_from_tilde.to {
            FrameTag::Camera(i) => i,
            _ => s.perturbation.frame_pos,
        };
        let rec = SampleRecord {
            img,
            traj: s.perturbation.traj_id.clone(),
            frame,
            pos: s.perturbation.frame_pos,
            sample: s.perturbation.sample,
            k: s.k,
            t: s.action.translation,
            r: s.action.rotation.map(|r| r.0),
            q: s.perturbation.t_from_tilde.rotation.quaternion(),
            p: s.perturbation.t_from_tilde.translation,
        };
        serde_json::to_writer(&mut w, &rec)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(index: &Path) -> Result<(AugHeader, Vec<AugmentedSample>), AugmentError> {
    let root = index.parent().unwrap_or(Path::new("."));
    let mut lines = BufReader::new(fs::File::open(index)?).lines();
    let first = lines
        .next()
        .ok_or_else(|| AugmentError::InvalidSpec(format!("{} is empty", index.display())))??;
    let header: AugHeader = serde_json::from_str(&first)?;
    if header.v != FORMAT_VERSION {
        return Err(AugmentError::InvalidSpec(format!(
            "dataset version {} (expected {FORMAT_VERSION})",
            header.v
        )));
    }
    let mut samples = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord = serde_json::from_str(&line)?;
        let [w, x, y, z] = rec.q;
        let rotation = Rotation::from_quaternion(w, x, y, z).map_err(|e| AugmentError::InvalidSpec(e.to_string()))?;
        let t_from_tilde = RigidTransform::new(
            rotation,
            rec.p,
            FrameTag::Perturbed {
                frame: rec.frame,
                sample: rec.sample,
            },
            FrameTag::Camera(rec.frame),
        );
        samples.push(AugmentedSample {
            image: Image::load_png(&root.join(&rec.img))?,
            action: Action {
                translation: rec.t,
                rotation: rec.r.map(geometry::RotationVector),
            },
            k: rec.k,
            perturbation: Perturbation {
                t_from_tilde,
                frame_pos: rec.pos,
                sample: rec.sample,
                traj_id: rec.traj,
            },
            synthesizer: header.synthesizer.clone(),
        });
    }
    Ok((header, samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{augment_trajectory, RotationRanges};
    use crate::synthesis::{IdentitySynth, Synthesizer};
    use crate::trajectory::test_support::frame_at;
    use crate::trajectory::{ActionMode, Scale, Trajectory, TrajectoryKind};
    use std::collections::HashMap;

    #[test]
    fn round_trip_is_exact() {
        let frames = (0..8).map(|i| frame_at(i, [0.01 * i as f64, 0.002 * i as f64, 0.0])).collect();
        let t = Trajectory::new("demo-000", frames, Scale::Metric, TrajectoryKind::Task).unwrap();
        let images: HashMap<_, _> = t
            .frames()
            .iter()
            .map(|f| (f.image_ref.clone(), Image::gray(6, 6, 10 * f.index as u8)))
            .collect();
        let spec = PerturbationSpec {
            rotation: Some(RotationRanges::default()),
            ..PerturbationSpec::metric()
        };
        let opts = AugmentOptions {
            action_mode: ActionMode::SixDof,
            master_seed: 3,
            ..Default::default()
        };
        let samples = augment_trajectory(&t, &spec, &opts, &IdentitySynth, &images).unwrap();
        let header = AugHeader {
            v: FORMAT_VERSION,
            seed: 3,
            synthesizer: IdentitySynth.id(),
            spec,
            options: opts,
        };
        let dir = tempfile::tempdir().unwrap();
        let index = dir.path().join("train.aug.jsonl");
        write_dataset(&index, &header, &samples).unwrap();
        let (h2, s2) = read_dataset(&index).unwrap();
        assert_eq!(h2, header);
        assert_eq!(s2, samples);
    }
}
