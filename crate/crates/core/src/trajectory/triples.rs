//! `(I_a, I_b, a_T_b)` training triples for a pose-conditioned view
//! synthesizer.

use std::io::Write;

use log::warn;
use rand::seq::index;
use serde::Serialize;

use super::{Trajectory, TrajectoryError};
use crate::rng;
use crate::RigidTransform;

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneTriple {
    pub a: usize,
    pub b: usize,
    pub image_a_ref: String,
    pub image_b_ref: String,
    pub a_from_b: RigidTransform,
}

/// Samples `n` distinct ordered pairs `(a, b)`, `a != b`, uniformly from the
/// trajectory. Asking for more pairs than exist returns every pair.
pub fn export_finetune_triples(t: &Trajectory, n: usize, seed: u64) -> Result<Vec<FinetuneTriple>, TrajectoryError> {
    let frames = t.len();
    if frames < 2 {
        return Err(TrajectoryError::TooFewFrames(frames));
    }
    let total = frames * (frames - 1);
    let take = if n > total {
        warn!("trajectory {}: {n} pairs requested, only {total} exist", t.id());
        total
    } else {
        n
    };
    let mut rng = rng::stream(seed, &["triples".into(), t.id().into()]);
    let picks = index::sample(&mut rng, total, take);
    picks
        .into_iter()
        .map(|k| {
            let a = k / (frames - 1);
            let r = k % (frames - 1);
            let b = if r < a { r } else { r + 1 };
            Ok(FinetuneTriple {
                a,
                b,
                image_a_ref: t.frames()[a].image_ref.clone(),
                image_b_ref: t.frames()[b].image_ref.clone(),
                a_from_b: t.relative(a, b)?,
            })
        })
        .collect()
}

#[derive(Serialize)]
struct TripleRecord<'a> {
    traj: &'a str,
    img_a: &'a str,
    img_b: &'a str,
    /// Row-major 4x4, maps frame-b points into frame a.
    a_from_b: [f64; 16],
}

/// One JSON object per line.
pub fn write_triples<W: Write>(traj_id: &str, triples: &[FinetuneTriple], mut w: W) -> std::io::Result<()> {
    for tr in triples {
        let m = tr.a_from_b.to_matrix();
        let mut flat = [0.0; 16];
        for (i, row) in m.iter().enumerate() {
            flat[i * 4..i * 4 + 4].copy_from_slice(row);
        }
        serde_json::to_writer(
            &mut w,
            &TripleRecord {
                traj: traj_id,
                img_a: &tr.image_a_ref,
                img_b: &tr.image_b_ref,
                a_from_b: flat,
            },
        )?;
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::test_support::*;
    use crate::trajectory::{Scale, TrajectoryKind};

    fn two_frames() -> Trajectory {
        Trajectory::new(
            "two",
            vec![frame_at(0, [0.0; 3]), frame_at(1, [0.0, 1.0, 0.0])],
            Scale::Metric,
            TrajectoryKind::Task,
        )
        .unwrap()
    }

    #[test]
    fn two_frame_single_pair() {
        let t = two_frames();
        let tr = export_finetune_triples(&t, 1, 3).unwrap();
        assert_eq!(tr.len(), 1);
        let (a, b) = (tr[0].a, tr[0].b);
        assert_ne!(a, b);
        assert_eq!(tr[0].a_from_b, t.relative(a, b).unwrap());
    }

    #[test]
    fn seeded_and_capped() {
        let t = two_frames();
        assert_eq!(export_finetune_triples(&t, 1, 9).unwrap(), export_finetune_triples(&t, 1, 9).unwrap());
        let all = export_finetune_triples(&t, 10, 0).unwrap();
        assert_eq!(all.len(), 2);
        assert_ne!((all[0].a, all[0].b), (all[1].a, all[1].b));
    }

    #[test]
    fn record_layout() {
        let t = two_frames();
        let tr = export_finetune_triples(&t, 1, 3).unwrap();
        let mut buf = Vec::new();
        write_triples("two", &tr, &mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["a_from_b"].as_array().unwrap().len(), 16);
        assert_eq!(v["a_from_b"][15], 1.0);
    }
}
