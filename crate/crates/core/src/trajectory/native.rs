//! Native `.traj.jsonl` trajectory format.
//!
//! First line is a header, then one JSON object per frame:
//!
//! ```text
//! {"v":1,"id":"demo-000","scale":{"kind":"metric","s":null},"kind":"task"}
//! {"i":0,"img":"demo-000/000000.png","q":[1.0,0.0,0.0,0.0],"t":[0.0,0.0,0.3],"ts":0.0,"grip":null}
//! ```
//!
//! `q` and `t` hold `cam_from_world`. Floats are written in shortest
//! round-trip form, so read-after-write is bit-exact.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Frame, Gripper, Scale, Trajectory, TrajectoryError, TrajectoryKind};
use crate::geometry::FrameTag;
use crate::{RigidTransform, Rotation};

pub const FORMAT_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
struct ScaleRecord {
    kind: String,
    s: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    v: u64,
    id: String,
    scale: ScaleRecord,
    kind: String,
}

#[derive(Serialize, Deserialize)]
struct FrameRecord {
    i: usize,
    img: String,
    q: [f64; 4],
    t: [f64; 3],
    ts: Option<f64>,
    grip: Option<String>,
}

fn kind_str(kind: TrajectoryKind) -> &'static str {
    match kind {
        TrajectoryKind::Task => "task",
        TrajectoryKind::Play => "play",
    }
}

pub fn write_trajectory<W: Write>(t: &Trajectory, mut w: W) -> std::io::Result<()> {
    let scale = match t.scale() {
        Scale::Metric => ScaleRecord {
            kind: "metric".into(),
            s: None,
        },
        Scale::Reconstruction(s) => ScaleRecord {
            kind: "reconstruction".into(),
            s: Some(s),
        },
    };
    let header = Header {
        v: FORMAT_VERSION,
        id: t.id().to_string(),
        scale,
        kind: kind_str(t.kind()).into(),
    };
    serde_json::to_writer(&mut w, &header)?;
    writeln!(w)?;
    for f in t.frames() {
        let rec = FrameRecord {
            i: f.index,
            img: f.image_ref.clone(),
            q: f.cam_from_world.rotation.quaternion(),
            t: f.cam_from_world.translation,
            ts: f.timestamp,
            grip: match f.gripper {
                Gripper::Open => Some("open".into()),
                Gripper::Closed => Some("closed".into()),
                Gripper::None => None,
            },
        };
        serde_json::to_writer(&mut w, &rec)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn to_string(t: &Trajectory) -> String {
    let mut buf = Vec::new();
    write_trajectory(t, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

fn parse_err(line: usize, msg: impl Into<String>) -> TrajectoryError {
    TrajectoryError::Parse { line, msg: msg.into() }
}

pub fn read_trajectory<R: BufRead>(r: R) -> Result<Trajectory, TrajectoryError> {
    let mut lines = r.lines().enumerate();
    let header_line = loop {
        match lines.next() {
            Some((_, l)) => {
                let l = l?;
                if !l.trim().is_empty() {
                    break l;
                }
            }
            None => return Err(parse_err(1, "missing header")),
        }
    };
    // Check the version before the rest of the schema so that future
    // headers report VersionMismatch rather than a parse error.
    let raw: serde_json::Value = serde_json::from_str(&header_line).map_err(|e| parse_err(1, e.to_string()))?;
    match raw.get("v").and_then(|v| v.as_u64()) {
        Some(FORMAT_VERSION) => {}
        Some(found) => {
            return Err(TrajectoryError::VersionMismatch {
                found,
                expected: FORMAT_VERSION,
            })
        }
        None => return Err(parse_err(1, "header lacks integer field \"v\"")),
    }
    let header: Header = serde_json::from_value(raw).map_err(|e| parse_err(1, e.to_string()))?;
    let scale = match (header.scale.kind.as_str(), header.scale.s) {
        ("metric", _) => Scale::Metric,
        ("reconstruction", Some(s)) => Scale::Reconstruction(s),
        ("reconstruction", None) => return Err(parse_err(1, "reconstruction scale without \"s\"")),
        (other, _) => return Err(parse_err(1, format!("unknown scale kind {other:?}"))),
    };
    let kind = match header.kind.as_str() {
        "task" => TrajectoryKind::Task,
        "play" => TrajectoryKind::Play,
        other => return Err(parse_err(1, format!("unknown trajectory kind {other:?}"))),
    };
    let mut frames = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FrameRecord = serde_json::from_str(&line).map_err(|e| parse_err(line_no, e.to_string()))?;
        let rotation = Rotation::from_quaternion(rec.q[0], rec.q[1], rec.q[2], rec.q[3])
            .map_err(|_| parse_err(line_no, "zero quaternion"))?;
        let gripper = match rec.grip.as_deref() {
            None => Gripper::None,
            Some("open") => Gripper::Open,
            Some("closed") => Gripper::Closed,
            Some(other) => return Err(parse_err(line_no, format!("unknown gripper state {other:?}"))),
        };
        let mut frame = Frame::new(
            rec.i,
            rec.img,
            RigidTransform::new(rotation, rec.t, FrameTag::World, FrameTag::Camera(rec.i)),
        );
        frame.timestamp = rec.ts;
        frame.gripper = gripper;
        frames.push(frame);
    }
    Trajectory::new(header.id, frames, scale, kind)
}

pub fn save(t: &Trajectory, path: &Path) -> Result<(), TrajectoryError> {
    std::fs::write(path, to_string(t))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Trajectory, TrajectoryError> {
    let f = std::fs::File::open(path)?;
    read_trajectory(std::io::BufReader::new(f))
}
