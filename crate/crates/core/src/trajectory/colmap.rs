//! COLMAP `images.txt` reader and writer.
//!
//! Layout: `#` comment lines, then two lines per image:
//!
//! ```text
//! IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME
//! POINTS2D[] as (X, Y, POINT3D_ID)
//! ```
//!
//! Only extrinsics are consumed; the 2D point line is skipped unparsed.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use super::{Frame, Trajectory, TrajectoryError, TrajectoryKind};
use crate::geometry::FrameTag;
use crate::{RigidTransform, Rotation};

/// Direction of the stored poses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PoseConvention {
    /// COLMAP's own convention (`t_T_w`).
    #[default]
    CamFromWorld,
    /// Poses are camera-to-world and are inverted on read.
    WorldFromCam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColmapImage {
    pub image_id: u64,
    pub camera_id: u64,
    pub name: String,
    pub cam_from_world: RigidTransform,
}

fn parse_err(line: usize, msg: impl Into<String>) -> TrajectoryError {
    TrajectoryError::Parse { line, msg: msg.into() }
}

fn parse_pose_line(line_no: usize, line: &str, convention: PoseConvention, ordinal: usize) -> Result<ColmapImage, TrajectoryError> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() < 10 {
        return Err(parse_err(line_no, format!("expected 10 fields, found {}", fields.len())));
    }
    let int = |i: usize, what: &str| -> Result<u64, TrajectoryError> {
        fields[i]
            .parse::<u64>()
            .map_err(|_| parse_err(line_no, format!("invalid {what} {:?}", fields[i])))
    };
    let float = |i: usize, what: &str| -> Result<f64, TrajectoryError> {
        let v = fields[i]
            .parse::<f64>()
            .map_err(|_| parse_err(line_no, format!("invalid {what} {:?}", fields[i])))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(parse_err(line_no, format!("non-finite {what}")))
        }
    };
    let image_id = int(0, "IMAGE_ID")?;
    let q = [float(1, "QW")?, float(2, "QX")?, float(3, "QY")?, float(4, "QZ")?];
    let t = [float(5, "TX")?, float(6, "TY")?, float(7, "TZ")?];
    let camera_id = int(8, "CAMERA_ID")?;
    // Names may contain spaces.
    let name = fields[9..].join(" ");
    let rotation = Rotation::from_quaternion(q[0], q[1], q[2], q[3])
        .map_err(|_| parse_err(line_no, "zero quaternion"))?;
    let cam = FrameTag::Camera(ordinal);
    let cam_from_world = match convention {
        PoseConvention::CamFromWorld => RigidTransform::new(rotation, t, FrameTag::World, cam),
        PoseConvention::WorldFromCam => RigidTransform::new(rotation, t, cam, FrameTag::World).inverse(),
    };
    Ok(ColmapImage {
        image_id,
        camera_id,
        name,
        cam_from_world,
    })
}

/// Parses image records in file order.
pub fn parse_colmap_images<R: BufRead>(reader: R, convention: PoseConvention) -> Result<Vec<ColmapImage>, TrajectoryError> {
    let mut out: Vec<ColmapImage> = Vec::new();
    let mut seen = HashSet::new();
    let mut expect_points = false;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if expect_points {
            expect_points = false;
            continue;
        }
        let trimmed = line.trim();
        if trimmed.starts_with('#') {
            continue;
        }
        if trimmed.is_empty() {
            // Tolerate blank lines between records and at end of file.
            continue;
        }
        let img = parse_pose_line(line_no, trimmed, convention, out.len())?;
        if !seen.insert(img.name.clone()) {
            return Err(TrajectoryError::DuplicateImageName(img.name));
        }
        out.push(img);
        expect_points = true;
    }
    Ok(out)
}

/// Writes records with an empty 2D-point line each. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_colmap_images<W: Write>(images: &[ColmapImage], mut w: W) -> std::io::Result<()> {
    writeln!(w, "# Image list with two lines of data per image:")?;
    writeln!(w, "#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME")?;
    writeln!(w, "#   POINTS2D[] as (X, Y, POINT3D_ID)")?;
    writeln!(w, "# Number of images: {}, mean observations per image: 0", images.len())?;
    for img in images {
        let [qw, qx, qy, qz] = img.cam_from_world.rotation.quaternion();
        let [tx, ty, tz] = img.cam_from_world.translation;
        writeln!(
            w,
            "{} {qw:?} {qx:?} {qy:?} {qz:?} {tx:?} {ty:?} {tz:?} {} {}",
            img.image_id, img.camera_id, img.name
        )?;
        writeln!(w)?;
    }
    Ok(())
}

/// Orders records by image name (frame order for extracted video) and builds
/// an up-to-scale trajectory from them.
pub fn trajectory_from_colmap(
    id: impl Into<String>,
    mut images: Vec<ColmapImage>,
    kind: TrajectoryKind,
) -> Result<Trajectory, TrajectoryError> {
    images.sort_by(|a, b| a.name.cmp(&b.name));
    let frames = images
        .into_iter()
        .enumerate()
        .map(|(i, img)| Frame::new(i, img.name, img.cam_from_world))
        .collect();
    Trajectory::reconstruction(id, frames, kind)
}

/// Inverse of [`trajectory_from_colmap`], for fixtures and export.
pub fn colmap_images_from_trajectory(t: &Trajectory) -> Vec<ColmapImage> {
    t.frames()
        .iter()
        .enumerate()
        .map(|(i, f)| ColmapImage {
            image_id: i as u64 + 1,
            camera_id: 1,
            name: f.image_ref.clone(),
            cam_from_world: f.cam_from_world,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    const HEADER: &str = "# Image list with two lines of data per image:\n#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n";

    #[test]
    fn identity_record() {
        let text = format!("{HEADER}1 1 0 0 0 0 0 0 1 f001.png\n\n");
        let imgs = parse_colmap_images(text.as_bytes(), PoseConvention::CamFromWorld).unwrap();
        assert_eq!(imgs.len(), 1);
        assert_eq!(imgs[0].name, "f001.png");
        assert_eq!(imgs[0].cam_from_world.rotation, Rotation::identity());
        assert_eq!(imgs[0].cam_from_world.translation, [0.0; 3]);
    }

    #[test]
    fn yaw_record() {
        let text = "2 0.7071068 0 0 0.7071068 1 0 0 1 f002.png\n100.5 200.5 -1 3.0 4.0 17\n";
        let imgs = parse_colmap_images(text.as_bytes(), PoseConvention::CamFromWorld).unwrap();
        let rv = imgs[0].cam_from_world.rotation.to_rotation_vector().0;
        assert!((rv[2] - FRAC_PI_2).abs() < 1e-6);
        assert!(rv[0].abs() < 1e-12 && rv[1].abs() < 1e-12);
        assert_eq!(imgs[0].cam_from_world.translation, [1.0, 0.0, 0.0]);
        let norm = imgs[0].cam_from_world.rotation.norm();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn points_line_is_skipped_even_if_it_looks_like_a_pose() {
        let text = "1 1 0 0 0 0 0 0 1 a.png\n2 1 0 0 0 0 0 0 1 b.png\n3 1 0 0 0 1 0 0 1 c.png\n\n";
        let imgs = parse_colmap_images(text.as_bytes(), PoseConvention::CamFromWorld).unwrap();
        let names: Vec<_> = imgs.iter().map(|i| i.name.as_str()).collect();
        assert_eq!(names, ["a.png", "c.png"]);
    }

    #[test]
    fn malformed_fields_report_line() {
        let text = format!("{HEADER}1 1 0 0 0 0 0 0 1 a.png\n\n2 1 0 zero 0 0 0 0 1 b.png\n\n");
        match parse_colmap_images(text.as_bytes(), PoseConvention::CamFromWorld) {
            Err(TrajectoryError::Parse { line, msg }) => {
                assert_eq!(line, 5);
                assert!(msg.contains("QY"), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
        let short = "1 1 0 0 0 0 0 1 a.png\n";
        assert!(matches!(
            parse_colmap_images(short.as_bytes(), PoseConvention::CamFromWorld),
            Err(TrajectoryError::Parse { line: 1, .. })
        ));
        let zero_q = "# c\n1 0 0 0 0 0 0 0 1 a.png\n";
        assert!(matches!(
            parse_colmap_images(zero_q.as_bytes(), PoseConvention::CamFromWorld),
            Err(TrajectoryError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn duplicate_names_rejected() {
        let text = "1 1 0 0 0 0 0 0 1 a.png\n\n2 1 0 0 0 1 0 0 1 a.png\n\n";
        assert!(matches!(
            parse_colmap_images(text.as_bytes(), PoseConvention::CamFromWorld),
            Err(TrajectoryError::DuplicateImageName(n)) if n == "a.png"
        ));
    }

    #[test]
    fn world_from_cam_is_inverted() {
        let text = "1 1 0 0 0 2 0 0 1 a.png\n\n";
        let imgs = parse_colmap_images(text.as_bytes(), PoseConvention::WorldFromCam).unwrap();
        assert_eq!(imgs[0].cam_from_world.translation, [-2.0, 0.0, 0.0]);
        assert_eq!(imgs[0].cam_from_world.from, FrameTag::World);
    }

    #[test]
    fn names_with_spaces() {
        let text = "1 1 0 0 0 0 0 0 1 my frame.png\n\n";
        let imgs = parse_colmap_images(text.as_bytes(), PoseConvention::CamFromWorld).unwrap();
        assert_eq!(imgs[0].name, "my frame.png");
    }
}
