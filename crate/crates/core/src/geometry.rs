//! Rigid-body pose algebra.
//!
//! A [`RigidTransform`] written `a_T_b` maps points expressed in frame `b`
//! into frame `a`: its `from` tag is `b` and its `to` tag is `a`. Composition
//! `a_T_b * b_T_c` is only legal when the inner tags agree.

use std::fmt;

use thiserror::Error;

use crate::num::Real;

pub type Vec3<T> = [T; 3];
pub type Mat3<T> = [[T; 3]; 3];
/// Row-major homogeneous matrix.
pub type Mat4<T> = [[T; 4]; 4];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("frame mismatch: cannot chain a transform from {outer_from} with one into {inner_to}")]
    FrameMismatch { outer_from: FrameTag, inner_to: FrameTag },
    #[error("quaternion has zero or non-finite norm")]
    DegenerateQuaternion,
    #[error("matrix is not a rigid transform: {0}")]
    NotRigid(String),
}

/// Runtime label for a coordinate frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FrameTag {
    World,
    /// Camera at trajectory frame `i`.
    Camera(usize),
    /// Virtual camera of perturbation sample `sample` around frame `frame`.
    Perturbed { frame: usize, sample: usize },
    /// Free-form frame for callers outside the trajectory vocabulary.
    Named(&'static str),
}

impl fmt::Display for FrameTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FrameTag::World => write!(f, "world"),
            FrameTag::Camera(i) => write!(f, "cam({i})"),
            FrameTag::Perturbed { frame, sample } => write!(f, "cam~({frame},{sample})"),
            FrameTag::Named(name) => write!(f, "{name}"),
        }
    }
}

#[inline]
fn dot<T: Real>(a: &Vec3<T>, b: &Vec3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn cross<T: Real>(a: &Vec3<T>, b: &Vec3<T>) -> Vec3<T> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm<T: Real>(v: &Vec3<T>) -> T {
    dot(v, v).sqrt()
}

/// Unit quaternion with the double cover resolved towards `w >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation<T> {
    w: T,
    x: T,
    y: T,
    z: T,
}

impl<T: Real> Default for Rotation<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> Rotation<T> {
    pub fn identity() -> Self {
        Rotation {
            w: T::one(),
            x: T::zero(),
            y: T::zero(),
            z: T::zero(),
        }
    }

    /// Normalizes and canonicalizes `(w, x, y, z)`.
    pub fn from_quaternion(w: T, x: T, y: T, z: T) -> Result<Self, GeometryError> {
        let n2 = w * w + x * x + y * y + z * z;
        if !(n2 > T::zero()) || !n2.is_finite() {
            return Err(GeometryError::DegenerateQuaternion);
        }
        Ok(Self::normalized(w, x, y, z))
    }

    fn normalized(w: T, x: T, y: T, z: T) -> Self {
        let n2 = w * w + x * x + y * y + z * z;
        // Already-unit inputs pass through bit-for-bit: composing with the
        // identity is exact and normalization is idempotent.
        let (w, x, y, z) = if (n2 - T::one()).abs() > T::epsilon() * T::lit(64.0) {
            let n = n2.sqrt();
            (w / n, x / n, y / n, z / n)
        } else {
            (w, x, y, z)
        };
        let flip = w < T::zero()
            || (w == T::zero()
                && (x < T::zero()
                    || (x == T::zero() && (y < T::zero() || (y == T::zero() && z < T::zero())))));
        if flip {
            Rotation { w: -w, x: -x, y: -y, z: -z }
        } else {
            Rotation { w, x, y, z }
        }
    }

    /// `(w, x, y, z)`
    pub fn quaternion(&self) -> [T; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(&self) -> T {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Hamilton product `self * other`.
    pub fn compose(&self, other: &Self) -> Self {
        let (a, b) = (self, other);
        Self::normalized(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }

    pub fn inverse(&self) -> Self {
        Self::normalized(self.w, -self.x, -self.y, -self.z)
    }

    pub fn rotate(&self, v: &Vec3<T>) -> Vec3<T> {
        // v + 2w (q x v) + 2 q x (q x v)
        let q = [self.x, self.y, self.z];
        let two = T::lit(2.0);
        let c = cross(&q, v);
        let cc = cross(&q, &c);
        [
            v[0] + two * (self.w * c[0] + cc[0]),
            v[1] + two * (self.w * c[1] + cc[1]),
            v[2] + two * (self.w * c[2] + cc[2]),
        ]
    }

    pub fn to_matrix(&self) -> Mat3<T> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        let one = T::one();
        let two = T::lit(2.0);
        [
            [
                one - two * (y * y + z * z),
                two * (x * y - w * z),
                two * (x * z + w * y),
            ],
            [
                two * (x * y + w * z),
                one - two * (x * x + z * z),
                two * (y * z - w * x),
            ],
            [
                two * (x * z - w * y),
                two * (y * z + w * x),
                one - two * (x * x + y * y),
            ],
        ]
    }

    /// Rotation matrix to quaternion (Shepperd's method). Does not check
    /// orthonormality.
    pub fn from_matrix(m: &Mat3<T>) -> Result<Self, GeometryError> {
        let one = T::one();
        let quarter = T::lit(0.25);
        let trace = m[0][0] + m[1][1] + m[2][2];
        let (w, x, y, z);
        if trace > m[0][0] && trace > m[1][1] && trace > m[2][2] {
            let s = (one + trace).sqrt() * T::lit(2.0);
            w = quarter * s;
            x = (m[2][1] - m[1][2]) / s;
            y = (m[0][2] - m[2][0]) / s;
            z = (m[1][0] - m[0][1]) / s;
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = (one + m[0][0] - m[1][1] - m[2][2]).sqrt() * T::lit(2.0);
            w = (m[2][1] - m[1][2]) / s;
            x = quarter * s;
            y = (m[0][1] + m[1][0]) / s;
            z = (m[0][2] + m[2][0]) / s;
        } else if m[1][1] > m[2][2] {
            let s = (one + m[1][1] - m[0][0] - m[2][2]).sqrt() * T::lit(2.0);
            w = (m[0][2] - m[2][0]) / s;
            x = (m[0][1] + m[1][0]) / s;
            y = quarter * s;
            z = (m[1][2] + m[2][1]) / s;
        } else {
            let s = (one + m[2][2] - m[0][0] - m[1][1]).sqrt() * T::lit(2.0);
            w = (m[1][0] - m[0][1]) / s;
            x = (m[0][2] + m[2][0]) / s;
            y = (m[1][2] + m[2][1]) / s;
            z = quarter * s;
        }
        Self::from_quaternion(w, x, y, z)
    }

    /// Intrinsic Z-Y-X (yaw, then pitch, then roll) rotation.
    pub fn from_euler(yaw: T, pitch: T, roll: T) -> Self {
        let half = T::lit(0.5);
        let (sy, cy) = (yaw * half).sin_cos();
        let (sp, cp) = (pitch * half).sin_cos();
        let (sr, cr) = (roll * half).sin_cos();
        let qz = Rotation { w: cy, x: T::zero(), y: T::zero(), z: sy };
        let qy = Rotation { w: cp, x: T::zero(), y: sp, z: T::zero() };
        let qx = Rotation { w: cr, x: sr, y: T::zero(), z: T::zero() };
        qz.compose(&qy).compose(&qx)
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> T {
        let v = [self.x, self.y, self.z];
        T::lit(2.0) * norm(&v).atan2(self.w)
    }

    pub fn to_rotation_vector(&self) -> RotationVector<T> {
        let v = [self.x, self.y, self.z];
        let s = norm(&v);
        if s == T::zero() {
            return RotationVector([T::zero(); 3]);
        }
        let angle = T::lit(2.0) * s.atan2(self.w);
        let k = angle / s;
        RotationVector([v[0] * k, v[1] * k, v[2] * k])
    }

    pub fn from_rotation_vector(rv: &RotationVector<T>) -> Self {
        let v = rv.0;
        let angle = norm(&v);
        if angle == T::zero() {
            return Self::identity();
        }
        let (s, c) = (angle * T::lit(0.5)).sin_cos();
        let k = s / angle;
        Self::normalized(c, v[0] * k, v[1] * k, v[2] * k)
    }
}

/// Axis-angle vector in radians; magnitude in `[0, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RotationVector<T>(pub Vec3<T>);

impl<T: Real> RotationVector<T> {
    pub fn angle(&self) -> T {
        norm(&self.0)
    }
}

/// Element of SE(3) with explicit frame semantics: maps points expressed in
/// `from` into `to`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform<T> {
    pub rotation: Rotation<T>,
    pub translation: Vec3<T>,
    pub from: FrameTag,
    pub to: FrameTag,
}

impl<T: Real> RigidTransform<T> {
    pub fn new(rotation: Rotation<T>, translation: Vec3<T>, from: FrameTag, to: FrameTag) -> Self {
        RigidTransform {
            rotation,
            translation,
            from,
            to,
        }
    }

    pub fn identity(frame: FrameTag) -> Self {
        Self::new(Rotation::identity(), [T::zero(); 3], frame, frame)
    }

    pub fn from_translation(translation: Vec3<T>, from: FrameTag, to: FrameTag) -> Self {
        Self::new(Rotation::identity(), translation, from, to)
    }

    /// `self * inner`: first apply `inner`, then `self`.
    pub fn compose(&self, inner: &Self) -> Result<Self, GeometryError> {
        if self.from != inner.to {
            return Err(GeometryError::FrameMismatch {
                outer_from: self.from,
                inner_to: inner.to,
            });
        }
        let rotated = self.rotation.rotate(&inner.translation);
        Ok(RigidTransform {
            rotation: self.rotation.compose(&inner.rotation),
            translation: [
                self.translation[0] + rotated[0],
                self.translation[1] + rotated[1],
                self.translation[2] + rotated[2],
            ],
            from: inner.from,
            to: self.to,
        })
    }

    pub fn inverse(&self) -> Self {
        let inv = self.rotation.inverse();
        let t = inv.rotate(&self.translation);
        RigidTransform {
            rotation: inv,
            translation: [-t[0], -t[1], -t[2]],
            from: self.to,
            to: self.from,
        }
    }

    pub fn transform_point(&self, p: &Vec3<T>) -> Vec3<T> {
        let r = self.rotation.rotate(p);
        [
            r[0] + self.translation[0],
            r[1] + self.translation[1],
            r[2] + self.translation[2],
        ]
    }

    pub fn to_matrix(&self) -> Mat4<T> {
        let r = self.rotation.to_matrix();
        let (z, o) = (T::zero(), T::one());
        [
            [r[0][0], r[0][1], r[0][2], self.translation[0]],
            [r[1][0], r[1][1], r[1][2], self.translation[1]],
            [r[2][0], r[2][1], r[2][2], self.translation[2]],
            [z, z, z, o],
        ]
    }

    /// Builds a transform from a homogeneous matrix, rejecting anything that
    /// is not a proper rigid motion within `tol`.
    pub fn from_matrix(m: &Mat4<T>, from: FrameTag, to: FrameTag, tol: T) -> Result<Self, GeometryError> {
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(GeometryError::NotRigid("non-finite entry".into()));
        }
        let last = [T::zero(), T::zero(), T::zero(), T::one()];
        if m[3].iter().zip(last.iter()).any(|(a, b)| (*a - *b).abs() > tol) {
            return Err(GeometryError::NotRigid("last row must be [0, 0, 0, 1]".into()));
        }
        let r: Mat3<T> = [
            [m[0][0], m[0][1], m[0][2]],
            [m[1][0], m[1][1], m[1][2]],
            [m[2][0], m[2][1], m[2][2]],
        ];
        for i in 0..3 {
            for j in 0..3 {
                let mut s = T::zero();
                for k in 0..3 {
                    s = s + r[k][i] * r[k][j];
                }
                let expect = if i == j { T::one() } else { T::zero() };
                if (s - expect).abs() > tol {
                    return Err(GeometryError::NotRigid("rotation block is not orthonormal".into()));
                }
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if det < T::zero() {
            return Err(GeometryError::NotRigid("rotation block is a reflection".into()));
        }
        Ok(Self::new(
            Rotation::from_matrix(&r)?,
            [m[0][3], m[1][3], m[2][3]],
            from,
            to,
        ))
    }

    pub fn with_frames(mut self, from: FrameTag, to: FrameTag) -> Self {
        self.from = from;
        self.to = to;
        self
    }

    /// Largest absolute difference between the homogeneous matrices of the
    /// two transforms (frame tags ignored).
    pub fn max_abs_diff(&self, other: &Self) -> T {
        let (a, b) = (self.to_matrix(), other.to_matrix());
        let mut worst = T::zero();
        for i in 0..4 {
            for j in 0..4 {
                worst = worst.max((a[i][j] - b[i][j]).abs());
            }
        }
        worst
    }
}

/// `a_T_b = a_T_w * (b_T_w)^-1` for two world-anchored poses.
pub fn relative_pose<T: Real>(
    a_from_w: &RigidTransform<T>,
    b_from_w: &RigidTransform<T>,
) -> Result<RigidTransform<T>, GeometryError> {
    for pose in [a_from_w, b_from_w] {
        if pose.from != FrameTag::World {
            return Err(GeometryError::FrameMismatch {
                outer_from: pose.from,
                inner_to: FrameTag::World,
            });
        }
    }
    a_from_w.compose(&b_from_w.inverse())
}
