//! Perturbed-view data augmentation for eye-in-hand imitation learning.

pub mod augment;
pub mod geometry;
pub mod harness;
pub mod num;
pub mod policy;
pub mod raster;
pub mod rng;
pub mod sim;
pub mod synthesis;
pub mod trajectory;

pub use num::Real;

pub type Rotation = geometry::Rotation<f64>;
pub type RigidTransform = geometry::RigidTransform<f64>;
pub type RotationVector = geometry::RotationVector<f64>;
