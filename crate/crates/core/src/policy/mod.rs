//! Raw-pixel MLP policy.
//!
//! `64*64 -> 256 -> 64 -> out`, ReLU hidden layers, linear output. The
//! translation head is read as a direction and normalized at inference.

pub mod train;

use std::fs;
use std::path::Path;

use log::warn;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Real;
use crate::raster::Image;
use crate::rng;
use crate::trajectory::Action;

pub use train::{gradient_check, train, Adam, GradCheck, TrainConfig, TrainOutput};

pub const CHECKPOINT_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("input has {found} values, network expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("examples disagree on action dimension ({0} vs {1})")]
    MixedActionDims(usize, usize),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Which action components the output layer carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Head {
    /// Leading camera-frame translation components (2 for planar motion).
    pub translation_dims: usize,
    /// Three extra outputs for a rotation vector.
    pub rotation: bool,
}

impl Head {
    pub const PLANAR: Head = Head {
        translation_dims: 2,
        rotation: false,
    };

    pub fn outputs(&self) -> usize {
        self.translation_dims + if self.rotation { 3 } else { 0 }
    }

    /// Regression target: unit translation (first `translation_dims`
    /// components, renormalized) followed by the rotation vector.
    pub fn target(&self, a: &Action) -> Option<Vec<f64>> {
        let tr = &a.translation[..self.translation_dims];
        let n = tr.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n < crate::trajectory::ZERO_MOTION_EPS {
            return None;
        }
        let mut t: Vec<f64> = tr.iter().map(|v| v / n).collect();
        if self.rotation {
            t.extend(a.rotation.map(|r| r.0).unwrap_or([0.0; 3]));
        }
        Some(t)
    }
}

/// One supervised pair: flattened pixels in `[0, 1]` and the target.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
}

pub fn image_input(img: &Image) -> Vec<f64> {
    img.data().iter().map(|&p| p as f64 / 255.0).collect()
}

impl Example {
    /// `None` when the action has no translation in the head's components.
    pub fn new(img: &Image, action: &Action, head: Head) -> Option<Self> {
        Some(Example {
            input: image_input(img),
            target: head.target(action)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    /// `inputs x outputs`, so a batch forward is `x.dot(w) + b`.
    pub w: Array2<T>,
    pub b: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Dense<T>>,
    pub head: Head,
}

/// Per-layer pre-activations from a batch forward pass.
pub struct Trace<T> {
    pub inputs: Array2<T>,
    pub pre: Vec<Array2<T>>,
}

impl<T> Trace<T> {
    pub fn output(&self) -> &Array2<T> {
        self.pre.last().expect("network has layers")
    }
}

fn relu<T: Real>(z: &Array2<T>) -> Array2<T> {
    z.mapv(|v| if v > T::zero() { v } else { T::zero() })
}

impl<T: Real> Mlp<T> {
    pub fn default_arch(input: usize, head: Head) -> Vec<usize> {
        vec![input, 256, 64, head.outputs()]
    }

    /// He-uniform weights, zero biases, drawn from the `init` stream of `seed`.
    pub fn new(sizes: &[usize], head: Head, seed: u64) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        assert_eq!(*sizes.last().unwrap(), head.outputs(), "output size must match head");
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(l, io)| {
                let (fan_in, fan_out) = (io[0], io[1]);
                let bound = (6.0 / fan_in as f64).sqrt();
                let mut r = rng::stream(seed, &["init".into(), l.into()]);
                let w = Array2::from_shape_fn((fan_in, fan_out), |_| T::lit(r.random_range(-bound..bound)));
                Dense {
                    w,
                    b: Array1::zeros(fan_out),
                }
            })
            .collect();
        Mlp { layers, head }
    }

    pub fn zeros(sizes: &[usize], head: Head) -> Self {
        let mut m = Self::new(sizes, head, 0);
        for l in &mut m.layers {
            l.w.fill(T::zero());
        }
        m
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].w.nrows()];
        s.extend(self.layers.iter().map(|l| l.w.ncols()));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn trace(&self, x: ArrayView2<'_, T>) -> Result<Trace<T>, PolicyError> {
        if x.ncols() != self.input_dim() {
            return Err(PolicyError::DimensionMismatch {
                expected: self.input_dim(),
                found: x.ncols(),
            });
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            let z = a.dot(&l.w) + &l.b;
            if i + 1 < self.layers.len() {
                a = relu(&z);
            }
            pre.push(z);
        }
        Ok(Trace {
            inputs: x.to_owned(),
            pre,
        })
    }

    pub fn forward_batch(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>, PolicyError> {
        let mut t = self.trace(x)?;
        Ok(t.pre.pop().unwrap())
    }

    /// Raw network output for one flattened input.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, PolicyError> {
        let x = Array2::from_shape_fn((1, input.len()), |(_, j)| T::lit(input[j]));
        let y = self.forward_batch(x.view())?;
        Ok(y.row(0).iter().map(|v| v.to_f64_lossy()).collect())
    }

    /// Forward pass with the translation part normalized to unit length. A
    /// zero translation falls back to `+x`.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>, PolicyError> {
        let mut y = self.forward(input)?;
        let d = self.head.translation_dims;
        let n = y[..d].iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 && n.is_finite() {
            y[..d].iter_mut().for_each(|v| *v /= n);
        } else {
            warn!("policy produced a zero translation; falling back to +x");
            y[..d].iter_mut().for_each(|v| *v = 0.0);
            y[0] = 1.0;
        }
        Ok(y)
    }

    pub fn predict_image(&self, img: &Image) -> Result<Vec<f64>, PolicyError> {
        self.predict(&image_input(img))
    }

    /// Mean over rows of the summed absolute error.
    pub fn l1_loss(pred: &Array2<T>, target: &Array2<T>) -> T {
        let b = T::from_usize(pred.nrows()).unwrap();
        (pred - target).mapv(|v| v.abs()).sum() / b
    }

    /// Loss and parameter gradients (`(dW, db)` per layer) for one batch.
    pub fn loss_and_grad(&self, x: ArrayView2<'_, T>, target: ArrayView2<'_, T>) -> Result<(T, Vec<Dense<T>>), PolicyError> {
        let tr = self.trace(x)?;
        let y = tr.output();
        let target = target.to_owned();
        let loss = Self::l1_loss(y, &target);
        let inv_b = T::one() / T::from_usize(y.nrows()).unwrap();
        let mut dz = (y - &target).mapv(|r| {
            if r > T::zero() {
                inv_b
            } else if r < T::zero() {
                -inv_b
            } else {
                T::zero()
            }
        });
        let mut grads = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let a_prev = if l == 0 { tr.inputs.clone() } else { relu(&tr.pre[l - 1]) };
            let dw = a_prev.t().dot(&dz);
            let db = dz.sum_axis(Axis(0));
            grads.push(Dense { w: dw, b: db });
            if l > 0 {
                let da = dz.dot(&self.layers[l].w.t());
                let zp = &tr.pre[l - 1];
                dz = ndarray::Zip::from(&da)
                    .and(zp)
                    .map_collect(|&g, &z| if z > T::zero() { g } else { T::zero() });
            }
        }
        grads.reverse();
        Ok((loss, grads))
    }

    /// Parameters as `f64`, in layer order (`w` row-major, then `b`).
    pub fn flat_params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(l.b.iter()).map(|v| v.to_f64_lossy()))
            .collect()
    }

    pub fn param_mut(&mut self, mut idx: usize) -> &mut T {
        for l in &mut self.layers {
            if idx < l.w.len() {
                let c = l.w.ncols();
                return &mut l.w[[idx / c, idx % c]];
            }
            idx -= l.w.len();
            if idx < l.b.len() {
                return &mut l.b[idx];
            }
            idx -= l.b.len();
        }
        panic!("parameter index out of range");
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Checkpoint {
    v: u64,
    scalar: String,
    sizes: Vec<usize>,
    head: Head,
    train: Option<TrainConfig>,
    params: Vec<f64>,
}

impl<T: Real> Mlp<T> {
    fn scalar_name() -> &'static str {
        if std::mem::size_of::<T>() == 4 {
            "f32"
        } else {
            "f64"
        }
    }

    pub fn to_json(&self, train: Option<&TrainConfig>) -> Result<String, PolicyError> {
        let ck = Checkpoint {
            v: CHECKPOINT_VERSION,
            scalar: Self::scalar_name().into(),
            sizes: self.sizes(),
            head: self.head,
            train: train.cloned(),
            params: self.flat_params(),
        };
        Ok(serde_json::to_string(&ck)?)
    }

    pub fn from_json(s: &str) -> Result<(Self, Option<TrainConfig>), PolicyError> {
        let ck: Checkpoint = serde_json::from_str(s)?;
        if ck.v != CHECKPOINT_VERSION {
            return Err(PolicyError::Checkpoint(format!("version {} (expected {CHECKPOINT_VERSION})", ck.v)));
        }
        if ck.scalar != Self::scalar_name() {
            return Err(PolicyError::Checkpoint(format!("checkpoint holds {} parameters", ck.scalar)));
        }
        if ck.sizes.len() < 2 || *ck.sizes.last().unwrap() != ck.head.outputs() {
            return Err(PolicyError::Checkpoint("layer sizes do not match head".into()));
        }
        let mut m = Self::zeros(&ck.sizes, ck.head);
        if ck.params.len() != m.param_count() {
            return Err(PolicyError::Checkpoint(format!(
                "{} parameters for an architecture of {}",
                ck.params.len(),
                m.param_count()
            )));
        }
        for (i, &p) in ck.params.iter().enumerate() {
            *m.param_mut(i) = T::lit(p);
        }
        Ok((m, ck.train))
    }

    pub fn save(&self, path: &Path, train: Option<&TrainConfig>) -> Result<(), PolicyError> {
        fs::write(path, self.to_json(train)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, Option<TrainConfig>), PolicyError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RotationVector;

    #[test]
    fn zero_network_falls_back_to_plus_x() {
        let m = Mlp::<f64>::zeros(&[4, 3, 2], Head::PLANAR);
        assert_eq!(m.forward(&[0.1, 0.2, 0.3, 0.4]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(m.predict(&[0.1, 0.2, 0.3, 0.4]).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn wrong_input_size_is_rejected() {
        let m = Mlp::<f32>::new(&[4, 3, 2], Head::PLANAR, 1);
        assert!(matches!(
            m.forward(&[0.0; 5]),
            Err(PolicyError::DimensionMismatch { expected: 4, found: 5 })
        ));
    }

    #[test]
    fn predict_is_unit() {
        let m = Mlp::<f64>::new(&[6, 8, 2], Head::PLANAR, 3);
        let p = m.predict(&[0.3, 0.9, 0.1, 0.0, 0.5, 0.2]).unwrap();
        assert!(((p[0] * p[0] + p[1] * p[1]).sqrt() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let m = Mlp::<f64>::new(&[5, 7, 3, 5], Head { translation_dims: 2, rotation: true }, 11);
        let (back, cfg) = Mlp::<f64>::from_json(&m.to_json(None).unwrap()).unwrap();
        assert_eq!(back, m);
        assert!(cfg.is_none());
        let m32 = Mlp::<f32>::new(&[5, 7, 2], Head::PLANAR, 11);
        assert_eq!(Mlp::<f32>::from_json(&m32.to_json(None).unwrap()).unwrap().0, m32);
        assert!(Mlp::<f64>::from_json(&m32.to_json(None).unwrap()).is_err());
    }

    #[test]
    fn targets_are_unit_translation_then_rotation() {
        let a = Action {
            translation: [0.03, -0.04, 0.5],
            rotation: Some(RotationVector([0.1, 0.2, 0.3])),
        };
        let t = Head::PLANAR.target(&a).unwrap();
        assert!((t[0] - 0.6).abs() < 1e-15 && (t[1] + 0.8).abs() < 1e-15);
        let t6 = Head { translation_dims: 3, rotation: true }.target(&a).unwrap();
        assert_eq!(t6.len(), 6);
        assert_eq!(&t6[3..], &[0.1, 0.2, 0.3]);
        let still = Action {
            translation: [0.0, 0.0, 1.0],
            rotation: None,
        };
        assert!(Head::PLANAR.target(&still).is_none());
    }

    #[test]
    fn linear_net_gradient_is_analytic() {
        // y = x w + b with one output; dL/dw = x * sign(y - t).
        let mut m = Mlp::<f64>::zeros(&[3, 1], Head { translation_dims: 1, rotation: false });
        m.layers[0].w = Array2::from_shape_vec((3, 1), vec![0.5, -1.0, 2.0]).unwrap();
        let x = Array2::from_shape_vec((1, 3), vec![1.0, 2.0, 3.0]).unwrap();
        let t = Array2::from_shape_vec((1, 1), vec![0.0]).unwrap();
        let (loss, g) = m.loss_and_grad(x.view(), t.view()).unwrap();
        assert_eq!(loss, 4.5);
        assert_eq!(g[0].w.as_slice().unwrap(), &[1.0, 2.0, 3.0]);
        assert_eq!(g[0].b.as_slice().unwrap(), &[1.0]);
    }
}
