//! Adam, the training loop and finite-difference gradient checking.

use log::info;
use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Dense, Example, Head, Mlp, PolicyError};
use crate::num::Real;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 64,
            epochs: 30,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.batch_size > 0
            && self.epochs > 0;
        if ok {
            Ok(())
        } else {
            Err(PolicyError::InvalidConfig(format!("{self:?}")))
        }
    }
}

pub struct Adam<T> {
    cfg: TrainConfig,
    m: Vec<Dense<T>>,
    v: Vec<Dense<T>>,
    t: i32,
}

impl<T: Real> Adam<T> {
    pub fn new(net: &Mlp<T>, cfg: &TrainConfig) -> Self {
        let zeros = || {
            net.layers
                .iter()
                .map(|l| Dense {
                    w: Array2::zeros(l.w.raw_dim()),
                    b: ndarray::Array1::zeros(l.b.len()),
                })
                .collect::<Vec<_>>()
        };
        Adam {
            cfg: cfg.clone(),
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn step(&mut self, net: &mut Mlp<T>, grads: &[Dense<T>]) {
        self.t += 1;
        let (b1, b2) = (T::lit(self.cfg.beta1), T::lit(self.cfg.beta2));
        let (one, eps) = (T::one(), T::lit(self.cfg.eps));
        let c1 = one - b1.powi(self.t);
        let c2 = one - b2.powi(self.t);
        let lr = T::lit(self.cfg.lr);
        let update = |p: &mut T, g: T, m: &mut T, v: &mut T| {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p = *p - lr * mh / (vh.sqrt() + eps);
        };
        for (((layer, g), m), v) in net.layers.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(&mut layer.w)
                .and(&g.w)
                .and(&mut m.w)
                .and(&mut v.w)
                .for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut layer.b)
                .and(&g.b)
                .and(&mut m.b)
                .and(&mut v.b)
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
    }
}

pub struct TrainOutput<T> {
    pub net: Mlp<T>,
    /// Mean L1 over the whole dataset before the first update.
    pub initial_loss: f64,
    /// Mean training L1 per epoch, accumulated during the epoch.
    pub epoch_losses: Vec<f64>,
}

/// Stacks the selected examples into `(inputs, targets)` matrices.
pub fn batch<T: Real>(examples: &[Example], idx: &[usize]) -> (Array2<T>, Array2<T>) {
    let d = examples[idx[0]].input.len();
    let o = examples[idx[0]].target.len();
    let x = Array2::from_shape_fn((idx.len(), d), |(r, c)| T::lit(examples[idx[r]].input[c]));
    let y = Array2::from_shape_fn((idx.len(), o), |(r, c)| T::lit(examples[idx[r]].target[c]));
    (x, y)
}

/// Mean L1 of `net` over `examples`.
pub fn dataset_loss<T: Real>(net: &Mlp<T>, examples: &[Example]) -> Result<f64, PolicyError> {
    let idx: Vec<usize> = (0..examples.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(256) {
        let (x, y) = batch::<T>(examples, chunk);
        let pred = net.forward_batch(x.view())?;
        total += Mlp::l1_loss(&pred, &y).to_f64_lossy() * chunk.len() as f64;
    }
    Ok(total / examples.len() as f64)
}

fn check_dataset(examples: &[Example], head: Head) -> Result<(), PolicyError> {
    let first = examples.first().ok_or(PolicyError::EmptyDataset)?;
    let o = first.target.len();
    for e in examples {
        if e.target.len() != o {
            return Err(PolicyError::MixedActionDims(o, e.target.len()));
        }
        if e.input.len() != first.input.len() {
            return Err(PolicyError::DimensionMismatch {
                expected: first.input.len(),
                found: e.input.len(),
            });
        }
    }
    if o != head.outputs() {
        return Err(PolicyError::MixedActionDims(head.outputs(), o));
    }
    Ok(())
}

/// Trains a fresh network of layer `sizes` with minibatch Adam. Shuffling
/// and initialization come from `cfg.seed`; the loop is single-threaded, so
/// the result is bit-reproducible.
pub fn train<T: Real>(examples: &[Example], sizes: &[usize], head: Head, cfg: &TrainConfig) -> Result<TrainOutput<T>, PolicyError> {
    cfg.validate()?;
    check_dataset(examples, head)?;
    let mut net = Mlp::<T>::new(sizes, head, cfg.seed);
    if net.input_dim() != examples[0].input.len() {
        return Err(PolicyError::DimensionMismatch {
            expected: net.input_dim(),
            found: examples[0].input.len(),
        });
    }
    let initial_loss = dataset_loss(&net, examples)?;
    let mut opt = Adam::new(&net, cfg);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng::stream(cfg.seed, &["shuffle".into(), epoch.into()]));
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let (x, y) = batch::<T>(examples, idx);
            let (loss, grads) = net.loss_and_grad(x.view(), y.view())?;
            total += loss.to_f64_lossy() * idx.len() as f64;
            opt.step(&mut net, &grads);
        }
        let mean = total / examples.len() as f64;
        log::debug!("epoch {epoch}: mean L1 {mean:.5}");
        epoch_losses.push(mean);
    }
    info!(
        "trained on {} examples: L1 {initial_loss:.4} -> {:.4}",
        examples.len(),
        epoch_losses.last().copied().unwrap_or(initial_loss)
    );
    Ok(TrainOutput {
        net,
        initial_loss,
        epoch_losses,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Draws rejected because `+-h` crossed a ReLU or L1 kink.
    pub skipped: usize,
}

/// Relative error floor: gradients smaller than this are compared in
/// absolute terms.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Signs of every hidden pre-activation and every output residual.
fn kink_pattern(net: &Mlp<f64>, x: ArrayView2<'_, f64>, t: ArrayView2<'_, f64>) -> Vec<i8> {
    let tr = net.trace(x).expect("checked dimensions");
    let sign = |v: f64| (v > 0.0) as i8 - (v < 0.0) as i8;
    let n = tr.pre.len();
    let mut p: Vec<i8> = tr.pre[..n - 1].iter().flat_map(|z| z.iter().map(|&v| sign(v))).collect();
    p.extend((tr.output() - &t).iter().map(|&v| sign(v)));
    p
}

/// Compares analytic gradients with central differences on `samples`
/// randomly chosen parameters. A draw whose `+-h` interval changes any ReLU
/// or L1 sign is non-differentiable there and is redrawn.
pub fn gradient_check(
    net: &Mlp<f64>,
    x: ArrayView2<'_, f64>,
    t: ArrayView2<'_, f64>,
    samples: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheck, PolicyError> {
    let (_, grads) = net.loss_and_grad(x, t)?;
    let analytic: Vec<f64> = grads.iter().flat_map(|g| g.w.iter().chain(g.b.iter()).copied()).collect();
    let base = kink_pattern(net, x, t);
    let mut r = rng::stream(seed, &["grad-check".into()]);
    let mut probe = net.clone();
    let (mut checked, mut skipped, mut worst) = (0usize, 0usize, 0.0f64);
    let limit = samples * 100;
    while checked < samples && checked + skipped < limit {
        let i = r.random_range(0..analytic.len());
        let p0 = *probe.param_mut(i);
        *probe.param_mut(i) = p0 + h;
        let plus_pattern = kink_pattern(&probe, x, t);
        let lp = Mlp::l1_loss(&probe.forward_batch(x)?, &t.to_owned());
        *probe.param_mut(i) = p0 - h;
        let minus_pattern = kink_pattern(&probe, x, t);
        let lm = Mlp::l1_loss(&probe.forward_batch(x)?, &t.to_owned());
        *probe.param_mut(i) = p0;
        if plus_pattern != base || minus_pattern != base {
            skipped += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        worst = worst.max(rel);
        checked += 1;
    }
    Ok(GradCheck {
        max_rel_error: worst,
        checked,
        skipped,
    })
}
