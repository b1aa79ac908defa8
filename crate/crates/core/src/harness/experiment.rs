//! End-to-end simulator experiments: demos -> (augmentation) -> training ->
//! offline and online evaluation.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{offline_eval, run_ab, ABTrialPlan, HarnessError, OfflineRow, OnlineReport, PolicyController, TrialOptions};
use crate::augment::{augment_trajectory, random_jitter, AugmentError, AugmentOptions, AugmentedSample, PerturbationSpec};
use crate::policy::{image_input, train, Example, Head, Mlp, PolicyError, TrainConfig};
use crate::raster::{Channels, Image};
use crate::rng;
use crate::sim::datagen::{generate_demos, Controller, Episode, Expert, SimError};
use crate::sim::SimConfig;
use crate::synthesis::homography::{HomographyConfig, HomographySynth};
use crate::synthesis::oracle::OracleSynth;
use crate::synthesis::{BackendKind, IdentitySynth, Synthesizer};
use crate::trajectory::{expert_action, ActionMode, TrajectoryError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error("{0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub sim: SimConfig,
    pub demos: usize,
    pub spec: PerturbationSpec,
    pub train: TrainConfig,
    pub hidden: Vec<usize>,
    pub trials_per_method: usize,
    /// Heading noise (radians, std-dev) during policy execution.
    pub action_noise: f64,
    pub max_steps: usize,
    /// Standard augmentations applied on top of each method's training set.
    pub flip: bool,
    pub jitter: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            sim: SimConfig::default(),
            demos: 8,
            spec: PerturbationSpec {
                translation_range: [0.01, 0.03],
                ..PerturbationSpec::planar()
            },
            train: TrainConfig {
                epochs: 300,
                ..TrainConfig::default()
            },
            hidden: vec![256, 64],
            trials_per_method: 50,
            action_noise: 0.0,
            max_steps: 400,
            flip: false,
            jitter: false,
        }
    }
}

impl ExperimentConfig {
    pub fn hash(&self) -> String {
        rng::sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    pub fn sizes(&self) -> Vec<usize> {
        let n = self.sim.camera.resolution;
        let mut s = vec![n * n];
        s.extend(&self.hidden);
        s.push(Head::PLANAR.outputs());
        s
    }
}

/// A way of producing training data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Expert frames only.
    Bc,
    /// Expert frames plus perturbed views from the given synthesizer.
    Dmd(BackendKind),
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::Bc => "bc".into(),
            Method::Dmd(k) => format!("dmd-{k}"),
        }
    }
}

/// `(image, expert step)` for every non-final frame of every demo.
pub fn task_examples(demos: &[Episode]) -> Result<Vec<Example>, ExperimentError> {
    let mut out = Vec::new();
    for ep in demos {
        let t = ep
            .trajectory
            .as_ref()
            .ok_or_else(|| ExperimentError::Config(format!("{} has no trajectory", ep.log.id)))?;
        for i in 0..t.len() - 1 {
            let a = expert_action(t, i, ActionMode::Translation)?;
            if let Some(e) = Example::new(&ep.images[i], &a, Head::PLANAR) {
                out.push(e);
            }
        }
    }
    Ok(out)
}

pub fn episode_images(demos: &[Episode]) -> HashMap<String, Image> {
    demos
        .iter()
        .filter_map(|ep| ep.trajectory.as_ref().map(|t| (t, &ep.images)))
        .flat_map(|(t, imgs)| t.frames().iter().zip(imgs).map(|(f, i)| (f.image_ref.clone(), i.clone())))
        .collect()
}

pub fn synthesizer(kind: BackendKind, sim: &SimConfig, demos: &[Episode]) -> Result<Box<dyn Synthesizer>, ExperimentError> {
    Ok(match kind {
        BackendKind::Oracle => Box::new(OracleSynth::from_episodes(*sim, demos.iter().map(|e| &e.log))),
        BackendKind::Homography => Box::new(HomographySynth::new(HomographyConfig::from_camera(&sim.camera))),
        BackendKind::Identity => Box::new(IdentitySynth),
        BackendKind::Remote => {
            return Err(ExperimentError::Config(
                "the remote backend needs an endpoint; construct it explicitly".into(),
            ))
        }
    })
}

pub fn augment_demos(
    demos: &[Episode],
    spec: &PerturbationSpec,
    opts: &AugmentOptions,
    synth: &dyn Synthesizer,
) -> Result<Vec<AugmentedSample>, ExperimentError> {
    let images = episode_images(demos);
    let mut out = Vec::new();
    for ep in demos {
        if let Some(t) = &ep.trajectory {
            if t.len() > spec.lookahead_k {
                out.extend(augment_trajectory(t, spec, opts, synth, &images)?);
            }
        }
    }
    Ok(out)
}

pub fn augmented_examples(samples: &[AugmentedSample]) -> Vec<Example> {
    samples
        .iter()
        .filter_map(|s| Example::new(&s.image, &s.action, Head::PLANAR))
        .collect()
}

/// Options the experiment uses to augment demos with `cfg`'s spec.
pub fn augment_options(cfg: &ExperimentConfig) -> AugmentOptions {
    AugmentOptions {
        master_seed: rng::child_seed(cfg.seed, &["augment".into()]),
        ..Default::default()
    }
}

fn example_image(e: &Example, side: usize) -> Image {
    let px = e.input.iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect();
    Image::from_raw(side, side, Channels::Gray, px).expect("square grayscale input")
}

/// Mirrors an example about the image's vertical axis.
pub fn flip_example(e: &Example, side: usize, head: Head) -> Example {
    let mut input = e.input.clone();
    for row in input.chunks_mut(side) {
        row.reverse();
    }
    let mut target = e.target.clone();
    target[0] = -target[0];
    if head.rotation {
        let d = head.translation_dims;
        target[d + 1] = -target[d + 1];
        target[d + 2] = -target[d + 2];
    }
    Example { input, target }
}

/// Appends mirrored copies (`flip`) and then one brightness/contrast
/// jittered copy of everything so far (`jitter`).
pub fn standard_augment(mut ex: Vec<Example>, side: usize, head: Head, flip: bool, jitter: bool, seed: u64) -> Vec<Example> {
    if flip {
        let flipped: Vec<Example> = ex.iter().map(|e| flip_example(e, side, head)).collect();
        ex.extend(flipped);
    }
    if jitter {
        let mut r = rng::stream(seed, &["jitter".into()]);
        let jittered: Vec<Example> = ex
            .iter()
            .map(|e| Example {
                input: image_input(&random_jitter(&example_image(e, side), &mut r)),
                target: e.target.clone(),
            })
            .collect();
        ex.extend(jittered);
    }
    ex
}

/// Expert frames of `demos`, plus augmented views from `synth` if given,
/// plus the configured standard augmentations.
pub fn examples_with(
    cfg: &ExperimentConfig,
    demos: &[Episode],
    synth: Option<&dyn Synthesizer>,
    opts: &AugmentOptions,
) -> Result<Vec<Example>, ExperimentError> {
    let mut ex = task_examples(demos)?;
    if let Some(synth) = synth {
        ex.extend(augmented_examples(&augment_demos(demos, &cfg.spec, opts, synth)?));
    }
    Ok(with_standard_augment(cfg, ex))
}

/// [`standard_augment`] as configured by `cfg`.
pub fn with_standard_augment(cfg: &ExperimentConfig, ex: Vec<Example>) -> Vec<Example> {
    standard_augment(
        ex,
        cfg.sim.camera.resolution,
        Head::PLANAR,
        cfg.flip,
        cfg.jitter,
        rng::child_seed(cfg.seed, &["standard-augment".into()]),
    )
}

/// Training set for `method` over `demos`.
pub fn method_examples(cfg: &ExperimentConfig, method: Method, demos: &[Episode]) -> Result<Vec<Example>, ExperimentError> {
    let synth = match method {
        Method::Bc => None,
        Method::Dmd(kind) => Some(synthesizer(kind, &cfg.sim, demos)?),
    };
    examples_with(cfg, demos, synth.as_deref(), &augment_options(cfg))
}

/// Held-out demos for offline evaluation, disjoint in seed from the
/// training demos.
pub fn held_out_demos(cfg: &ExperimentConfig, n: usize) -> Result<Vec<Episode>, ExperimentError> {
    Ok(generate_demos(&cfg.sim, n, rng::child_seed(cfg.seed, &["held-out".into()]))?)
}

pub fn train_method(cfg: &ExperimentConfig, examples: &[Example]) -> Result<Mlp<f64>, ExperimentError> {
    Ok(train::<f64>(examples, &cfg.sizes(), Head::PLANAR, &cfg.train)?.net)
}

/// Trains one policy per method on the same demos and runs them through one
/// sealed A/B plan. `with_expert` adds the scripted expert as a sanity arm.
pub fn online_comparison(cfg: &ExperimentConfig, methods: &[Method], with_expert: bool) -> Result<OnlineReport, ExperimentError> {
    let demos = generate_demos(&cfg.sim, cfg.demos, cfg.seed)?;
    // Each training run is single-threaded and seeded, so running them side
    // by side does not affect the result.
    let nets = methods
        .par_iter()
        .map(|&m| train_method(cfg, &method_examples(cfg, m, &demos)?))
        .collect::<Result<Vec<_>, _>>()?;
    let mut names: Vec<String> = methods.iter().map(Method::name).collect();
    let ctls: Vec<PolicyController> = nets.iter().map(PolicyController).collect();
    let expert = Expert(&cfg.sim);
    let mut refs: Vec<&dyn Controller> = ctls.iter().map(|c| c as &dyn Controller).collect();
    if with_expert {
        names.push("expert".into());
        refs.push(&expert);
    }
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let plan = ABTrialPlan::new(
        &cfg.sim,
        &name_refs,
        cfg.trials_per_method,
        rng::child_seed(cfg.seed, &["ab".into()]),
    );
    let opts = TrialOptions {
        max_steps: cfg.max_steps,
        action_noise: cfg.action_noise,
    };
    Ok(run_ab(&plan, &refs, &cfg.sim, opts, &cfg.hash())?)
}

/// Offline median angle error for `method`, evaluated on expert frames of
/// held-out demos.
pub fn offline_comparison(
    cfg: &ExperimentConfig,
    train_demos: &[Episode],
    test_demos: &[Episode],
    method: Method,
    name: &str,
) -> Result<OfflineRow, ExperimentError> {
    let train_set = method_examples(cfg, method, train_demos)?;
    let test_set = task_examples(test_demos)?;
    let net = train_method(cfg, &train_set)?;
    Ok(OfflineRow {
        method: name.to_string(),
        median_angle: offline_eval(&net, &test_set)?,
        train_size: train_set.len(),
        test_size: test_set.len(),
    })
}
