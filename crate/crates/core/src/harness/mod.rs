//! Offline metrics, randomized online A/B trials and reports.

pub mod experiment;

use std::sync::atomic::{AtomicBool, Ordering};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{Example, Mlp, PolicyError};
use crate::raster::Image;
use crate::rng;
use crate::sim::datagen::{run_episode, sample_start, Controller, EpisodeLog, Outcome, RunOptions, SimError};
use crate::sim::{Dir2, SimConfig, SimWorld};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("vector is not unit length (norm {0})")]
    NotUnit(f64),
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("trial plan was already executed")]
    PlanReuse,
    #[error("plan names {plan} methods, {given} controllers given")]
    MethodCount { plan: usize, given: usize },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Angle between two unit vectors, in `[0, pi]`.
pub fn angle_error(pred: &[f64], gt: &[f64]) -> Result<f64, HarnessError> {
    for v in [pred, gt] {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (n - 1.0).abs() > 1e-6 {
            return Err(HarnessError::NotUnit(n));
        }
    }
    let dot: f64 = pred.iter().zip(gt).map(|(a, b)| a * b).sum();
    Ok(dot.clamp(-1.0, 1.0).acos())
}

/// Median; the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// Median angle between predicted and labelled translation directions.
pub fn offline_eval(net: &Mlp<f64>, test: &[Example]) -> Result<f64, HarnessError> {
    if test.is_empty() {
        return Err(HarnessError::EmptyTestSet);
    }
    let d = net.head.translation_dims;
    let errors = test
        .iter()
        .map(|e| {
            let p = net.predict(&e.input)?;
            angle_error(&p[..d], &e.target[..d])
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(median(&errors).expect("non-empty"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineRow {
    pub method: String,
    pub median_angle: f64,
    pub train_size: usize,
    pub test_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineReport {
    pub rows: Vec<OfflineRow>,
    pub seed: u64,
    pub config_hash: String,
}

/// Steers the gripper along the policy's predicted camera-frame direction.
pub struct PolicyController<'a>(pub &'a Mlp<f64>);

impl Controller for PolicyController<'_> {
    fn act(&self, _world: &SimWorld, image: &Image) -> Dir2 {
        let p = self.0.predict_image(image).expect("policy input matches the camera");
        Dir2::from_camera([p[0], p[1]]).unwrap_or(Dir2::from_angle(0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedTrial {
    pub index: usize,
    pub start: SimWorld,
    pub method: usize,
}

/// A sealed, randomized assignment of start configurations to methods.
/// Starts are drawn first; the assignment comes afterwards from an
/// independent stream, so it cannot depend on the order of execution.
#[derive(Debug, Serialize, Deserialize)]
pub struct ABTrialPlan {
    pub methods: Vec<String>,
    pub trials: Vec<PlannedTrial>,
    pub seed: u64,
    /// Names of the random streams in the order they were consumed.
    pub draw_order: Vec<String>,
    #[serde(skip)]
    executed: AtomicBool,
}

impl ABTrialPlan {
    pub fn new(cfg: &SimConfig, methods: &[&str], trials_per_method: usize, seed: u64) -> Self {
        let n = methods.len() * trials_per_method;
        let starts: Vec<SimWorld> = (0..n)
            .map(|i| sample_start(cfg, &mut rng::stream(seed, &["ab-start".into(), i.into()])))
            .collect();
        let mut assignment: Vec<usize> = (0..methods.len())
            .flat_map(|m| std::iter::repeat_n(m, trials_per_method))
            .collect();
        assignment.shuffle(&mut rng::stream(seed, &["ab-assign".into()]));
        ABTrialPlan {
            methods: methods.iter().map(|s| s.to_string()).collect(),
            trials: starts
                .into_iter()
                .zip(assignment)
                .enumerate()
                .map(|(index, (start, method))| PlannedTrial { index, start, method })
                .collect(),
            seed,
            draw_order: vec!["ab-start".into(), "ab-assign".into()],
            executed: AtomicBool::new(false),
        }
    }

    pub fn trials_for(&self, method: usize) -> usize {
        self.trials.iter().filter(|t| t.method == method).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    pub method: String,
    pub outcome: Outcome,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineReport {
    pub methods: Vec<MethodResult>,
    pub trials: Vec<TrialRecord>,
    pub seed: u64,
    pub config_hash: String,
    #[serde(skip)]
    pub logs: Vec<EpisodeLog>,
}

impl OnlineReport {
    pub fn rate(&self, method: &str) -> Option<f64> {
        self.methods.iter().find(|m| m.method == method).map(|m| m.success_rate)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrialOptions {
    pub max_steps: usize,
    pub action_noise: f64,
}

/// Executes every planned trial with the controller of its assigned method.
pub fn run_ab(
    plan: &ABTrialPlan,
    controllers: &[&dyn Controller],
    cfg: &SimConfig,
    opts: TrialOptions,
    config_hash: &str,
) -> Result<OnlineReport, HarnessError> {
    if controllers.len() != plan.methods.len() {
        return Err(HarnessError::MethodCount {
            plan: plan.methods.len(),
            given: controllers.len(),
        });
    }
    if plan.executed.swap(true, Ordering::SeqCst) {
        return Err(HarnessError::PlanReuse);
    }
    let logs = plan
        .trials
        .par_iter()
        .map(|t| {
            let ep = run_episode(
                cfg,
                &format!("trial-{:03}", t.index),
                plan.seed,
                t.start,
                controllers[t.method],
                RunOptions {
                    max_steps: opts.max_steps,
                    record_images: false,
                    action_noise: opts.action_noise,
                },
            )?;
            Ok(ep.log)
        })
        .collect::<Result<Vec<EpisodeLog>, SimError>>()?;
    let trials: Vec<TrialRecord> = plan
        .trials
        .iter()
        .zip(&logs)
        .map(|(t, l)| TrialRecord {
            index: t.index,
            method: plan.methods[t.method].clone(),
            outcome: l.outcome,
            steps: l.steps_used,
        })
        .collect();
    let methods = plan
        .methods
        .iter()
        .map(|m| {
            let n = trials.iter().filter(|t| &t.method == m).count();
            let s = trials
                .iter()
                .filter(|t| &t.method == m && t.outcome == Outcome::Success)
                .count();
            MethodResult {
                method: m.clone(),
                trials: n,
                successes: s,
                success_rate: if n == 0 { 0.0 } else { s as f64 / n as f64 },
            }
        })
        .collect();
    Ok(OnlineReport {
        methods,
        trials,
        seed: plan.seed,
        config_hash: config_hash.to_string(),
        logs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::datagen::Expert;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn angle_error_cases() {
        assert_eq!(angle_error(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert!((angle_error(&[1.0, 0.0], &[-1.0, 0.0]).unwrap() - PI).abs() < 1e-15);
        assert!((angle_error(&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]).unwrap() - FRAC_PI_2).abs() < 1e-15);
        assert!(matches!(angle_error(&[2.0, 0.0], &[1.0, 0.0]), Err(HarnessError::NotUnit(_))));
    }

    #[test]
    fn median_of_three_errors() {
        assert_eq!(median(&[PI, 0.0, FRAC_PI_2]), Some(FRAC_PI_2));
        assert_eq!(median(&[1.0, 2.0, 3.0, 4.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn offline_eval_extremes() {
        use crate::policy::Head;
        use ndarray::Array2;
        // Linear net that outputs its (2-d) input.
        let mut net = Mlp::<f64>::zeros(&[2, 2], Head::PLANAR);
        net.layers[0].w = Array2::eye(2);
        let test: Vec<Example> = [0.3f64, 1.2, 2.5]
            .iter()
            .map(|a| Example {
                input: vec![a.cos(), a.sin()],
                target: vec![a.cos(), a.sin()],
            })
            .collect();
        assert!(offline_eval(&net, &test).unwrap() < 1e-12);
        net.layers[0].w = -Array2::<f64>::eye(2);
        assert!((offline_eval(&net, &test).unwrap() - PI).abs() < 1e-7);
        assert!(matches!(offline_eval(&net, &[]), Err(HarnessError::EmptyTestSet)));
    }

    #[test]
    fn plan_is_balanced_and_single_use() {
        let cfg = SimConfig::default();
        let plan = ABTrialPlan::new(&cfg, &["a", "b", "c"], 4, 1);
        assert_eq!(plan.trials.len(), 12);
        for m in 0..3 {
            assert_eq!(plan.trials_for(m), 4);
        }
        // Starts do not depend on the number of methods.
        let other = ABTrialPlan::new(&cfg, &["a", "b", "c", "d"], 3, 1);
        assert_eq!(plan.trials[5].start, other.trials[5].start);
        let e = Expert(&cfg);
        let ctl: Vec<&dyn Controller> = vec![&e, &e, &e];
        let opts = TrialOptions {
            max_steps: 400,
            action_noise: 0.0,
        };
        let report = run_ab(&plan, &ctl, &cfg, opts, "h").unwrap();
        assert!(report.methods.iter().all(|m| m.success_rate == 1.0 && m.trials == 4));
        assert!(matches!(run_ab(&plan, &ctl, &cfg, opts, "h"), Err(HarnessError::PlanReuse)));
    }

    #[test]
    fn empty_plan_gives_empty_report() {
        let cfg = SimConfig::default();
        let plan = ABTrialPlan::new(&cfg, &["a"], 0, 1);
        let e = Expert(&cfg);
        let report = run_ab(
            &plan,
            &[&e],
            &cfg,
            TrialOptions {
                max_steps: 10,
                action_noise: 0.0,
            },
            "",
        )
        .unwrap();
        assert!(report.trials.is_empty());
        assert_eq!(report.methods[0].trials, 0);
    }
}
