//! Episodes, expert demonstrations and play data.

use std::f64::consts::PI;
use std::io;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::render::render;
use super::{camera_pose, expert, len2, sub, Dir2, SimConfig, SimWorld, Status};
use crate::raster::{Image, RasterError};
use crate::rng;
use crate::trajectory::{native, Frame, Scale, Trajectory, TrajectoryError, TrajectoryKind};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("expert failed episode {id} ({outcome:?} after {steps} steps)")]
    ExpertFailed { id: String, outcome: Outcome, steps: usize },
    #[error("replay diverged at step {0}")]
    ReplayDiverged(usize),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("episode log: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Success,
    OutOfBounds,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// State before the action.
    pub state: SimWorld,
    pub action: Dir2,
    pub image_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub id: String,
    pub seed: u64,
    pub start: SimWorld,
    pub steps: Vec<StepRecord>,
    pub final_state: SimWorld,
    /// Image of the final state, if rendered.
    pub final_image_ref: Option<String>,
    pub outcome: Outcome,
    pub steps_used: usize,
}

impl EpisodeLog {
    /// World state shown in frame `i` (`steps.len()` is the final state).
    pub fn state(&self, i: usize) -> Option<&SimWorld> {
        match i.cmp(&self.steps.len()) {
            std::cmp::Ordering::Less => Some(&self.steps[i].state),
            std::cmp::Ordering::Equal => Some(&self.final_state),
            std::cmp::Ordering::Greater => None,
        }
    }

    /// Re-simulates the logged actions from the logged start and checks
    /// every state bit-for-bit.
    pub fn replay(&self, cfg: &SimConfig) -> Result<(), SimError> {
        let mut w = self.start;
        for (i, s) in self.steps.iter().enumerate() {
            if w != s.state {
                return Err(SimError::ReplayDiverged(i));
            }
            w = w.step(cfg, s.action);
        }
        if w != self.final_state {
            return Err(SimError::ReplayDiverged(self.steps.len()));
        }
        Ok(())
    }
}

/// Something that picks an action from the current observation.
pub trait Controller: Sync {
    fn act(&self, world: &SimWorld, image: &Image) -> Dir2;

    /// Whether [`Controller::act`] looks at the image. Skips rendering when
    /// it does not and no images are being recorded.
    fn needs_image(&self) -> bool {
        true
    }
}

/// The scripted expert as a [`Controller`].
pub struct Expert<'a>(pub &'a SimConfig);

impl Controller for Expert<'_> {
    fn act(&self, world: &SimWorld, _image: &Image) -> Dir2 {
        expert::expert_action(self.0, world)
    }

    fn needs_image(&self) -> bool {
        false
    }
}

/// A finished rollout: log, posed trajectory and rendered frames.
#[derive(Debug, Clone)]
pub struct Episode {
    pub log: EpisodeLog,
    pub trajectory: Option<Trajectory>,
    pub images: Vec<Image>,
}

fn uniform(rng: &mut impl Rng, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.random_range(range[0]..range[1])
    } else {
        range[0]
    }
}

/// Samples a start configuration; mirror-symmetric about `x = 0`.
pub fn sample_start(cfg: &SimConfig, rng: &mut impl Rng) -> SimWorld {
    let s = &cfg.start;
    loop {
        let target = [uniform(rng, [-s.target_x, s.target_x]), uniform(rng, s.target_y)];
        let push_bearing = -PI / 2.0 + uniform(rng, [-s.push_spread, s.push_spread]);
        let push = Dir2::from_angle(push_bearing).get();
        let d = uniform(rng, s.push_distance);
        let object = [target[0] + d * push[0], target[1] + d * push[1]];
        let grip_bearing = push_bearing + uniform(rng, [-s.gripper_spread, s.gripper_spread]);
        let g = Dir2::from_angle(grip_bearing).get();
        let r = uniform(rng, s.gripper_distance);
        let gripper = [object[0] + r * g[0], object[1] + r * g[1]];
        let w = SimWorld::new(cfg, gripper, object, target);
        let margin = 0.08;
        let inside = |p: [f64; 2]| p[0].abs() <= cfg.table_half[0] - margin && p[1].abs() <= cfg.table_half[1] - margin;
        if w.status == Status::Running && inside(gripper) && inside(object) && len2(sub(gripper, object)) > cfg.object_radius + cfg.gripper_radius {
            return w;
        }
    }
}

/// Options for [`run_episode`].
#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub max_steps: usize,
    /// Keep rendered frames (and build a trajectory).
    pub record_images: bool,
    /// Standard deviation (radians) of Gaussian heading noise added to every
    /// executed action.
    pub action_noise: f64,
}

/// Rolls `controller` out from `start`.
pub fn run_episode(
    cfg: &SimConfig,
    id: &str,
    seed: u64,
    start: SimWorld,
    controller: &dyn Controller,
    opts: RunOptions,
) -> Result<Episode, SimError> {
    let mut noise_rng = rng::stream(seed, &["exec-noise".into(), id.into()]);
    let noise = Normal::new(0.0, opts.action_noise.max(0.0)).expect("finite sigma");
    let mut world = start;
    let mut steps = Vec::new();
    let mut images = Vec::new();
    let mut poses = Vec::new();
    let blank = Image::gray(cfg.camera.resolution, cfg.camera.resolution, 0);
    while !world.is_terminal() && steps.len() < opts.max_steps {
        let pose = camera_pose(&cfg.camera, world.gripper);
        let render_now = opts.record_images || controller.needs_image();
        let image = if render_now { render(cfg, &world, &pose) } else { blank.clone() };
        let mut action = controller.act(&world, &image);
        if opts.action_noise > 0.0 {
            action = action.rotated(noise.sample(&mut noise_rng));
        }
        let image_ref = format!("{id}/{:06}.png", steps.len());
        steps.push(StepRecord {
            state: world,
            action,
            image_ref,
        });
        if opts.record_images {
            images.push(image);
            poses.push(pose);
        }
        world = world.step(cfg, action);
    }
    let outcome = match world.status {
        Status::Success => Outcome::Success,
        Status::OutOfBounds => Outcome::OutOfBounds,
        Status::Running => Outcome::Timeout,
    };
    let final_image_ref = opts.record_images.then(|| format!("{id}/{:06}.png", steps.len()));
    let trajectory = if opts.record_images {
        let pose = camera_pose(&cfg.camera, world.gripper);
        images.push(render(cfg, &world, &pose));
        poses.push(pose);
        let frames: Vec<Frame> = poses
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut f = Frame::new(i, format!("{id}/{i:06}.png"), *p);
                f.timestamp = Some(i as f64);
                f
            })
            .collect();
        if frames.len() >= 2 {
            Some(Trajectory::new(id, frames, Scale::Metric, TrajectoryKind::Task)?)
        } else {
            None
        }
    } else {
        None
    };
    let steps_used = steps.len();
    Ok(Episode {
        log: EpisodeLog {
            id: id.to_string(),
            seed,
            start,
            steps,
            final_state: world,
            final_image_ref,
            outcome,
            steps_used,
        },
        trajectory,
        images,
    })
}

pub fn demo_id(i: usize) -> String {
    format!("demo-{i:03}")
}

pub fn play_id(i: usize) -> String {
    format!("play-{i:03}")
}

/// `n` expert demonstrations from seeded random starts. Any expert failure is
/// a bug and aborts generation.
pub fn generate_demos(cfg: &SimConfig, n: usize, seed: u64) -> Result<Vec<Episode>, SimError> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let id = demo_id(i);
            let start = sample_start(cfg, &mut rng::stream(seed, &["demo-start".into(), i.into()]));
            let ep = run_episode(
                cfg,
                &id,
                seed,
                start,
                &Expert(cfg),
                RunOptions {
                    max_steps: cfg.max_steps,
                    record_images: true,
                    action_noise: 0.0,
                },
            )?;
            if ep.log.outcome != Outcome::Success {
                return Err(SimError::ExpertFailed {
                    id,
                    outcome: ep.log.outcome,
                    steps: ep.log.steps_used,
                });
            }
            Ok(ep)
        })
        .collect()
}

/// Random-walk controller that now and then heads for the object.
struct RandomWalk {
    headings: Vec<Dir2>,
}

impl RandomWalk {
    fn new(cfg: &SimConfig, start: SimWorld, steps: usize, rng: &mut impl Rng) -> Self {
        // Pre-draw headings by simulating the walk so that the controller
        // itself stays a pure function of the step index.
        let turn = Normal::new(0.0, 0.5).unwrap();
        let mut heading: f64 = rng.random_range(-PI..PI);
        let mut w = start;
        let mut headings = Vec::with_capacity(steps);
        let limit = [cfg.table_half[0] - 0.05, cfg.table_half[1] - 0.05];
        for _ in 0..steps {
            if rng.random_bool(0.1) {
                let to_obj = sub(w.object, w.gripper);
                heading = to_obj[1].atan2(to_obj[0]);
            } else {
                heading += turn.sample(rng);
            }
            let mut d = Dir2::from_angle(heading);
            let next = [w.gripper[0] + 0.05 * d.get()[0], w.gripper[1] + 0.05 * d.get()[1]];
            if next[0].abs() > limit[0] || next[1].abs() > limit[1] {
                // Turn back towards the table centre.
                d = Dir2::new([-w.gripper[0], -w.gripper[1]]).unwrap_or(d);
                heading = d.angle();
            }
            headings.push(d);
            w = w.step(cfg, d);
            if w.is_terminal() {
                w.status = Status::Running;
            }
        }
        RandomWalk { headings }
    }
}

struct Scripted<'a> {
    walk: &'a RandomWalk,
    counter: std::sync::atomic::AtomicUsize,
}

impl Controller for Scripted<'_> {
    fn act(&self, _world: &SimWorld, _image: &Image) -> Dir2 {
        let i = self.counter.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        self.walk.headings[i.min(self.walk.headings.len() - 1)]
    }

    fn needs_image(&self) -> bool {
        false
    }
}

/// `n` task-agnostic play trajectories of `steps` random-walk steps each.
/// Play episodes ignore task success; they stop early only when something
/// leaves the table.
pub fn generate_play(cfg: &SimConfig, n: usize, seed: u64, steps: usize) -> Result<Vec<Episode>, SimError> {
    let mut play_cfg = *cfg;
    // Play data does not stop at the target.
    play_cfg.success_radius = -1.0;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let id = play_id(i);
            let mut r = rng::stream(seed, &["play".into(), i.into()]);
            let start = sample_start(cfg, &mut r);
            let start = SimWorld { status: Status::Running, ..start };
            let walk = RandomWalk::new(&play_cfg, start, steps, &mut r);
            let ctl = Scripted {
                walk: &walk,
                counter: Default::default(),
            };
            let mut ep = run_episode(
                &play_cfg,
                &id,
                seed,
                start,
                &ctl,
                RunOptions {
                    max_steps: steps,
                    record_images: true,
                    action_noise: 0.0,
                },
            )?;
            if let Some(t) = ep.trajectory.take() {
                ep.trajectory = Some(Trajectory::new(t.id(), t.frames().to_vec(), Scale::Metric, TrajectoryKind::Play)?);
            }
            Ok(ep)
        })
        .collect()
}

/// Writes `<dir>/<id>.traj.jsonl`, `<dir>/<id>.episode.json` and the PNG
/// frames under `<dir>/<id>/`.
pub fn write_episode(dir: &Path, ep: &Episode) -> Result<(), SimError> {
    let id = &ep.log.id;
    std::fs::create_dir_all(dir.join(id))?;
    if let Some(t) = &ep.trajectory {
        native::save(t, &dir.join(format!("{id}.traj.jsonl")))?;
        for (f, img) in t.frames().iter().zip(&ep.images) {
            img.save_png(&dir.join(&f.image_ref))?;
        }
    }
    let mut json = serde_json::to_string_pretty(&ep.log)?;
    json.push('\n');
    std::fs::write(dir.join(format!("{id}.episode.json")), json)?;
    Ok(())
}

pub fn read_episode_log(path: &Path) -> Result<EpisodeLog, SimError> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demos_succeed_and_replay() {
        let cfg = SimConfig::default();
        let demos = generate_demos(&cfg, 8, 7).unwrap();
        assert_eq!(demos.len(), 8);
        for d in &demos {
            assert_eq!(d.log.outcome, Outcome::Success);
            d.log.replay(&cfg).unwrap();
            let t = d.trajectory.as_ref().unwrap();
            assert_eq!(t.len(), d.log.steps_used + 1);
            assert_eq!(d.images.len(), t.len());
        }
    }

    #[test]
    fn demos_are_seeded() {
        let cfg = SimConfig::default();
        let a = generate_demos(&cfg, 3, 11).unwrap();
        let b = generate_demos(&cfg, 3, 11).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.log, y.log);
            assert_eq!(x.images, y.images);
        }
        let c = generate_demos(&cfg, 3, 12).unwrap();
        assert_ne!(a[0].log.start, c[0].log.start);
    }

    #[test]
    fn play_has_no_success_requirement() {
        let cfg = SimConfig::default();
        let play = generate_play(&cfg, 2, 5, 40).unwrap();
        for p in &play {
            let t = p.trajectory.as_ref().unwrap();
            assert_eq!(t.kind(), TrajectoryKind::Play);
            assert!(t.len() >= 2);
        }
    }

    #[test]
    fn replay_detects_tampering() {
        let cfg = SimConfig::default();
        let mut d = generate_demos(&cfg, 1, 3).unwrap().remove(0);
        d.log.steps[2].action = d.log.steps[2].action.rotated(0.3);
        assert!(matches!(d.log.replay(&cfg), Err(SimError::ReplayDiverged(3))));
    }
}
