//! On-disk layout under the output root.
//!
//! ```text
//! <out>/demos/         gen-demos: <id>.traj.jsonl, <id>.episode.json, <id>/*.png
//! <out>/play/          gen-play: same layout
//! <out>/triples/       export-triples: <id>.triples.jsonl
//! <out>/augment/       augment: dataset.aug.jsonl, aug/<traj>/*.png
//! <out>/train-<m>/     train: policy.json, train.json
//! <out>/eval-offline/  eval-offline: report.json, report.csv
//! <out>/eval-online/   eval-online: report.json, report.csv, trials.csv
//! <out>/k-sweep/       k-sweep: report.json, k-sweep.csv
//! <out>/report/        report: summary.json, summary.md
//! ```
//!
//! Every stage directory also holds the resolved `config.toml`.

use std::fs;
use std::path::{Path, PathBuf};

use dmd_core::raster::Image;
use dmd_core::sim::datagen::{read_episode_log, write_episode, Episode};
use dmd_core::trajectory::native;
use serde::Serialize;

use crate::config::RunConfig;
use crate::CliError;

pub const DEMOS: &str = "demos";
pub const PLAY: &str = "play";
pub const TRIPLES: &str = "triples";
pub const AUGMENT: &str = "augment";
pub const AUG_INDEX: &str = "dataset.aug.jsonl";
pub const POLICY: &str = "policy.json";

pub fn train_dir(method: &str) -> String {
    format!("train-{method}")
}

/// Creates (or empties) `<out>/<stage>` and writes the resolved config.
pub fn fresh_stage(cfg: &RunConfig, stage: &str) -> Result<PathBuf, CliError> {
    let dir = cfg.out.join(stage);
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml())?;
    Ok(dir)
}

/// `<out>/<stage>`, which an earlier subcommand must have produced.
pub fn existing_stage(cfg: &RunConfig, stage: &str, producer: &str) -> Result<PathBuf, CliError> {
    let dir = cfg.out.join(stage);
    if !dir.is_dir() {
        return Err(CliError::MissingInput(format!("{} (run `{producer}` first)", dir.display())));
    }
    Ok(dir)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub fn write_episodes(dir: &Path, episodes: &[Episode]) -> Result<(), CliError> {
    for ep in episodes {
        write_episode(dir, ep)?;
    }
    Ok(())
}

/// Episodes of `dir` in id order, with trajectories and frames.
pub fn read_episodes(dir: &Path) -> Result<Vec<Episode>, CliError> {
    let mut logs: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".episode.json"))
        .collect();
    logs.sort();
    if logs.is_empty() {
        return Err(CliError::MissingInput(format!("no episodes in {}", dir.display())));
    }
    logs.iter()
        .map(|p| {
            let log = read_episode_log(p)?;
            let traj_path = dir.join(format!("{}.traj.jsonl", log.id));
            let (trajectory, images) = if traj_path.exists() {
                let t = native::load(&traj_path)?;
                let images = t
                    .frames()
                    .iter()
                    .map(|f| Image::load_png(&dir.join(&f.image_ref)))
                    .collect::<Result<Vec<_>, _>>()?;
                (Some(t), images)
            } else {
                (None, Vec::new())
            };
            Ok(Episode { log, trajectory, images })
        })
        .collect()
}

/// Trained policies `(method, path)` found under the output root, by name.
pub fn trained_policies(cfg: &RunConfig) -> Result<Vec<(String, PathBuf)>, CliError> {
    let mut found = Vec::new();
    if cfg.out.is_dir() {
        for e in fs::read_dir(&cfg.out)? {
            let e = e?;
            let name = e.file_name().to_string_lossy().into_owned();
            if let Some(method) = name.strip_prefix("train-") {
                let p = e.path().join(POLICY);
                if p.exists() {
                    found.push((method.to_string(), p));
                }
            }
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(CliError::MissingInput(format!(
            "no trained policies under {} (run `train` first)",
            cfg.out.display()
        )));
    }
    Ok(found)
}
