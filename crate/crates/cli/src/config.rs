//! Run configuration: one TOML file, every key optional.
//!
//! ```toml
//! seed = 7
//! out = "runs/seed7"        # relative to this file
//! demos = 8                 # expert demos for gen-demos
//! test_demos = 8            # held-out demos for offline evaluation
//!
//! [sim]                     # table, radii, step, camera, start distribution
//! camera = { window = 0.48, resolution = 64, height = 0.3 }
//!
//! [perturbation]            # translation_range, direction, rotation,
//! lookahead_k = 3           # samples_per_frame, lookahead_k
//!
//! [augment]                 # failure_policy, filter_overshoot,
//! flip = false              # force_identity, flip, jitter
//!
//! [backend]                 # oracle | homography | identity | remote
//! kind = "oracle"
//! endpoint = "http://127.0.0.1:8765"
//!
//! [train]                   # lr, beta1, beta2, eps, batch_size, epochs, seed
//! [policy]                  # hidden = [256, 64]
//! [harness]                 # trials_per_method, action_noise, max_steps, with_expert
//! [play]                    # n, steps
//! [triples]                 # per_trajectory
//! [k_sweep]                 # ks, seeds
//! ```
//!
//! Missing keys take the values of [`RunConfig::default`]; unknown top-level
//! keys are rejected.

use std::path::{Path, PathBuf};

use dmd_core::augment::{FailurePolicy, PerturbationSpec};
use dmd_core::harness::experiment::ExperimentConfig;
use dmd_core::policy::TrainConfig;
use dmd_core::rng;
use dmd_core::sim::SimConfig;
use dmd_core::synthesis::remote::RemoteConfig;
use dmd_core::synthesis::BackendKind;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Output root. Not part of the hashed configuration, so the same run
    /// written to two places produces identical bytes.
    #[serde(default, skip_serializing)]
    pub out: PathBuf,
    pub demos: usize,
    pub test_demos: usize,
    pub sim: SimConfig,
    pub perturbation: PerturbationSpec,
    pub augment: AugmentSection,
    pub backend: BackendSection,
    pub train: TrainConfig,
    pub policy: PolicySection,
    pub harness: HarnessSection,
    pub play: PlaySection,
    pub triples: TriplesSection,
    pub k_sweep: KSweepSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentSection {
    pub failure_policy: FailurePolicy,
    pub filter_overshoot: bool,
    pub force_identity: bool,
    /// Mirrored copies of every training example.
    pub flip: bool,
    /// Brightness/contrast-jittered copies of every training example.
    pub jitter: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSection {
    pub kind: BackendKind,
    pub endpoint: String,
    pub max_in_flight: usize,
    pub retries: u32,
    pub backoff_ms: u64,
    pub timeout_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySection {
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessSection {
    pub trials_per_method: usize,
    pub action_noise: f64,
    pub max_steps: usize,
    /// Run the scripted expert as an extra arm of every online plan.
    pub with_expert: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaySection {
    pub n: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriplesSection {
    pub per_trajectory: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSweepSection {
    pub ks: Vec<usize>,
    pub seeds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let exp = ExperimentConfig::default();
        let remote = RemoteConfig::new("http://127.0.0.1:8765");
        RunConfig {
            seed: exp.seed,
            out: PathBuf::from("out"),
            demos: exp.demos,
            test_demos: 8,
            sim: exp.sim,
            perturbation: exp.spec,
            augment: AugmentSection {
                failure_policy: FailurePolicy::Abort,
                filter_overshoot: false,
                force_identity: false,
                flip: false,
                jitter: false,
            },
            backend: BackendSection {
                kind: BackendKind::Oracle,
                endpoint: remote.endpoint,
                max_in_flight: remote.max_in_flight,
                retries: remote.retries,
                backoff_ms: remote.backoff_ms,
                timeout_ms: remote.timeout_ms,
            },
            train: exp.train,
            policy: PolicySection { hidden: exp.hidden },
            harness: HarnessSection {
                trials_per_method: exp.trials_per_method,
                action_noise: exp.action_noise,
                max_steps: exp.max_steps,
                with_expert: true,
            },
            play: PlaySection { n: 4, steps: 200 },
            triples: TriplesSection { per_trajectory: 64 },
            k_sweep: KSweepSection {
                ks: vec![1, 2, 3, 4, 5],
                seeds: 3,
            },
        }
    }
}

/// Recursively overlays `over` onto `base`.
fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    /// Defaults overlaid with `path`, if given. A relative `out` is resolved
    /// against the file's directory.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::MissingInput(format!("{}: {e}", path.display())))?;
        let user: toml::Value = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut merged = toml::Value::try_from(Self::default()).map_err(|e| CliError::Config(e.to_string()))?;
        let out = user.get("out").and_then(|v| v.as_str()).map(PathBuf::from);
        merge(&mut merged, user);
        let mut cfg: RunConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.out = base.join(out.unwrap_or_else(|| PathBuf::from("out")));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.perturbation.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let bad = |m: &str| Err(CliError::Config(m.into()));
        if self.demos == 0 {
            return bad("demos must be at least 1");
        }
        if self.k_sweep.ks.iter().any(|&k| k == 0) {
            return bad("k_sweep.ks must be positive");
        }
        if self.policy.hidden.iter().any(|&h| h == 0) {
            return bad("policy.hidden sizes must be positive");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        rng::sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            seed: self.seed,
            sim: self.sim,
            demos: self.demos,
            spec: self.perturbation,
            train: self.train.clone(),
            hidden: self.policy.hidden.clone(),
            trials_per_method: self.harness.trials_per_method,
            action_noise: self.harness.action_noise,
            max_steps: self.harness.max_steps,
            flip: self.augment.flip,
            jitter: self.augment.jitter,
        }
    }

    pub fn remote(&self) -> RemoteConfig {
        RemoteConfig {
            endpoint: self.backend.endpoint.clone(),
            max_in_flight: self.backend.max_in_flight,
            retries: self.backend.retries,
            backoff_ms: self.backend.backoff_ms,
            timeout_ms: self.backend.timeout_ms,
        }
    }
}
