//! Simulator oracle: re-renders the logged world state from the perturbed
//! camera. Exact by construction, so it upper-bounds any learned
//! synthesizer.

use std::collections::HashMap;

use super::{check_dims, BackendKind, SynthError, SynthErrorKind, SynthRequest, Synthesizer, SynthesizerId};
use crate::raster::Image;
use crate::sim::datagen::EpisodeLog;
use crate::sim::render::render;
use crate::sim::{SimConfig, SimWorld};

pub struct OracleSynth {
    cfg: SimConfig,
    states: HashMap<String, SimWorld>,
}

impl OracleSynth {
    pub fn new(cfg: SimConfig) -> Self {
        OracleSynth {
            cfg,
            states: HashMap::new(),
        }
    }

    /// Registers every frame of a recorded episode.
    pub fn add_episode(&mut self, log: &EpisodeLog) {
        for s in &log.steps {
            self.states.insert(s.image_ref.clone(), s.state);
        }
        if let Some(r) = &log.final_image_ref {
            self.states.insert(r.clone(), log.final_state);
        }
    }

    pub fn from_episodes<'a>(cfg: SimConfig, logs: impl IntoIterator<Item = &'a EpisodeLog>) -> Self {
        let mut o = Self::new(cfg);
        for l in logs {
            o.add_episode(l);
        }
        o
    }
}

impl Synthesizer for OracleSynth {
    fn id(&self) -> SynthesizerId {
        SynthesizerId {
            kind: BackendKind::Oracle,
            version: "1".into(),
        }
    }

    fn synthesize(&self, req: &SynthRequest<'_>) -> Result<Image, SynthError> {
        let n = self.cfg.camera.resolution;
        check_dims(req.image, n, n)?;
        let missing = |what: &str| SynthError::new(SynthErrorKind::Unavailable, format!("oracle needs {what}"));
        let image_ref = req.image_ref.ok_or_else(|| missing("the frame's image reference"))?;
        let pose = req.source_pose.ok_or_else(|| missing("the frame's camera pose"))?;
        let world = self
            .states
            .get(image_ref)
            .ok_or_else(|| SynthError::new(SynthErrorKind::Unavailable, format!("no world state for {image_ref}")))?;
        // t~_T_w = (t_T_t~)^-1 * t_T_w
        let perturbed = req
            .t_from_tilde
            .inverse()
            .compose(pose)
            .map_err(|e| SynthError::new(SynthErrorKind::MalformedResponse, e.to_string()))?;
        Ok(render(&self.cfg, world, &perturbed))
    }
}
