//! Run configuration shared by the CLI and the demo trainer.
//!
//! Every section has defaults, so `{}` is a valid config. Unknown keys are
//! rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::MatchThresholds;
use crate::gmf::RefineConfig;
use crate::matching::LossWeights;
use crate::synth::{PerturbSpec, SceneSpec};
use crate::trainer::EmaConfig;
use crate::transforms::TransformConfig;

/// Demo-trainer dataset and initialization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoSettings {
    pub labeled_scenes: usize,
    pub unlabeled_scenes: usize,
    /// Template for demo rooms; each room gets its own random footprint.
    pub scene: SceneSpec,
    /// Noise applied to ground-truth walls to form the initial predictions.
    pub init_perturb: PerturbSpec,
    /// Extra spurious quads per scene in the initial predictions.
    pub spurious_per_scene: usize,
    /// Initial quadness is uniform in this range.
    pub init_quadness: [f64; 2],
}

impl Default for DemoSettings {
    fn default() -> Self {
        Self {
            labeled_scenes: 4,
            unlabeled_scenes: 8,
            scene: SceneSpec {
                point_density: 25.0,
                ..SceneSpec::default()
            },
            init_perturb: PerturbSpec {
                center_noise: 0.3,
                normal_tilt_deg: 20.0,
                size_scale_range: [0.6, 1.4],
            },
            spurious_per_scene: 2,
            init_quadness: [0.3, 0.7],
        }
    }
}

impl DemoSettings {
    pub fn validate(&self) -> Result<()> {
        if self.labeled_scenes == 0 || self.unlabeled_scenes == 0 {
            return Err(Error::Config(
                "demo: need at least one labeled and one unlabeled scene".into(),
            ));
        }
        let [lo, hi] = self.init_quadness;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!("demo: init_quadness {:?} invalid", self.init_quadness)));
        }
        self.init_perturb.validate()?;
        // footprints are drawn per room; check the rest of the template
        SceneSpec {
            footprint: crate::synth::rectangle(4.0, 3.0),
            ..self.scene.clone()
        }
        .validate()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub transform: TransformConfig,
    pub refine: RefineConfig,
    pub weights: LossWeights,
    pub eval: MatchThresholds,
    pub ema: EmaConfig,
    /// Scene generated by `synth`.
    pub scene: SceneSpec,
    /// Noise used for `synth --perturbed` quads.
    pub perturb: PerturbSpec,
    pub demo: DemoSettings,
    /// Default seed; `--seed` overrides it.
    pub seed: u64,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.transform.validate()?;
        self.refine.validate()?;
        self.weights.validate()?;
        self.eval.validate()?;
        self.ema.validate()?;
        self.scene.validate()?;
        self.perturb.validate()?;
        self.demo.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
