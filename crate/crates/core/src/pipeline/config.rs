//! Experiment configuration and the built-in presets.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{ArtifactSpec, DatasetMode, Shape, TaskConfig};
use crate::eds::DiscriminatorSpec;
use crate::error::{Error, Result};
use crate::explainers::{Family, Fidelity, InfluenceEncoding, ProbeConfig, RealMethod, SyntheticExplainerSpec};
use crate::numerics::{GradientScope, TrainConfig};
use crate::rng::derive_seed;
use crate::zoo::ZooConfig;

pub const PRESETS: [(&str, &str); 3] = [
    ("table1-synthetic", include_str!("../../presets/table1-synthetic.toml")),
    ("dsprites-desk", include_str!("../../presets/dsprites-desk.toml")),
    ("shapes-desk", include_str!("../../presets/shapes-desk.toml")),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub mode: DatasetMode,
    pub classes: Vec<Shape>,
    pub per_class: usize,
    pub artifact: ArtifactSpec,
    #[serde(default)]
    pub spurious_class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ExplainerConfig {
    Synthetic {
        family: Family,
        fidelity: Fidelity,
        #[serde(default)]
        noise: Option<f64>,
    },
    IntegratedGradients {
        #[serde(default = "default_steps")]
        steps: usize,
    },
    Tracin {
        #[serde(default = "default_k")]
        k: usize,
        #[serde(default = "default_candidates")]
        candidates: usize,
        #[serde(default = "default_scope")]
        scope: GradientScope,
    },
    ConceptProbes {
        #[serde(default = "default_probe_examples")]
        probe_examples: usize,
        #[serde(default)]
        probe: ProbeConfig,
    },
}

fn default_steps() -> usize {
    128
}

fn default_k() -> usize {
    8
}

fn default_candidates() -> usize {
    256
}

fn default_scope() -> GradientScope {
    GradientScope::FinalDense
}

fn default_probe_examples() -> usize {
    512
}

impl ExplainerConfig {
    pub fn synthetic_spec(&self) -> Option<SyntheticExplainerSpec> {
        match *self {
            ExplainerConfig::Synthetic { family, fidelity, noise } => {
                let mut s = SyntheticExplainerSpec::new(family, fidelity);
                if let Some(n) = noise {
                    s.noise = n;
                }
                Some(s)
            }
            _ => None,
        }
    }

    pub fn real_method(&self) -> Option<RealMethod> {
        match self {
            ExplainerConfig::Synthetic { .. } => None,
            ExplainerConfig::IntegratedGradients { steps } => Some(RealMethod::IntegratedGradients { steps: *steps }),
            ExplainerConfig::Tracin { k, candidates, scope } => {
                Some(RealMethod::Influence { k: *k, scope: scope.clone(), candidates: *candidates })
            }
            ExplainerConfig::ConceptProbes { probe_examples, probe } => {
                Some(RealMethod::Concepts { probe: probe.clone(), probe_examples: *probe_examples })
            }
        }
    }

    pub fn id(&self) -> String {
        match self.synthetic_spec() {
            Some(s) => s.id(),
            None => self.real_method().expect("real").id().to_string(),
        }
    }

    pub fn family(&self) -> Family {
        match self.synthetic_spec() {
            Some(s) => s.family,
            None => self.real_method().expect("real").family(),
        }
    }

    /// Fidelity label for report rows; real explainers have none.
    pub fn fidelity(&self) -> Option<Fidelity> {
        self.synthetic_spec().map(|s| s.fidelity)
    }
}

/// Placeholder models standing in for the two populations when every
/// explainer is synthetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticModels {
    pub per_arm: usize,
    pub reserve: usize,
}

impl Default for SyntheticModels {
    fn default() -> Self {
        SyntheticModels { per_arm: 20, reserve: 6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Artifact variants to train on, one grid point each.
    pub grid: Vec<ArtifactSpec>,
    #[serde(default = "default_sweep_seeds")]
    pub seeds: usize,
}

fn default_sweep_seeds() -> usize {
    3
}

fn default_runs() -> usize {
    5
}

fn default_discriminator() -> TrainConfig {
    DiscriminatorSpec::default_train(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_runs")]
    pub runs: usize,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub zoo: Option<ZooConfig>,
    pub explainers: Vec<ExplainerConfig>,
    #[serde(default)]
    pub influence_encoding: InfluenceEncoding,
    /// Discriminator training; its seed is replaced per run.
    #[serde(default = "default_discriminator")]
    pub discriminator: TrainConfig,
    #[serde(default)]
    pub synthetic_models: SyntheticModels,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// A preset name or a path to a TOML file.
    pub fn load(name_or_path: &str) -> Result<Self> {
        if let Some((_, text)) = PRESETS.iter().find(|(n, _)| *n == name_or_path) {
            return Self::from_toml(text);
        }
        let path = Path::new(name_or_path);
        if !path.exists() {
            let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            return Err(Error::Config(format!(
                "`{name_or_path}` is neither a file nor a preset ({})",
                names.join(", ")
            )));
        }
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn task(&self) -> TaskConfig {
        TaskConfig {
            mode: self.dataset.mode,
            classes: self.dataset.classes.clone(),
            per_class: self.dataset.per_class,
            artifact: self.dataset.artifact,
            spurious_class: self.dataset.spurious_class,
            seed: derive_seed(self.seed, &[0xda7a]),
        }
    }

    pub fn needs_zoo(&self) -> bool {
        self.explainers.iter().any(|e| e.synthetic_spec().is_none())
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Config("run count must be >= 1".into()));
        }
        if self.explainers.is_empty() {
            return Err(Error::Config("no explainers configured".into()));
        }
        self.task().validate()?;
        self.discriminator.validate()?;
        let mut ids = BTreeSet::new();
        for e in &self.explainers {
            if let Some(s) = e.synthetic_spec() {
                s.validate()?;
            }
            if let ExplainerConfig::IntegratedGradients { steps: 0 } = e {
                return Err(Error::Config("integrated gradients needs at least one step".into()));
            }
            if !ids.insert(e.id()) {
                return Err(Error::Config(format!("explainer `{}` listed twice", e.id())));
            }
        }
        match (&self.zoo, self.needs_zoo()) {
            (Some(z), _) => z.validate()?,
            (None, true) => return Err(Error::Config("real explainers need a [zoo] section".into())),
            (None, false) => {}
        }
        let s = self.synthetic_models;
        if s.per_arm == 0 || s.reserve == 0 || s.reserve >= s.per_arm {
            return Err(Error::Config(format!(
                "synthetic models need 0 < reserve < per_arm, got {}/{}",
                s.reserve, s.per_arm
            )));
        }
        if let Some(sw) = &self.sweep {
            if sw.grid.is_empty() || sw.seeds == 0 {
                return Err(Error::Config("sweep needs a nonempty grid and at least one seed".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_validate() {
        for (name, _) in PRESETS {
            let c = ExperimentConfig::load(name).unwrap();
            assert_eq!(c.name, name);
        }
        let t = ExperimentConfig::load("table1-synthetic").unwrap();
        assert_eq!(t.explainers.len(), 9);
        assert!(!t.needs_zoo());
    }

    #[test]
    fn bad_configs_are_rejected() {
        let base = include_str!("../../presets/table1-synthetic.toml");
        assert!(ExperimentConfig::from_toml(&base.replace("runs = 5", "runs = 0")).is_err());
        assert!(ExperimentConfig::from_toml(&format!("{base}\nbogus = 1\n")).is_err());
        assert!(ExperimentConfig::load("no-such-preset").is_err());
    }
}
