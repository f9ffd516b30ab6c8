use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attributes::{AgeBinning, AttributeLabel, AttributeSpace};
use crate::data::{load_manifest, Dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::nn::ArchConfig;
use crate::objectives::{GanLoss, LossWeights};

/// Arithmetic width used for training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Procedural images, `per_label` of every label.
    Synthetic { per_label: usize, seed: u64 },
    /// CSV manifest `path,age,gender,race`; relative paths resolve against
    /// the manifest's directory.
    Manifest { path: PathBuf, binning: AgeBinning },
}

/// Display names of attribute indices, used on the command line.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelNames {
    pub age: Vec<String>,
    pub gender: Vec<String>,
    pub race: Vec<String>,
}

impl LabelNames {
    fn axis(&self, axis: &str) -> &[String] {
        match axis {
            "age" => &self.age,
            "gender" => &self.gender,
            _ => &self.race,
        }
    }

    /// Index of `value` on `axis`, given as a configured name or an integer.
    pub fn resolve(&self, axis: &str, value: &str, size: usize) -> Result<usize> {
        let names = self.axis(axis);
        let idx = names
            .iter()
            .position(|n| n.eq_ignore_ascii_case(value))
            .or_else(|| value.parse::<usize>().ok());
        match idx {
            Some(i) if i < size => Ok(i),
            _ => {
                let valid = if names.is_empty() {
                    format!("0..{}", size.saturating_sub(1))
                } else {
                    format!("{} or 0..{}", names.join(", "), size.saturating_sub(1))
                };
                Err(Error::Config(format!(
                    "{axis} `{value}` outside the trained space; valid: {valid}"
                )))
            }
        }
    }

    pub fn name(&self, axis: &str, index: usize) -> String {
        self.axis(axis)
            .get(index)
            .cloned()
            .unwrap_or_else(|| index.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RmsPropConfig {
    pub rho: f64,
    pub eps: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        RmsPropConfig {
            rho: 0.99,
            eps: 1e-8,
        }
    }
}

fn default_resolution() -> usize {
    128
}
fn default_learning_rate() -> f64 {
    1e-4
}
fn default_stage1() -> u64 {
    100_000
}
fn default_stage2() -> u64 {
    50_000
}
fn default_test_fraction() -> f64 {
    0.1
}

/// Complete description of a training run. Omitted optional fields take
/// the full-scale defaults (128 x 128, lr 1e-4, 100,000 + 50,000
/// iterations); `batch_size`, `attributes` and `dataset` are required.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_stage1")]
    pub stage1_iters: u64,
    #[serde(default = "default_stage2")]
    pub stage2_iters: u64,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub seed: u64,
    pub attributes: AttributeSpace,
    pub dataset: DatasetConfig,
    /// Iterations between checkpoints; 0 writes only the final one.
    #[serde(default)]
    pub checkpoint_interval: u64,
    #[serde(default)]
    pub arch: ArchConfig,
    #[serde(default)]
    pub gan_loss: GanLoss,
    #[serde(default)]
    pub rmsprop: RmsPropConfig,
    #[serde(default)]
    pub precision: Precision,
    /// Fraction of every class held out for evaluation.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub labels: LabelNames,
}

impl TrainConfig {
    /// 128 x 128, batch 10, lr 1e-4, 100,000 + 50,000 iterations.
    pub fn full_scale(attributes: AttributeSpace, dataset: DatasetConfig) -> Self {
        TrainConfig {
            resolution: default_resolution(),
            batch_size: 10,
            learning_rate: default_learning_rate(),
            stage1_iters: default_stage1(),
            stage2_iters: default_stage2(),
            weights: LossWeights::default(),
            seed: 0,
            attributes,
            dataset,
            checkpoint_interval: 10_000,
            arch: ArchConfig::default(),
            gan_loss: GanLoss::default(),
            rmsprop: RmsPropConfig::default(),
            precision: Precision::F32,
            test_fraction: default_test_fraction(),
            labels: LabelNames::default(),
        }
    }

    /// Synthetic 32 x 32 run with 3 age groups, 2 genders and 2 races,
    /// 200 images per label, 5,000 + 2,500 iterations.
    pub fn desk() -> Self {
        let mut c = TrainConfig::full_scale(
            AttributeSpace {
                n_age: 3,
                n_gender: 2,
                n_race: 2,
            },
            DatasetConfig::Synthetic {
                per_label: 200,
                seed: 1,
            },
        );
        c.resolution = 32;
        c.stage1_iters = 5_000;
        c.stage2_iters = 2_500;
        c.checkpoint_interval = 2_500;
        c.arch.base_channels = 16;
        c.arch.style_dim = 64;
        c.weights.lambda_rec = 1.0;
        c.weights.lambda_dis = 30.0;
        c.labels = LabelNames {
            age: vec!["young".into(), "middle".into(), "old".into()],
            gender: vec!["male".into(), "female".into()],
            race: vec!["european".into(), "african".into()],
        };
        c
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: TrainConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.rmsprop.rho) || !(self.rmsprop.eps > 0.0) {
            return bad("rmsprop.rho must lie in [0, 1) and rmsprop.eps be positive".into());
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad(format!("test_fraction must lie in [0, 1), got {}", self.test_fraction));
        }
        AttributeSpace::new(
            self.attributes.n_age,
            self.attributes.n_gender,
            self.attributes.n_race,
        )?;
        self.weights.validate()?;
        self.arch.validate()?;
        if self.resolution < 16 || self.resolution % 16 != 0 {
            return bad(format!("resolution {} must be a positive multiple of 16", self.resolution));
        }
        for (axis, names, size) in [
            ("age", &self.labels.age, self.attributes.n_age),
            ("gender", &self.labels.gender, self.attributes.n_gender),
            ("race", &self.labels.race, self.attributes.n_race),
        ] {
            if !names.is_empty() && names.len() != size {
                return bad(format!(
                    "labels.{axis} has {} names for {size} indices",
                    names.len()
                ));
            }
        }
        if let DatasetConfig::Synthetic { per_label, seed } = &self.dataset {
            self.synthetic_spec(*per_label, *seed).validate()?;
        }
        Ok(())
    }

    fn synthetic_spec(&self, per_label: usize, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            resolution: self.resolution,
            n_age: self.attributes.n_age,
            n_gender: self.attributes.n_gender,
            n_race: self.attributes.n_race,
            per_label,
            seed,
        }
    }

    /// The synthetic dataset's spec, if the config uses one.
    pub fn synthetic(&self) -> Option<SyntheticSpec> {
        match &self.dataset {
            DatasetConfig::Synthetic { per_label, seed } => Some(self.synthetic_spec(*per_label, *seed)),
            DatasetConfig::Manifest { .. } => None,
        }
    }

    /// Builds the configured dataset. Relative manifest paths resolve
    /// against `base` when given.
    pub fn dataset(&self, base: Option<&Path>) -> Result<Dataset> {
        match &self.dataset {
            DatasetConfig::Synthetic { per_label, seed } => {
                self.synthetic_spec(*per_label, *seed).generate()
            }
            DatasetConfig::Manifest { path, binning } => {
                let path = match base {
                    Some(b) if path.is_relative() => b.join(path),
                    _ => path.clone(),
                };
                load_manifest(&path, &self.attributes, *binning, self.resolution)
            }
        }
    }

    /// Training and held-out parts of the dataset.
    pub fn split(&self, dataset: &Dataset) -> (Dataset, Dataset) {
        dataset.split(self.test_fraction, self.seed ^ 0x5b11_7000)
    }

    pub fn label_text(&self, l: AttributeLabel) -> String {
        format!(
            "age {}, gender {}, race {}",
            self.labels.name("age", l.age),
            self.labels.name("gender", l.gender),
            self.labels.name("race", l.race)
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_batch_size_is_named() {
        let err = TrainConfig::from_json(
            r#"{"attributes": {"n_age": 3, "n_gender": 2, "n_race": 2},
                "dataset": {"kind": "synthetic", "per_label": 4, "seed": 0}}"#,
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("batch_size"), "{err}");
    }

    #[test]
    fn defaults_echo_full_scale_hyperparameters() {
        let c = TrainConfig::from_json(
            r#"{"batch_size": 10,
                "attributes": {"n_age": 4, "n_gender": 2, "n_race": 2},
                "dataset": {"kind": "manifest", "path": "m.csv", "binning": "morph"}}"#,
        )
        .unwrap();
        assert_eq!(c.learning_rate, 1e-4);
        assert_eq!((c.stage1_iters, c.stage2_iters), (100_000, 50_000));
        assert_eq!(c.resolution, 128);
        assert_eq!(c.arch.base_channels, 64);
        assert_eq!(c.weights, LossWeights::default());
    }

    #[test]
    fn desk_config_round_trips() {
        let c = TrainConfig::desk();
        c.validate().unwrap();
        assert_eq!(TrainConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn unknown_and_invalid_fields_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&TrainConfig::desk().to_json()).unwrap();
        v["batch_sise"] = 3.into();
        assert!(TrainConfig::from_json(&v.to_string()).is_err());
        let mut c = TrainConfig::desk();
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::desk();
        c.labels.race.pop();
        assert!(c.validate().is_err());
    }

    #[test]
    fn label_names_resolve() {
        let c = TrainConfig::desk();
        assert_eq!(c.labels.resolve("race", "African", 2).unwrap(), 1);
        assert_eq!(c.labels.resolve("gender", "0", 2).unwrap(), 0);
        let err = c.labels.resolve("race", "asian", 2).unwrap_err().to_string();
        assert!(err.contains("european, african"), "{err}");
    }
}
