//! Experiment configuration file (JSON) with sections
//! `data`, `model`, `loss`, `train` and `eval`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::data::SyntheticSpec;
use super::eval::EvalConfig;
use super::train::{ModelConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::loss::LossConfig;

/// Which classes the evaluation set contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestClasses {
    /// Fresh samples of the training classes.
    Seen,
    /// New entity subsets never used for training.
    Unseen,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub entity_count: usize,
    pub class_count: usize,
    pub entities_per_class: usize,
    pub feature_dim: usize,
    pub locations_per_sample: usize,
    pub noise_std: f64,
    pub train_samples_per_class: usize,
    pub test_samples_per_class: usize,
    pub test_classes: TestClasses,
    /// Number of unseen classes when `test_classes` is `unseen`.
    pub unseen_class_count: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            entity_count: 32,
            class_count: 12,
            entities_per_class: 3,
            feature_dim: 32,
            locations_per_sample: 32,
            noise_std: 0.15,
            train_samples_per_class: 16,
            test_samples_per_class: 16,
            test_classes: TestClasses::Seen,
            unseen_class_count: 8,
        }
    }
}

impl DataConfig {
    pub fn spec(&self, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            entity_count: self.entity_count,
            class_count: self.class_count,
            entities_per_class: self.entities_per_class,
            feature_dim: self.feature_dim,
            locations_per_sample: self.locations_per_sample,
            noise_std: self.noise_std,
            samples_per_class: self.train_samples_per_class,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

fn config_err(path: &str, e: Error) -> Error {
    let message = match e {
        Error::Contract(m) => m,
        Error::Config { path: inner, message } => {
            return Error::Config {
                path: format!("{path}.{inner}"),
                message,
            }
        }
        other => other.to_string(),
    };
    Error::Config {
        path: path.to_string(),
        message,
    }
}

impl ExperimentConfig {
    /// Parses JSON; schema errors carry the offending field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.data.spec(0).validate().map_err(|e| config_err("data", e))?;
        if self.data.test_samples_per_class < 2 {
            return Err(config_err(
                "data.test_samples_per_class",
                Error::contract("need >= 2 samples per class for retrieval"),
            ));
        }
        if self.data.test_classes == TestClasses::Unseen && self.data.unseen_class_count < 4 {
            return Err(config_err(
                "data.unseen_class_count",
                Error::contract("cross-class evaluation needs >= 4 classes"),
            ));
        }
        if self.data.test_classes == TestClasses::Seen && self.data.class_count < 4 {
            return Err(config_err(
                "data.class_count",
                Error::contract("cross-class evaluation needs >= 4 classes"),
            ));
        }
        if self.model.embed_dim == 0 {
            return Err(config_err("model.embed_dim", Error::contract("must be >= 1")));
        }
        if self.model.prototypes == 0 {
            return Err(config_err("model.prototypes", Error::contract("must be >= 1")));
        }
        if !(self.model.temperature >= 0.0) || !self.model.temperature.is_finite() {
            return Err(config_err("model.temperature", Error::contract("must be >= 0")));
        }
        self.loss.validate().map_err(|e| config_err("loss", e))?;
        self.train.validate().map_err(|e| config_err("train", e))?;
        if self.train.classes_per_batch > self.data.class_count {
            return Err(config_err(
                "train.classes_per_batch",
                Error::contract(format!("exceeds data.class_count = {}", self.data.class_count)),
            ));
        }
        if self.train.samples_per_class > self.data.train_samples_per_class {
            return Err(config_err(
                "train.samples_per_class",
                Error::contract("exceeds data.train_samples_per_class"),
            ));
        }
        if self.eval.trials == 0 {
            return Err(config_err("eval.trials", Error::contract("must be >= 1")));
        }
        if !(self.eval.ridge > 0.0) {
            return Err(config_err("eval.ridge", Error::contract("must be positive")));
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.train.seed_count as u64).map(|i| self.train.seed + i).collect()
    }

    /// Cross-batch weights to run for every seed, in output order.
    pub fn lambdas(&self) -> Vec<f64> {
        if self.train.paired && self.loss.lambda_mix != 0.0 {
            vec![0.0, self.loss.lambda_mix]
        } else {
            vec![self.loss.lambda_mix]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let cfg = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.loss.lambda_mix, 0.01);
        assert_eq!(cfg.model.prototypes, 64);
        assert_eq!(cfg.model.temperature, 10.0);
        assert_eq!(cfg.loss.ridge, 0.05);
        assert_eq!(cfg.eval.trials, 200);
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_report_field_path() {
        match ExperimentConfig::from_json(r#"{"train": {"stepz": 3}}"#) {
            Err(Error::Config { path, message }) => {
                assert_eq!(path, "train.stepz");
                assert!(message.contains("stepz"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        match ExperimentConfig::from_json(r#"{"model": {"prototypes": "many"}}"#) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "model.prototypes"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            ExperimentConfig::from_json(r#"{"bogus": {}}"#),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn semantic_errors_name_the_section() {
        match ExperimentConfig::from_json(r#"{"data": {"entities_per_class": 40}}"#) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "data.entities_per_class"),
            other => panic!("{other:?}"),
        }
        match ExperimentConfig::from_json(r#"{"eval": {"trials": 0}}"#) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "eval.trials"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn paired_lambdas() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.lambdas(), vec![0.0, 0.01]);
        let mut single = cfg;
        single.train.paired = false;
        assert_eq!(single.lambdas(), vec![0.01]);
    }
}
