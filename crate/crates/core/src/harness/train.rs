//! Mini-batch SGD with momentum on the combined loss.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::encoder::{encode_batch_var, EncoderParams};
use crate::error::{Error, Result};
use crate::loss::{split_classes, total_loss_var, LossBreakdown, LossConfig};
use crate::pooling::FeatureMap;
use crate::tensor::{Mat, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub prototypes: usize,
    pub temperature: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 16,
            prototypes: 64,
            temperature: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub classes_per_batch: usize,
    pub samples_per_class: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Seed of the first run of an experiment.
    pub seed: u64,
    /// Number of consecutive seeds an experiment runs.
    pub seed_count: usize,
    /// Also run every seed with the cross-batch weight set to zero.
    pub paired: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 300,
            classes_per_batch: 8,
            samples_per_class: 4,
            learning_rate: 0.5,
            momentum: 0.9,
            seed: 0,
            seed_count: 20,
            paired: true,
        }
    }
}

impl TrainConfig {
    pub fn batch_size(&self) -> usize {
        self.classes_per_batch * self.samples_per_class
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes_per_batch < 2 || self.samples_per_class < 1 || self.batch_size() < 4 {
            return Err(Error::contract(format!(
                "batches need >= 2 classes and >= 4 samples, got {} x {}",
                self.classes_per_batch, self.samples_per_class
            )));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::contract(format!("learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        if self.seed_count == 0 {
            return Err(Error::contract("seed_count must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::contract(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: LossBreakdown,
}

/// One loss evaluation with gradients for the linear map and the prototypes.
pub fn loss_and_grads(
    params: &EncoderParams,
    samples: &[&FeatureMap],
    labels: &[usize],
    loss: &LossConfig,
    split_seed: u64,
) -> Result<(LossBreakdown, Mat, Mat)> {
    let split = split_classes(labels, split_seed)?;
    let mut tape = Tape::new();
    let w = tape.var(params.linear.clone());
    let v = tape.var(params.prototypes.clone());
    let (z, y) = encode_batch_var(&mut tape, w, v, samples, params.temperature)?;
    let vars = total_loss_var(&mut tape, z, y, labels, &split, loss)?;
    let grads = tape.backward(vars.total)?;
    Ok((vars.values(&tape), grads.wrt(&tape, w), grads.wrt(&tape, v)))
}

/// Draws a class-balanced batch: `classes_per_batch` distinct classes with
/// `samples_per_class` distinct samples each.
fn draw_batch(by_class: &[Vec<usize>], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let eligible: Vec<usize> = (0..by_class.len())
        .filter(|&c| by_class[c].len() >= cfg.samples_per_class)
        .collect();
    let mut batch = Vec::with_capacity(cfg.batch_size());
    for &c in eligible.choose_multiple(rng, cfg.classes_per_batch) {
        batch.extend(by_class[c].choose_multiple(rng, cfg.samples_per_class));
    }
    batch
}

/// Trains a freshly initialised encoder; initialisation, batches and class
/// splits all derive from `seed`.
pub fn train(
    data: &Dataset,
    model: &ModelConfig,
    loss: &LossConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(EncoderParams, Vec<StepRecord>)> {
    cfg.validate()?;
    loss.validate()?;
    let input_dim = data
        .samples
        .first()
        .ok_or_else(|| Error::contract("empty training set"))?
        .dim();
    let params = EncoderParams::random(input_dim, model.embed_dim, model.prototypes, model.temperature, seed)?;
    train_from(data, params, loss, cfg, seed)
}

/// Trains starting from the given parameters.
pub fn train_from(
    data: &Dataset,
    mut params: EncoderParams,
    loss: &LossConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(EncoderParams, Vec<StepRecord>)> {
    cfg.validate()?;
    params.validate()?;
    let by_class = data.by_class();
    let eligible = by_class.iter().filter(|c| c.len() >= cfg.samples_per_class).count();
    if eligible < cfg.classes_per_batch {
        return Err(Error::contract(format!(
            "only {eligible} classes have {} samples; batches need {}",
            cfg.samples_per_class, cfg.classes_per_batch
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_BA7C);
    let mut vel_w = Mat::zeros(params.linear.rows(), params.linear.cols());
    let mut vel_v = Mat::zeros(params.prototypes.rows(), params.prototypes.cols());
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = draw_batch(&by_class, cfg, &mut rng);
        let split_seed: u64 = rng.gen();
        let samples: Vec<&FeatureMap> = batch.iter().map(|&i| &data.samples[i]).collect();
        let labels: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
        let (values, gw, gv) = loss_and_grads(&params, &samples, &labels, loss, split_seed).map_err(|e| {
            if e.is_numeric() {
                Error::Diverged {
                    step,
                    detail: e.to_string(),
                }
            } else {
                e
            }
        })?;
        if !values.total.is_finite() || !gw.is_finite() || !gv.is_finite() {
            return Err(Error::Diverged {
                step,
                detail: format!("non-finite loss or gradient (loss {})", values.total),
            });
        }
        history.push(StepRecord { step, loss: values });
        vel_w = vel_w.scale(cfg.momentum).add(&gw)?;
        vel_v = vel_v.scale(cfg.momentum).add(&gv)?;
        params.linear.add_scaled_assign(&vel_w, -cfg.learning_rate)?;
        params.prototypes.add_scaled_assign(&vel_v, -cfg.learning_rate)?;
    }
    Ok((params, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::data::{generate_dataset, SyntheticSpec};

    fn data() -> Dataset {
        generate_dataset(&SyntheticSpec {
            entity_count: 8,
            class_count: 6,
            entities_per_class: 3,
            feature_dim: 6,
            locations_per_sample: 6,
            noise_std: 0.1,
            samples_per_class: 6,
            seed: 1,
        })
        .unwrap()
    }

    fn small() -> (ModelConfig, TrainConfig) {
        (
            ModelConfig {
                embed_dim: 4,
                prototypes: 8,
                temperature: 10.0,
            },
            TrainConfig {
                steps: 5,
                classes_per_batch: 4,
                samples_per_class: 2,
                learning_rate: 0.05,
                momentum: 0.9,
                ..TrainConfig::default()
            },
        )
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let ds = data();
        let (model, mut cfg) = small();
        cfg.learning_rate = 0.0;
        let init = EncoderParams::random(6, 4, 8, 10.0, 3).unwrap();
        let (trained, hist) = train_from(&ds, init.clone(), &LossConfig::default(), &cfg, 3).unwrap();
        assert_eq!(trained, init);
        assert_eq!(hist.len(), 5);
        let _ = model;
    }

    #[test]
    fn lambda_only_changes_the_xml_term() {
        let ds = data();
        let (model, cfg) = small();
        let with = LossConfig::default();
        let without = LossConfig { lambda_mix: 0.0, ..with };
        let (_, a) = train(&ds, &model, &with, &cfg, 7).unwrap();
        let (_, b) = train(&ds, &model, &without, &cfg, 7).unwrap();
        assert_eq!(a[0].loss.dml, b[0].loss.dml);
        assert_eq!(a[0].loss.xml, b[0].loss.xml);
        assert_ne!(a[0].loss.total, b[0].loss.total);
    }

    #[test]
    fn deterministic_and_divergence_reported() {
        let ds = data();
        let (model, cfg) = small();
        let a = train(&ds, &model, &LossConfig::default(), &cfg, 2).unwrap();
        let b = train(&ds, &model, &LossConfig::default(), &cfg, 2).unwrap();
        assert_eq!(a, b);
        let wild = TrainConfig { learning_rate: 1e300, steps: 20, ..cfg };
        match train(&ds, &model, &LossConfig::default(), &wild, 2) {
            Err(Error::Diverged { step, .. }) => assert!(step >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn invalid_batches_rejected() {
        let ds = data();
        let (model, cfg) = small();
        let bad = TrainConfig { classes_per_batch: 1, samples_per_class: 4, ..cfg };
        assert!(train(&ds, &model, &LossConfig::default(), &bad, 0).is_err());
        let too_many = TrainConfig { classes_per_batch: 7, ..cfg };
        assert!(train(&ds, &model, &LossConfig::default(), &too_many, 0).is_err());
    }
}
