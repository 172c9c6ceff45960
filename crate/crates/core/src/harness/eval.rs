//! Seen-class and cross-class retrieval of a ridge-fitted linear metric.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{map_at_r, r_at_1};
use crate::error::{Error, Result};
use crate::loss::split_classes;
use crate::pooling::unit_columns;
use crate::tensor::{ridge_fit, Mat, RidgeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub trials: usize,
    pub ridge: f64,
    /// Rank unit-normalized embeddings.
    pub normalize: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            trials: 200,
            ridge: 0.05,
            normalize: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub map_at_r: f64,
    pub r_at_1: f64,
    pub map_c: f64,
    pub map_x: f64,
    /// Sample standard deviation of the per-trial cross-class scores.
    pub map_x_std: f64,
    pub trial_count: usize,
}

fn prepare(e: Mat, normalize: bool) -> Mat {
    if normalize {
        unit_columns(&e)
    } else {
        e
    }
}

/// Seed of one cross-class trial.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(trial as u64)
}

/// Cross-class score of one split: fit on the first half, rank the
/// predictions of the second half.
pub fn cross_class_trial(z: &Mat, y: &Mat, labels: &[usize], cfg: &EvalConfig, seed: u64) -> Result<f64> {
    let split = split_classes(labels, seed)?;
    let ridge = RidgeConfig::new(cfg.ridge)?;
    let v = ridge_fit(&z.select_cols(&split.first)?, &y.select_cols(&split.first)?, ridge)?;
    let pred = v.matmul(&z.select_cols(&split.second)?)?;
    let held: Vec<usize> = split.second.iter().map(|&j| labels[j]).collect();
    Ok(map_at_r(&prepare(pred, cfg.normalize), &held)?.value)
}

/// Retrieval of `Y` itself, seen-class fit quality and the cross-class
/// average over `cfg.trials` random class splits.
pub fn cross_class_eval(z: &Mat, y: &Mat, labels: &[usize], cfg: &EvalConfig, seed: u64) -> Result<EvalReport> {
    if cfg.trials == 0 {
        return Err(Error::contract("cross-class evaluation needs at least one trial"));
    }
    if z.cols() != y.cols() || z.cols() != labels.len() {
        return Err(Error::dim(
            "cross_class_eval",
            format!("Z has {} columns, Y {}, labels {}", z.cols(), y.cols(), labels.len()),
        ));
    }
    let classes = labels.iter().collect::<std::collections::BTreeSet<_>>().len();
    if classes < 4 {
        return Err(Error::contract(format!("cross-class evaluation needs >= 4 classes, got {classes}")));
    }
    let ranked = prepare(y.clone(), cfg.normalize);
    let map = map_at_r(&ranked, labels)?.value;
    let r1 = r_at_1(&ranked, labels)?.value;
    let v = ridge_fit(z, y, RidgeConfig::new(cfg.ridge)?)?;
    let map_c = map_at_r(&prepare(v.matmul(z)?, cfg.normalize), labels)?.value;
    let scores = (0..cfg.trials)
        .into_par_iter()
        .map(|t| cross_class_trial(z, y, labels, cfg, trial_seed(seed, t)))
        .collect::<Result<Vec<f64>>>()?;
    let n = scores.len() as f64;
    let map_x = scores.iter().sum::<f64>() / n;
    let map_x_std = if scores.len() > 1 {
        (scores.iter().map(|s| (s - map_x).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(EvalReport {
        map_at_r: map,
        r_at_1: r1,
        map_c,
        map_x,
        map_x_std,
        trial_count: cfg.trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::softmax_cols;
    use crate::testutil::{random_mat, rng};
    use rand::Rng;

    #[test]
    fn zero_trials_rejected() {
        let mut r = rng(1);
        let z = softmax_cols(&random_mat(&mut r, 3, 8), 1.0).unwrap();
        let y = random_mat(&mut r, 2, 8);
        let labels: Vec<usize> = (0..8).map(|j| j / 2).collect();
        let cfg = EvalConfig { trials: 0, ..EvalConfig::default() };
        assert!(matches!(cross_class_eval(&z, &y, &labels, &cfg, 0), Err(Error::Contract(_))));
        let cfg = EvalConfig::default();
        assert!(cross_class_eval(&z, &y, &[0, 0, 1, 1, 2, 2, 2, 2], &cfg, 0).is_err());
    }

    #[test]
    fn planted_map_is_recovered() {
        let mut r = rng(2);
        let (m, d) = (5, 3);
        let labels: Vec<usize> = (0..30).map(|j| j / 5).collect();
        let z = softmax_cols(&random_mat(&mut r, m, 30), 2.0).unwrap();
        let v = random_mat(&mut r, d, m);
        let y = v.matmul(&z).unwrap();
        let cfg = EvalConfig { trials: 4, ridge: 1e-6, normalize: false };
        let rep = cross_class_eval(&z, &y, &labels, &cfg, 3).unwrap();
        assert!((rep.map_c - rep.map_at_r).abs() <= 1e-3, "{rep:?}");
    }

    #[test]
    fn perfect_transfer_matches_held_out_truth() {
        // Every class mixes all prototypes with its own proportions, so any
        // half identifies the planted map.
        let mut r = rng(3);
        let (m, d, classes, per) = (4, 3, 6, 6);
        let v = random_mat(&mut r, d, m);
        let bases: Vec<Vec<f64>> = (0..classes)
            .map(|_| (0..m).map(|_| r.gen_range(0.1..1.0)).collect())
            .collect();
        let mut cols = Vec::new();
        let mut labels = Vec::new();
        for (c, b) in bases.iter().enumerate() {
            for _ in 0..per {
                let w: Vec<f64> = b.iter().map(|x| x * r.gen_range(0.8..1.2)).collect();
                let s: f64 = w.iter().sum();
                cols.push(w.iter().map(|x| x / s).collect::<Vec<_>>());
                labels.push(c);
            }
        }
        let z = Mat::from_columns(&cols).unwrap();
        let y = v.matmul(&z).unwrap();
        let cfg = EvalConfig { trials: 1, ridge: 1e-8, normalize: true };
        let rep = cross_class_eval(&z, &y, &labels, &cfg, 11).unwrap();
        let split = split_classes(&labels, trial_seed(11, 0)).unwrap();
        let held: Vec<usize> = split.second.iter().map(|&j| labels[j]).collect();
        let truth = map_at_r(&unit_columns(&y.select_cols(&split.second).unwrap()), &held).unwrap().value;
        assert!((rep.map_x - truth).abs() < 0.05, "{} vs {truth}", rep.map_x);
        assert_eq!(rep.trial_count, 1);
    }

    #[test]
    fn deterministic_per_seed() {
        let mut r = rng(4);
        let z = softmax_cols(&random_mat(&mut r, 6, 24), 1.0).unwrap();
        let y = random_mat(&mut r, 4, 24);
        let labels: Vec<usize> = (0..24).map(|j| j / 4).collect();
        let cfg = EvalConfig { trials: 16, ..EvalConfig::default() };
        let a = cross_class_eval(&z, &y, &labels, &cfg, 5).unwrap();
        let b = cross_class_eval(&z, &y, &labels, &cfg, 5).unwrap();
        assert_eq!(a, b);
        for x in [a.map_at_r, a.r_at_1, a.map_c, a.map_x] {
            assert!((0.0..=1.0).contains(&x));
        }
    }
}
