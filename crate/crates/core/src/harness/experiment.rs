//! Paired training/evaluation runs and their output files.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, TestClasses};
use super::data::{generate_dataset, Dataset};
use super::encoder::{encode_all, EncoderParams};
use super::eval::{cross_class_eval, EvalReport};
use super::io::format_float;
use super::train::{train, StepRecord};
use crate::error::Result;
use crate::loss::{LossBreakdown, LossConfig};
use crate::tensor::Mat;

/// Steps averaged for the reported initial and final losses.
pub const LOSS_WINDOW: usize = 10;

const TEST_SEED_SALT: u64 = 0x7E57_0000_0000_0001;
const UNSEEN_SEED_SALT: u64 = 0x0E57_0000_0000_0002;

/// Everything one training run produces.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub seed: u64,
    pub lambda: f64,
    pub params: EncoderParams,
    pub history: Vec<StepRecord>,
    /// Histograms, embeddings and labels of the evaluation set.
    pub test_z: Mat,
    pub test_y: Mat,
    pub test_labels: Vec<usize>,
    pub report: EvalReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub lambda: f64,
    pub report: EvalReport,
    /// Mean loss over the first steps.
    pub initial_loss: LossBreakdown,
    /// Mean loss over the last steps.
    pub final_loss: LossBreakdown,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapPair {
    pub seed: u64,
    pub map_x_without: f64,
    pub map_x_with: f64,
    pub map_c_without: f64,
    pub map_c_with: f64,
}

/// Per-seed comparison of runs without and with the cross-batch term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSummary {
    pub lambda: f64,
    pub pairs: Vec<MapPair>,
    pub median_delta_map_x: f64,
    pub median_delta_map_c: f64,
    pub positives: usize,
    pub negatives: usize,
    pub ties: usize,
    /// One-sided sign-test p-value for "cross-batch term raises MAP_x".
    pub sign_test_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub lambdas: Vec<f64>,
    pub runs: Vec<RunSummary>,
    pub paired: Option<PairedSummary>,
}

/// Training set and evaluation set of one seed.
pub fn datasets(cfg: &ExperimentConfig, seed: u64) -> Result<(Dataset, Dataset)> {
    let train_set = generate_dataset(&cfg.data.spec(seed))?;
    let test_seed = seed ^ TEST_SEED_SALT;
    let test_set = match cfg.data.test_classes {
        TestClasses::Seen => train_set.resample(cfg.data.test_samples_per_class, test_seed)?,
        TestClasses::Unseen => {
            let subsets = train_set.unseen_class_subsets(cfg.data.unseen_class_count, seed ^ UNSEEN_SEED_SALT)?;
            train_set.with_classes(subsets, cfg.data.test_samples_per_class, test_seed)?
        }
    };
    Ok((train_set, test_set))
}

/// Generate, train with cross-batch weight `lambda`, encode the evaluation
/// set and evaluate it.
pub fn run_single(cfg: &ExperimentConfig, seed: u64, lambda: f64) -> Result<RunArtifacts> {
    let (train_set, test_set) = datasets(cfg, seed)?;
    let loss = LossConfig {
        lambda_mix: lambda,
        ..cfg.loss
    };
    let (params, history) = train(&train_set, &cfg.model, &loss, &cfg.train, seed)?;
    let (test_z, test_y) = encode_all(&params, &test_set.samples)?;
    let report = cross_class_eval(&test_z, &test_y, &test_set.labels, &cfg.eval, seed)?;
    Ok(RunArtifacts {
        seed,
        lambda,
        params,
        history,
        test_z,
        test_y,
        test_labels: test_set.labels,
        report,
    })
}

fn mean_loss(records: &[StepRecord]) -> LossBreakdown {
    let n = records.len().max(1) as f64;
    let sum = |f: fn(&LossBreakdown) -> f64| records.iter().map(|r| f(&r.loss)).sum::<f64>() / n;
    LossBreakdown {
        dml: sum(|l| l.dml),
        xml: sum(|l| l.xml),
        total: sum(|l| l.total),
    }
}

impl RunArtifacts {
    pub fn summary(&self) -> RunSummary {
        let w = LOSS_WINDOW.min(self.history.len());
        RunSummary {
            seed: self.seed,
            lambda: self.lambda,
            report: self.report,
            initial_loss: mean_loss(&self.history[..w]),
            final_loss: mean_loss(&self.history[self.history.len() - w..]),
        }
    }
}

/// Upper tail of Binomial(n, 1/2) at `positives`, ties discarded.
pub fn sign_test_p(positives: usize, negatives: usize) -> f64 {
    let n = positives + negatives;
    let ln_fact = |k: usize| (1..=k).map(|i| (i as f64).ln()).sum::<f64>();
    let ln_half_n = n as f64 * 0.5f64.ln();
    (positives..=n)
        .map(|k| (ln_fact(n) - ln_fact(k) - ln_fact(n - k) + ln_half_n).exp())
        .sum::<f64>()
        .min(1.0)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn paired_summary(runs: &[RunSummary], lambda: f64) -> Option<PairedSummary> {
    let mut pairs = Vec::new();
    for base in runs.iter().filter(|r| r.lambda == 0.0) {
        let with = runs.iter().find(|r| r.seed == base.seed && r.lambda == lambda)?;
        pairs.push(MapPair {
            seed: base.seed,
            map_x_without: base.report.map_x,
            map_x_with: with.report.map_x,
            map_c_without: base.report.map_c,
            map_c_with: with.report.map_c,
        });
    }
    if pairs.is_empty() || lambda == 0.0 {
        return None;
    }
    let dx: Vec<f64> = pairs.iter().map(|p| p.map_x_with - p.map_x_without).collect();
    let dc: Vec<f64> = pairs.iter().map(|p| p.map_c_with - p.map_c_without).collect();
    let positives = dx.iter().filter(|&&d| d > 0.0).count();
    let negatives = dx.iter().filter(|&&d| d < 0.0).count();
    Some(PairedSummary {
        lambda,
        median_delta_map_x: median(&dx),
        median_delta_map_c: median(&dc),
        positives,
        negatives,
        ties: dx.len() - positives - negatives,
        sign_test_p: sign_test_p(positives, negatives),
        pairs,
    })
}

/// Runs every (seed, λ) combination of the config, in parallel over runs.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(ExperimentSummary, Vec<RunArtifacts>)> {
    cfg.validate()?;
    let seeds = cfg.seeds();
    let lambdas = cfg.lambdas();
    let jobs: Vec<(u64, f64)> = seeds
        .iter()
        .flat_map(|&s| lambdas.iter().map(move |&l| (s, l)))
        .collect();
    let artifacts = jobs
        .par_iter()
        .map(|&(s, l)| run_single(cfg, s, l))
        .collect::<Result<Vec<_>>>()?;
    let runs: Vec<RunSummary> = artifacts.iter().map(RunArtifacts::summary).collect();
    let paired = if lambdas.len() == 2 {
        paired_summary(&runs, lambdas[1])
    } else {
        None
    };
    Ok((
        ExperimentSummary {
            config: *cfg,
            seeds,
            lambdas,
            runs,
            paired,
        },
        artifacts,
    ))
}

pub fn metrics_csv(runs: &[RunSummary]) -> String {
    let mut out = String::from("seed,lambda,metric,value\n");
    for r in runs {
        let rows = [
            ("map_at_r", r.report.map_at_r),
            ("r_at_1", r.report.r_at_1),
            ("map_c", r.report.map_c),
            ("map_x", r.report.map_x),
            ("map_x_std", r.report.map_x_std),
            ("trial_count", r.report.trial_count as f64),
        ];
        for (name, v) in rows {
            out.push_str(&format!("{},{},{name},{}\n", r.seed, format_float(r.lambda), format_float(v)));
        }
    }
    out
}

pub fn history_csv(runs: &[RunArtifacts]) -> String {
    let mut out = String::from("seed,lambda,step,loss_dml,loss_xml,loss_total\n");
    for r in runs {
        for h in &r.history {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.seed,
                format_float(r.lambda),
                h.step,
                format_float(h.loss.dml),
                format_float(h.loss.xml),
                format_float(h.loss.total)
            ));
        }
    }
    out
}

/// Writes `summary.json`, `metrics.csv` and `history.csv`, all pure
/// functions of the config, plus `timing.json` with the wall time.
pub fn write_experiment(
    dir: &Path,
    summary: &ExperimentSummary,
    runs: &[RunArtifacts],
    wall_seconds: f64,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(summary).expect("summary serializes");
    fs::write(dir.join("summary.json"), json + "\n")?;
    fs::write(dir.join("metrics.csv"), metrics_csv(&summary.runs))?;
    fs::write(dir.join("history.csv"), history_csv(runs))?;
    let mut t = fs::File::create(dir.join("timing.json"))?;
    writeln!(t, "{}", serde_json::json!({ "wall_seconds": wall_seconds }))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_test_values() {
        // 15 of 20: sum_{k>=15} C(20,k) / 2^20 = 21700 / 1048576.
        assert!((sign_test_p(15, 5) - 21700.0 / 1048576.0).abs() < 1e-12);
        assert!((sign_test_p(0, 3) - 1.0).abs() < 1e-12);
        assert!((sign_test_p(3, 0) - 0.125).abs() < 1e-12);
        assert_eq!(sign_test_p(0, 0), 1.0);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
