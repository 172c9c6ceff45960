//! Contrastive loss, the cross-batch regularizer and the combined objective.
//!
//! All losses are built on a [`Tape`] so the same graph yields values and
//! gradients with respect to the histograms, the embeddings, and anything
//! upstream of them.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Mat, Tape, Var};

/// Tolerance on the mass of each histogram column in a [`LabeledBatch`].
pub const BATCH_SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Histograms `Z` (m×B), embeddings `Y` (d×B) and class labels of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    z: Mat,
    y: Mat,
    labels: Vec<usize>,
}

impl LabeledBatch {
    pub fn new(z: Mat, y: Mat, labels: Vec<usize>) -> Result<Self> {
        if z.cols() != y.cols() || z.cols() != labels.len() {
            return Err(Error::dim(
                "LabeledBatch",
                format!(
                    "Z has {} columns, Y has {}, {} labels",
                    z.cols(),
                    y.cols(),
                    labels.len()
                ),
            ));
        }
        if labels.len() < 2 {
            return Err(Error::contract("a batch needs at least two samples"));
        }
        for (j, s) in z.col_sums().iter().enumerate() {
            if (s - 1.0).abs() > BATCH_SIMPLEX_TOLERANCE || (0..z.rows()).any(|i| z[(i, j)] < 0.0)
            {
                return Err(Error::contract(format!(
                    "histogram column {j} is not on the simplex (mass {s})"
                )));
            }
        }
        Ok(LabeledBatch { z, y, labels })
    }

    pub fn z(&self) -> &Mat {
        &self.z
    }

    pub fn y(&self) -> &Mat {
        &self.y
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Sub-batch of the given columns. Fails if fewer than two columns are selected.
    pub fn select(&self, idx: &[usize]) -> Result<LabeledBatch> {
        LabeledBatch::new(
            self.z.select_cols(idx)?,
            self.y.select_cols(idx)?,
            idx.iter().map(|&j| self.labels[j]).collect(),
        )
    }
}

/// Loss weights and contrastive margins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Weight of the cross-batch term in the total loss.
    pub lambda_mix: f64,
    /// Ridge weight of the full-batch fit; each half is fitted with half of it.
    pub ridge: f64,
    pub pos_margin: f64,
    pub neg_margin: f64,
    pub normalize_embeddings: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_mix: 0.01,
            ridge: 0.05,
            pos_margin: 0.0,
            neg_margin: 0.5,
            normalize_embeddings: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_mix) {
            return Err(Error::contract(format!(
                "lambda_mix must lie in [0, 1], got {}",
                self.lambda_mix
            )));
        }
        if !(self.ridge > 0.0) || !self.ridge.is_finite() {
            return Err(Error::contract(format!("ridge must be positive, got {}", self.ridge)));
        }
        if !(self.pos_margin >= 0.0) || !(self.neg_margin > self.pos_margin) {
            return Err(Error::contract(format!(
                "margins need neg_margin > pos_margin >= 0 (got {} and {})",
                self.neg_margin, self.pos_margin
            )));
        }
        Ok(())
    }
}

/// Column indices of the two class-disjoint halves of a batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassSplit {
    pub first: Vec<usize>,
    pub second: Vec<usize>,
}

/// Randomly partitions the distinct classes into two halves of sizes
/// `⌊k/2⌋` and `⌈k/2⌉`; samples follow their class.
pub fn split_classes(labels: &[usize], seed: u64) -> Result<ClassSplit> {
    let classes: Vec<usize> = labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if classes.len() < 2 {
        return Err(Error::contract(format!(
            "class split needs at least two classes, got {}",
            classes.len()
        )));
    }
    let mut order = classes;
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let first_classes: BTreeSet<usize> = order[..order.len() / 2].iter().copied().collect();
    let (first, second): (Vec<usize>, Vec<usize>) =
        (0..labels.len()).partition(|&j| first_classes.contains(&labels[j]));
    Ok(ClassSplit { first, second })
}

/// Splits a batch into two halves with disjoint class sets.
pub fn split_disjoint_classes(
    batch: &LabeledBatch,
    seed: u64,
) -> Result<(LabeledBatch, LabeledBatch)> {
    let split = split_classes(&batch.labels, seed)?;
    let take = |idx: &[usize]| {
        Ok::<_, Error>(LabeledBatch {
            z: batch.z.select_cols(idx)?,
            y: batch.y.select_cols(idx)?,
            labels: idx.iter().map(|&j| batch.labels[j]).collect(),
        })
    };
    Ok((take(&split.first)?, take(&split.second)?))
}

/// Mean double-hinge over all unordered pairs of columns of `y`:
/// `[d − pos]₊` for same-class pairs and `[neg − d]₊` otherwise.
///
/// Returns the loss and, when `with_grad`, its gradient. Fewer than two
/// columns give zero. Coincident pairs contribute a zero subgradient.
fn pair_hinge(y: &Mat, labels: &[usize], pos: f64, neg: f64, with_grad: bool) -> (f64, Option<Mat>) {
    let b = y.cols();
    let pairs = b * b.saturating_sub(1) / 2;
    let mut grad = with_grad.then(|| Mat::zeros(y.rows(), b));
    if pairs == 0 {
        return (0.0, grad);
    }
    let cols: Vec<Vec<f64>> = (0..b).map(|j| y.col(j)).collect();
    let scale = 1.0 / pairs as f64;
    let mut total = 0.0;
    for i in 0..b {
        for j in (i + 1)..b {
            let diff: Vec<f64> = cols[i].iter().zip(&cols[j]).map(|(a, c)| a - c).collect();
            let d = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
            let (loss, slope) = if labels[i] == labels[j] {
                if d > pos {
                    (d - pos, 1.0)
                } else {
                    (0.0, 0.0)
                }
            } else if d < neg {
                (neg - d, -1.0)
            } else {
                (0.0, 0.0)
            };
            total += loss;
            if let Some(g) = grad.as_mut() {
                if slope != 0.0 && d > 0.0 {
                    let c = slope * scale / d;
                    for (r, dv) in diff.iter().enumerate() {
                        g[(r, i)] += c * dv;
                        g[(r, j)] -= c * dv;
                    }
                }
            }
        }
    }
    (total * scale, grad)
}

/// Taped contrastive loss of the embedding columns of `y`.
pub fn contrastive_var(tape: &mut Tape, y: Var, labels: &[usize], cfg: &LossConfig) -> Result<Var> {
    if tape.value(y).cols() != labels.len() {
        return Err(Error::dim("contrastive", "label count differs from column count"));
    }
    let emb = if cfg.normalize_embeddings {
        tape.normalize_cols(y)
    } else {
        y
    };
    let (pos, neg) = (cfg.pos_margin, cfg.neg_margin);
    let (value, _) = pair_hinge(tape.value(emb), labels, pos, neg, false);
    let labels = labels.to_vec();
    Ok(tape.custom(
        &[emb],
        Mat::filled(1, 1, value),
        Box::new(move |up, vals| {
            let (_, g) = pair_hinge(vals[0], &labels, pos, neg, true);
            vec![g.expect("gradient requested").scale(up[(0, 0)])]
        }),
    ))
}

/// Contrastive loss of embedding columns `y` under `labels`.
pub fn contrastive_pairs(y: &Mat, labels: &[usize], cfg: &LossConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let yv = tape.constant(y.clone());
    let out = contrastive_var(&mut tape, yv, labels, cfg)?;
    Ok(tape.value(out)[(0, 0)])
}

/// Taped ridge fit `argmin_A ‖A·Z − Y‖²_F + ridge‖A‖²_F`, returned as a d×m node.
/// Uses the B×B system when the batch is smaller than the prototype count.
pub fn ridge_fit_var(tape: &mut Tape, z: Var, y: Var, ridge: f64) -> Result<Var> {
    let (m, b) = tape.value(z).shape();
    if b < m {
        let zt = tape.transpose(z);
        let kernel = tape.matmul(zt, z)?;
        let kernel = tape.add_diag(kernel, ridge)?;
        let yt = tape.transpose(y);
        let coef = tape.solve_spd(kernel, yt)?;
        let coef_t = tape.transpose(coef);
        tape.matmul(coef_t, zt)
    } else {
        let zt = tape.transpose(z);
        let gram = tape.matmul(z, zt)?;
        let gram = tape.add_diag(gram, ridge)?;
        let yt = tape.transpose(y);
        let rhs = tape.matmul(z, yt)?;
        let sol = tape.solve_spd(gram, rhs)?;
        Ok(tape.transpose(sol))
    }
}

/// Taped cross-batch term: fit prototypes on one half, predict the other
/// half's embeddings from its histograms, and score them with the
/// contrastive loss; summed over both directions.
pub fn xml_var(
    tape: &mut Tape,
    z: Var,
    y: Var,
    labels: &[usize],
    split: &ClassSplit,
    cfg: &LossConfig,
) -> Result<Var> {
    let half_ridge = cfg.ridge / 2.0;
    let mut terms = Vec::with_capacity(2);
    for (fit, eval) in [(&split.second, &split.first), (&split.first, &split.second)] {
        if fit.is_empty() || eval.is_empty() {
            return Err(Error::contract("both halves of the split must be non-empty"));
        }
        let zf = tape.select_cols(z, fit)?;
        let yf = tape.select_cols(y, fit)?;
        let protos = ridge_fit_var(tape, zf, yf, half_ridge)?;
        let ze = tape.select_cols(z, eval)?;
        let predicted = tape.matmul(protos, ze)?;
        let eval_labels: Vec<usize> = eval.iter().map(|&j| labels[j]).collect();
        terms.push(contrastive_var(tape, predicted, &eval_labels, cfg)?);
    }
    tape.add(terms[0], terms[1])
}

/// Values of the loss components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub dml: f64,
    pub xml: f64,
    pub total: f64,
}

/// Taped nodes of the loss components.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub dml: Var,
    pub xml: Var,
    pub total: Var,
}

impl LossVars {
    pub fn values(&self, tape: &Tape) -> LossBreakdown {
        LossBreakdown {
            dml: tape.value(self.dml)[(0, 0)],
            xml: tape.value(self.xml)[(0, 0)],
            total: tape.value(self.total)[(0, 0)],
        }
    }
}

/// `(1 − λ)·L_DML(Y) + λ·L_XML(Z, Y)` on a tape.
pub fn total_loss_var(
    tape: &mut Tape,
    z: Var,
    y: Var,
    labels: &[usize],
    split: &ClassSplit,
    cfg: &LossConfig,
) -> Result<LossVars> {
    cfg.validate()?;
    let dml = contrastive_var(tape, y, labels, cfg)?;
    let xml = xml_var(tape, z, y, labels, split, cfg)?;
    let total = tape.lincomb(dml, 1.0 - cfg.lambda_mix, xml, cfg.lambda_mix)?;
    Ok(LossVars { dml, xml, total })
}

/// Cross-batch loss of a batch for the class split drawn from `seed`.
pub fn xml_loss(batch: &LabeledBatch, cfg: &LossConfig, seed: u64) -> Result<f64> {
    cfg.validate()?;
    let split = split_classes(&batch.labels, seed)?;
    let mut tape = Tape::new();
    let z = tape.constant(batch.z.clone());
    let y = tape.constant(batch.y.clone());
    let out = xml_var(&mut tape, z, y, &batch.labels, &split, cfg)?;
    Ok(tape.value(out)[(0, 0)])
}

pub fn total_loss(batch: &LabeledBatch, cfg: &LossConfig, seed: u64) -> Result<LossBreakdown> {
    let split = split_classes(&batch.labels, seed)?;
    let mut tape = Tape::new();
    let z = tape.constant(batch.z.clone());
    let y = tape.constant(batch.y.clone());
    let vars = total_loss_var(&mut tape, z, y, &batch.labels, &split, cfg)?;
    Ok(vars.values(&tape))
}

/// Total loss with its gradients with respect to `Z` and `Y`.
///
/// Takes raw matrices so that `Z` may be evaluated off the simplex (as
/// finite differences require).
pub fn total_loss_grad(
    z: &Mat,
    y: &Mat,
    labels: &[usize],
    cfg: &LossConfig,
    seed: u64,
) -> Result<(LossBreakdown, Mat, Mat)> {
    let split = split_classes(labels, seed)?;
    let mut tape = Tape::new();
    let zv = tape.var(z.clone());
    let yv = tape.var(y.clone());
    let vars = total_loss_var(&mut tape, zv, yv, labels, &split, cfg)?;
    let grads = tape.backward(vars.total)?;
    Ok((vars.values(&tape), grads.wrt(&tape, zv), grads.wrt(&tape, yv)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, softmax_cols};
    use crate::testutil::{random_mat, rng};
    use rand::Rng;

    fn random_batch(r: &mut ChaCha8Rng, m: usize, d: usize, classes: usize, per: usize) -> LabeledBatch {
        let b = classes * per;
        let z = softmax_cols(&random_mat(r, m, b), 1.0).unwrap();
        let y = random_mat(r, d, b);
        let labels = (0..b).map(|j| j / per).collect();
        LabeledBatch::new(z, y, labels).unwrap()
    }

    #[test]
    fn split_examples() {
        let mut r = rng(50);
        let b = random_batch(&mut r, 4, 3, 2, 3);
        let (h1, h2) = split_disjoint_classes(&b, 1).unwrap();
        let c1: BTreeSet<_> = h1.labels().iter().collect();
        let c2: BTreeSet<_> = h2.labels().iter().collect();
        assert_eq!((c1.len(), c2.len()), (1, 1));

        let b = random_batch(&mut r, 4, 3, 10, 2);
        for seed in 0..20 {
            let (h1, h2) = split_disjoint_classes(&b, seed).unwrap();
            let c1: BTreeSet<_> = h1.labels().iter().copied().collect();
            let c2: BTreeSet<_> = h2.labels().iter().copied().collect();
            assert_eq!((c1.len(), c2.len()), (5, 5));
            assert!(c1.is_disjoint(&c2));
            assert_eq!(h1.len() + h2.len(), b.len());
        }

        let single = LabeledBatch::new(Mat::filled(1, 3, 1.0), Mat::zeros(2, 3), vec![4, 4, 4]).unwrap();
        assert!(matches!(split_disjoint_classes(&single, 0), Err(Error::Contract(_))));
    }

    #[test]
    fn batch_validation() {
        assert!(LabeledBatch::new(Mat::filled(2, 2, 0.4), Mat::zeros(1, 2), vec![0, 1]).is_err());
        assert!(LabeledBatch::new(Mat::filled(1, 1, 1.0), Mat::zeros(1, 1), vec![0]).is_err());
        assert!(LabeledBatch::new(Mat::filled(1, 2, 1.0), Mat::zeros(1, 2), vec![0]).is_err());
    }

    #[test]
    fn contrastive_examples() {
        let raw = LossConfig {
            normalize_embeddings: false,
            ..LossConfig::default()
        };
        let same = Mat::from_columns(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![-3.0, 0.0], vec![-3.0, 0.0]]).unwrap();
        assert_eq!(contrastive_pairs(&same, &[0, 0, 1, 1], &raw).unwrap(), 0.0);

        let far = Mat::from_columns(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(contrastive_pairs(&far, &[0, 1, 2], &raw).unwrap(), 0.0);

        let two = Mat::from_columns(&[vec![0.0, 0.0], vec![0.3, 0.0]]).unwrap();
        assert!((contrastive_pairs(&two, &[7, 7], &raw).unwrap() - 0.3).abs() < 1e-15);
        // Different classes at distance 0.3 pay 0.5 − 0.3.
        assert!((contrastive_pairs(&two, &[1, 2], &raw).unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn total_loss_mixing() {
        let mut r = rng(51);
        let b = random_batch(&mut r, 6, 4, 4, 3);
        let mut cfg = LossConfig { lambda_mix: 0.0, ..LossConfig::default() };
        let dml = contrastive_pairs(b.y(), b.labels(), &cfg).unwrap();
        let xml = xml_loss(&b, &cfg, 9).unwrap();
        assert_eq!(total_loss(&b, &cfg, 9).unwrap().total, dml);
        cfg.lambda_mix = 1.0;
        assert_eq!(total_loss(&b, &cfg, 9).unwrap().total, xml);
        cfg.lambda_mix = 0.01;
        let t = total_loss(&b, &cfg, 9).unwrap();
        assert!((t.total - (0.99 * dml + 0.01 * xml)).abs() < 1e-15);
        assert!(t.total >= 0.0);
    }

    #[test]
    fn xml_zero_on_constructed_instance() {
        // Each class owns one prototype bin; Y = V*·Z with class embeddings far
        // apart, so the cross-fitted prototypes reproduce separated embeddings.
        let m = 4;
        let labels = vec![0, 0, 1, 1, 2, 2, 3, 3];
        let z = Mat::from_fn(m, 8, |i, j| if i == labels[j] { 1.0 } else { 0.0 });
        let protos = Mat::from_columns(&[
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
        ])
        .unwrap();
        let y = protos.matmul(&z).unwrap();
        let cfg = LossConfig { normalize_embeddings: false, ..LossConfig::default() };
        let batch = LabeledBatch::new(z, y, labels).unwrap();
        // Prototypes fitted on the other half never saw these bins, so every
        // prediction collapses to zero: positives coincide, negatives overlap.
        let xml = xml_loss(&batch, &cfg, 3).unwrap();
        assert!((xml - 2.0 * 0.5 * (4.0 / 6.0)).abs() < 1e-12, "{xml}");

        // With shared bins the cross-fit transfers and the loss vanishes.
        let labels = vec![0, 0, 1, 1, 2, 2, 3, 3];
        let codes = [[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]];
        let z = Mat::from_fn(2, 8, |i, j| codes[labels[j]][i]);
        let y = Mat::from_fn(2, 8, |i, j| 10.0 * codes[labels[j]][i]);
        let batch = LabeledBatch::new(z, y, labels.clone()).unwrap();
        let pairs_split = ClassSplit { first: vec![0, 1, 2, 3], second: vec![4, 5, 6, 7] };
        let mut tape = Tape::new();
        let zv = tape.constant(batch.z().clone());
        let yv = tape.constant(batch.y().clone());
        let out = xml_var(&mut tape, zv, yv, &labels, &pairs_split, &cfg).unwrap();
        assert!(tape.value(out)[(0, 0)].abs() < 1e-12);
    }

    #[test]
    fn xml_symmetric_for_duplicated_halves() {
        let mut r = rng(52);
        let half = random_batch(&mut r, 5, 3, 2, 3);
        let z = half.z().hstack(half.z()).unwrap();
        let y = half.y().hstack(half.y()).unwrap();
        let mut labels = half.labels().to_vec();
        labels.extend(half.labels().iter().map(|l| l + 10));
        let split = ClassSplit { first: (0..6).collect(), second: (6..12).collect() };
        let cfg = LossConfig::default();
        let mut tape = Tape::new();
        let zv = tape.constant(z);
        let yv = tape.constant(y);
        let zf = tape.select_cols(zv, &split.second).unwrap();
        let yf = tape.select_cols(yv, &split.second).unwrap();
        let p2 = ridge_fit_var(&mut tape, zf, yf, cfg.ridge / 2.0).unwrap();
        let zf = tape.select_cols(zv, &split.first).unwrap();
        let yf = tape.select_cols(yv, &split.first).unwrap();
        let p1 = ridge_fit_var(&mut tape, zf, yf, cfg.ridge / 2.0).unwrap();
        assert!(tape.value(p1).rel_diff(tape.value(p2)).unwrap() < 1e-14);
        let total = xml_var(&mut tape, zv, yv, &labels, &split, &cfg).unwrap();
        let one = contrastive_pairs(
            &tape.value(p1).matmul(half.z()).unwrap(),
            half.labels(),
            &cfg,
        )
        .unwrap();
        assert!((tape.value(total)[(0, 0)] - 2.0 * one).abs() < 1e-12);
    }

    #[test]
    fn xml_invariant_to_within_half_permutation() {
        let mut r = rng(53);
        let b = random_batch(&mut r, 8, 4, 4, 4);
        let split = split_classes(b.labels(), 5).unwrap();
        let cfg = LossConfig::default();
        let eval = |perm: &[usize]| {
            let pb = b.select(perm).unwrap();
            let inv: Vec<usize> = {
                let mut inv = vec![0; perm.len()];
                for (k, &j) in perm.iter().enumerate() {
                    inv[j] = k;
                }
                inv
            };
            let s = ClassSplit {
                first: split.first.iter().map(|&j| inv[j]).collect(),
                second: split.second.iter().map(|&j| inv[j]).collect(),
            };
            let mut tape = Tape::new();
            let z = tape.constant(pb.z().clone());
            let y = tape.constant(pb.y().clone());
            let out = xml_var(&mut tape, z, y, pb.labels(), &s, &cfg).unwrap();
            tape.value(out)[(0, 0)]
        };
        let base = eval(&(0..16).collect::<Vec<_>>());
        for _ in 0..10 {
            let mut perm: Vec<usize> = (0..16).collect();
            perm.shuffle(&mut r);
            assert!((eval(&perm) - base).abs() < 1e-12);
        }
    }

    #[test]
    fn total_loss_gradients_match_finite_differences() {
        let mut r = rng(54);
        for trial in 0..5 {
            let b = random_batch(&mut r, 8, 4, 4, 4);
            let cfg = LossConfig { lambda_mix: 0.3, ..LossConfig::default() };
            let seed = trial;
            let (_, _, _) = total_loss_grad(b.z(), b.y(), b.labels(), &cfg, seed).unwrap();
            let rz = grad_check(
                |z| {
                    let (l, gz, _) = total_loss_grad(z, b.y(), b.labels(), &cfg, seed)?;
                    Ok((l.total, gz))
                },
                b.z(),
                100 + trial,
            )
            .unwrap();
            let ry = grad_check(
                |y| {
                    let (l, _, gy) = total_loss_grad(b.z(), y, b.labels(), &cfg, seed)?;
                    Ok((l.total, gy))
                },
                b.y(),
                200 + trial,
            )
            .unwrap();
            assert!(rz.max_rel_error < 1e-4, "{rz:?}");
            assert!(ry.max_rel_error < 1e-4, "{ry:?}");
        }
    }

    #[test]
    fn shuffled_labels_raise_xml() {
        // Label-consistent data: Y = V*·Z with class-specific histograms.
        let mut r = rng(55);
        let cfg = LossConfig::default();
        let mut consistent = Vec::new();
        let mut shuffled = Vec::new();
        for trial in 0..100 {
            let (m, d, classes, per) = (8, 4, 4, 4);
            let protos = random_mat(&mut r, d, m);
            let centers = random_mat(&mut r, m, classes);
            let labels: Vec<usize> = (0..classes * per).map(|j| j / per).collect();
            let logits = Mat::from_fn(m, classes * per, |i, j| {
                3.0 * centers[(i, labels[j])] + 0.1 * r.gen::<f64>()
            });
            let z = softmax_cols(&logits, 1.0).unwrap();
            let y = protos.matmul(&z).unwrap();
            let batch = LabeledBatch::new(z.clone(), y.clone(), labels.clone()).unwrap();
            consistent.push(xml_loss(&batch, &cfg, trial).unwrap());
            let mut perm = labels.clone();
            perm.shuffle(&mut r);
            let batch = LabeledBatch::new(z, y, perm).unwrap();
            shuffled.push(xml_loss(&batch, &cfg, trial).unwrap());
        }
        let median = |v: &mut Vec<f64>| {
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        };
        assert!(median(&mut shuffled) >= median(&mut consistent));
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::default().validate().is_ok());
        let bad = LossConfig { lambda_mix: 1.5, ..LossConfig::default() };
        assert!(bad.validate().is_err());
        let bad = LossConfig { pos_margin: 0.6, ..LossConfig::default() };
        assert!(bad.validate().is_err());
        let bad = LossConfig { ridge: 0.0, ..LossConfig::default() };
        assert!(bad.validate().is_err());
    }
}
