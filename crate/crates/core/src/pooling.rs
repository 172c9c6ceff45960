//! Histogram operators over prototypes, GAP, and prototype convex combinations.

use crate::error::{Error, Result};
use crate::prototypes::PrototypeMatrix;
use crate::tensor::{euclidean, softmax_cols, Mat, Tape, Var};
use crate::transport::TransportPlan;

/// The `n` local `d`-dimensional features of one sample, one per column.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    features: Mat,
    grid: Option<(usize, usize)>,
}

impl FeatureMap {
    pub fn new(features: Mat) -> Result<Self> {
        Ok(FeatureMap {
            features,
            grid: None,
        })
    }

    /// Records the `w×h` spatial layout the columns were flattened from.
    pub fn with_grid(features: Mat, width: usize, height: usize) -> Result<Self> {
        if width * height != features.cols() {
            return Err(Error::dim(
                "FeatureMap::with_grid",
                format!("{width}x{height} grid for {} features", features.cols()),
            ));
        }
        Ok(FeatureMap {
            features,
            grid: Some((width, height)),
        })
    }

    pub fn features(&self) -> &Mat {
        &self.features
    }

    pub fn grid(&self) -> Option<(usize, usize)> {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.features.rows()
    }

    pub fn len(&self) -> usize {
        self.features.cols()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Tolerance on the mass of a histogram.
pub const SIMPLEX_TOLERANCE: f64 = 1e-12;

/// A probability vector over prototypes.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    weights: Vec<f64>,
}

impl Histogram {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::contract("histogram needs at least one bin"));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::contract("histogram weights must be finite and >= 0"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::contract(format!("histogram mass is {total}, not 1")));
        }
        Ok(Histogram { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn l1_distance(&self, other: &Histogram) -> f64 {
        self.weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }
}

fn check_dims(x: &Mat, v: &Mat, op: &'static str) -> Result<()> {
    if x.rows() != v.rows() {
        return Err(Error::dim(
            op,
            format!("features of dim {} vs prototypes of dim {}", x.rows(), v.rows()),
        ));
    }
    Ok(())
}

/// Global average pooling: the mean of the feature columns.
pub fn gap(x: &FeatureMap) -> Vec<f64> {
    x.features.col_mean()
}

/// Index of the prototype with the largest inner product per feature.
/// Ties go to the lowest prototype index.
pub fn argmax_assignment(x: &Mat, v: &Mat) -> Result<Vec<usize>> {
    check_dims(x, v, "argmax_assignment")?;
    let scores = v.transpose().matmul(x)?;
    Ok((0..x.cols())
        .map(|j| {
            let mut best = 0;
            for i in 1..scores.rows() {
                if scores[(i, j)] > scores[(best, j)] {
                    best = i;
                }
            }
            best
        })
        .collect())
}

/// Index of the Euclidean-nearest prototype per feature, with its distance.
/// Ties go to the lowest prototype index.
pub fn nearest_assignment(x: &Mat, v: &Mat) -> Result<Vec<(usize, f64)>> {
    check_dims(x, v, "nearest_assignment")?;
    let protos: Vec<Vec<f64>> = (0..v.cols()).map(|i| v.col(i)).collect();
    Ok((0..x.cols())
        .map(|j| {
            let xj = x.col(j);
            let mut best = (0, euclidean(&xj, &protos[0]));
            for (i, p) in protos.iter().enumerate().skip(1) {
                let d = euclidean(&xj, p);
                if d < best.1 {
                    best = (i, d);
                }
            }
            best
        })
        .collect())
}

/// Histogram `count_i / n` and plan `π_ij = 1/n` of an assignment of `n`
/// features to `m` prototypes.
pub(crate) fn counting_histogram(
    assignment: &[usize],
    m: usize,
) -> Result<(Histogram, TransportPlan)> {
    let n = assignment.len();
    let inv_n = 1.0 / n as f64;
    let mut plan = Mat::zeros(m, n);
    let mut counts = vec![0usize; m];
    for (j, &i) in assignment.iter().enumerate() {
        plan[(i, j)] = inv_n;
        counts[i] += 1;
    }
    let hist = Histogram::new(counts.into_iter().map(|c| c as f64 / n as f64).collect())?;
    Ok((hist, TransportPlan { plan, cost: 0.0 }))
}

/// Solution of the histogram LP: every feature sends its `1/n` mass to the
/// prototype with the largest inner product.
///
/// The plan's `cost` is `Σ c_ij π_ij` with `c_ij = −νᵢᵀxⱼ`.
pub fn hard_histogram(x: &FeatureMap, v: &PrototypeMatrix) -> Result<(Histogram, TransportPlan)> {
    let assignment = argmax_assignment(&x.features, v.vectors())?;
    let (hist, mut plan) = counting_histogram(&assignment, v.len())?;
    let scores = v.vectors().transpose().matmul(&x.features)?;
    let inv_n = 1.0 / x.len() as f64;
    plan.cost = -assignment
        .iter()
        .enumerate()
        .map(|(j, &i)| scores[(i, j)] * inv_n)
        .sum::<f64>();
    Ok((hist, plan))
}

/// Entropy-smoothed histogram: `z_i = (1/n) Σ_j softmax_i(temperature · Vᵀx_j)`.
pub fn soft_histogram(x: &FeatureMap, v: &PrototypeMatrix, temperature: f64) -> Result<Histogram> {
    check_dims(&x.features, v.vectors(), "soft_histogram")?;
    let scores = v.vectors().transpose().matmul(&x.features)?;
    let p = softmax_cols(&scores, temperature)?;
    let n = x.len() as f64;
    let mut weights: Vec<f64> = p.row_sums().into_iter().map(|s| s / n).collect();
    // Renormalize away the rounding in the column sums.
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Histogram::new(weights)
}

/// Taped soft histogram of features `x` (d×n) on prototypes `v` (d×m), as an m×1 node.
pub fn soft_histogram_var(tape: &mut Tape, x: Var, v: Var, temperature: f64) -> Result<Var> {
    let n = tape.value(x).cols();
    let vt = tape.transpose(v);
    let scores = tape.matmul(vt, x)?;
    let p = tape.softmax_cols(scores, temperature)?;
    let avg = tape.constant(Mat::filled(n, 1, 1.0 / n as f64));
    tape.matmul(p, avg)
}

/// Prototype convex combination `V·z`.
pub fn pcc_embed(z: &Histogram, v: &PrototypeMatrix) -> Result<Vec<f64>> {
    if z.len() != v.len() {
        return Err(Error::dim(
            "pcc_embed",
            format!("{} weights for {} prototypes", z.len(), v.len()),
        ));
    }
    v.vectors().mul_vec(&z.weights)
}

/// Outcome of comparing GAP against the prototype reconstruction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapBound {
    /// `‖V·z* − gap(X)‖₂`.
    pub discrepancy: f64,
    /// Empirical covering radius `max_j min_i ‖x_j − ν_i‖₂`.
    pub radius: f64,
    pub holds: bool,
}

pub const GAP_BOUND_SLACK: f64 = 1e-9;

/// Checks that the PCC embedding lies within the covering radius of GAP.
///
/// `z*` comes from Euclidean-nearest assignment, which coincides with the
/// inner-product assignment when features and prototypes share a norm.
pub fn lemma_gap_bound(x: &FeatureMap, v: &PrototypeMatrix) -> Result<GapBound> {
    let nearest = nearest_assignment(&x.features, v.vectors())?;
    let assignment: Vec<usize> = nearest.iter().map(|(i, _)| *i).collect();
    let radius = nearest.iter().fold(0.0, |r, (_, d)| f64::max(r, *d));
    let (z, _) = counting_histogram(&assignment, v.len())?;
    let pcc = pcc_embed(&z, v)?;
    let discrepancy = euclidean(&pcc, &gap(x));
    Ok(GapBound {
        discrepancy,
        radius,
        holds: discrepancy <= radius + GAP_BOUND_SLACK,
    })
}

/// Scales every column to unit norm; zero columns are left as they are.
pub fn unit_columns(m: &Mat) -> Mat {
    let mut out = m.clone();
    for j in 0..m.cols() {
        let c = m.col(j);
        let n = crate::tensor::norm(&c);
        if n > 0.0 {
            out.set_col(j, &c.iter().map(|v| v / n).collect::<Vec<_>>());
        }
    }
    out
}
