//! Prototype sets: greedy k-center covers, recursive least-squares
//! estimation with forgetting, and the two-half split/combine identity.
//!
//! Prototypes are stored as d×m matrices (one prototype per column), so the
//! reconstruction of an embedding from a histogram is the product `V·z`.
//! The least-squares systems are solved for `Vᵀ` (m×d).

use crate::error::{Error, Result};
use crate::tensor::{euclidean, solve_spd, Cholesky, Mat};

/// Prototypes as the columns of a d×m matrix, with an optional covering radius.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeMatrix {
    vectors: Mat,
    covering_radius: Option<f64>,
}

impl PrototypeMatrix {
    pub fn new(vectors: Mat) -> Result<Self> {
        Ok(PrototypeMatrix {
            vectors,
            covering_radius: None,
        })
    }

    pub fn with_radius(vectors: Mat, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(Error::contract(format!("invalid covering radius {radius}")));
        }
        Ok(PrototypeMatrix {
            vectors,
            covering_radius: Some(radius),
        })
    }

    pub fn vectors(&self) -> &Mat {
        &self.vectors
    }

    pub fn into_vectors(self) -> Mat {
        self.vectors
    }

    pub fn covering_radius(&self) -> Option<f64> {
        self.covering_radius
    }

    /// Number of prototypes.
    pub fn len(&self) -> usize {
        self.vectors.cols()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.vectors.rows()
    }
}

/// `max_j min_i ‖p_j − c_i‖₂` over the columns of `points` and `centers`.
pub fn covering_radius(points: &Mat, centers: &Mat) -> Result<f64> {
    if points.rows() != centers.rows() {
        return Err(Error::dim("covering_radius", "points and centers differ in dimension"));
    }
    let cs: Vec<Vec<f64>> = (0..centers.cols()).map(|i| centers.col(i)).collect();
    Ok((0..points.cols())
        .map(|j| {
            let p = points.col(j);
            cs.iter().map(|c| euclidean(&p, c)).fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max))
}

/// Farthest-point traversal: starting from `seed_index`, repeatedly adds the
/// point farthest from the chosen set. Distance ties go to the lowest index.
///
/// The result is a 2-approximation of the optimal k-center radius.
pub fn greedy_k_center(points: &Mat, m: usize, seed_index: usize) -> Result<PrototypeMatrix> {
    let n = points.cols();
    if m == 0 || m > n {
        return Err(Error::contract(format!(
            "k-center needs 1 <= m <= n (m = {m}, n = {n})"
        )));
    }
    if seed_index >= n {
        return Err(Error::contract(format!(
            "seed index {seed_index} out of range for {n} points"
        )));
    }
    let cols: Vec<Vec<f64>> = (0..n).map(|j| points.col(j)).collect();
    let mut chosen = vec![seed_index];
    let mut dist: Vec<f64> = cols.iter().map(|p| euclidean(p, &cols[seed_index])).collect();
    while chosen.len() < m {
        let mut far = 0;
        for j in 1..n {
            if dist[j] > dist[far] {
                far = j;
            }
        }
        chosen.push(far);
        for (j, p) in cols.iter().enumerate() {
            dist[j] = dist[j].min(euclidean(p, &cols[far]));
        }
    }
    let radius = dist.iter().copied().fold(0.0, f64::max);
    PrototypeMatrix::with_radius(points.select_cols(&chosen)?, radius)
}

/// Running normal equations of the exponentially weighted ridge problem
/// `min_A Σ_i α^{K−i} ‖A·Z_i − Y_i‖²_F + β‖A‖²_F`:
///
/// `R_K = Σ_i α^{K−i} Z_i Z_iᵀ + βI` (m×m) and `Q_K = Σ_i α^{K−i} Z_i Y_iᵀ` (m×d).
#[derive(Debug, Clone, PartialEq)]
pub struct RlsState {
    info: Mat,
    cross: Mat,
    forgetting: f64,
    ridge: f64,
    step: usize,
}

/// One application of the convex-combination form of the recursion.
#[derive(Debug, Clone)]
pub struct ConvexStep {
    /// m×m weight `W = α (α R_K + R_b)⁻¹ R_K` on the previous prototypes.
    pub weight: Mat,
    /// Prototypes fitted to the new batch alone with ridge `(1 − α) β`.
    pub batch_prototypes: Mat,
    /// `V_K Wᵀ + V_b (I − W)ᵀ`.
    pub prototypes: Mat,
}

impl RlsState {
    /// Fresh state with `R = βI`, `Q = 0`.
    pub fn new(m: usize, d: usize, forgetting: f64, ridge: f64) -> Result<Self> {
        if !(forgetting > 0.0 && forgetting <= 1.0) {
            return Err(Error::contract(format!(
                "forgetting factor must lie in (0, 1], got {forgetting}"
            )));
        }
        if !(ridge > 0.0) || !ridge.is_finite() {
            return Err(Error::contract(format!("ridge must be positive, got {ridge}")));
        }
        if m == 0 || d == 0 {
            return Err(Error::contract("prototype count and dimension must be >= 1"));
        }
        Ok(RlsState {
            info: Mat::identity(m).scale(ridge),
            cross: Mat::zeros(m, d),
            forgetting,
            ridge,
            step: 0,
        })
    }

    pub fn info(&self) -> &Mat {
        &self.info
    }

    pub fn cross(&self) -> &Mat {
        &self.cross
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn forgetting(&self) -> f64 {
        self.forgetting
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    fn check_batch(&self, z: &Mat, y: &Mat) -> Result<()> {
        if z.rows() != self.info.rows() || y.rows() != self.cross.cols() || z.cols() != y.cols() {
            return Err(Error::dim(
                "RlsState::update",
                format!(
                    "state is m={}, d={}; got Z {:?}, Y {:?}",
                    self.info.rows(),
                    self.cross.cols(),
                    z.shape(),
                    y.shape()
                ),
            ));
        }
        Ok(())
    }

    /// Folds in a batch: `R ← α(R − βI) + ZZᵀ + βI`, `Q ← αQ + ZYᵀ`.
    pub fn update(&mut self, z: &Mat, y: &Mat) -> Result<()> {
        self.check_batch(z, y)?;
        let a = self.forgetting;
        let carried = self.info.add_diag(-self.ridge)?.scale(a);
        self.info = carried
            .add(&z.matmul(&z.transpose())?)?
            .add_diag(self.ridge)?;
        self.cross = self.cross.scale(a).add(&z.matmul(&y.transpose())?)?;
        self.step += 1;
        Ok(())
    }

    /// Current prototypes `V` (d×m) with `R·Vᵀ = Q`; zeros before the first update.
    pub fn prototypes(&self) -> Result<PrototypeMatrix> {
        PrototypeMatrix::new(solve_spd(&self.info, &self.cross)?.transpose())
    }

    /// Same update expressed as a weighted combination of the previous
    /// prototypes and the prototypes fitted to the batch alone.
    ///
    /// With `R_b = ZZᵀ + (1 − α)βI`, the accumulated system is
    /// `R_{K+1} = αR_K + R_b` and `Q_{K+1} = αR_K V_Kᵀ + R_b V_bᵀ`, hence
    /// `V_{K+1}ᵀ = W V_Kᵀ + (I − W) V_bᵀ` with `W = α R_{K+1}⁻¹ R_K`.
    /// `R_b` must be positive definite, which fails for `α = 1` with a
    /// rank-deficient batch.
    pub fn update_convex(&mut self, z: &Mat, y: &Mat) -> Result<ConvexStep> {
        self.check_batch(z, y)?;
        let a = self.forgetting;
        let previous = self.prototypes()?.into_vectors();
        let batch_info = z
            .matmul(&z.transpose())?
            .add_diag((1.0 - a) * self.ridge)?;
        let batch_protos = solve_spd(&batch_info, &z.matmul(&y.transpose())?)?.transpose();
        let next_info = self.info.scale(a).add(&batch_info)?;
        let weight = Cholesky::factor(&next_info)?.solve(&self.info.scale(a))?;
        let complement = Mat::identity(weight.rows()).sub(&weight)?;
        let prototypes = previous
            .matmul(&weight.transpose())?
            .add(&batch_protos.matmul(&complement.transpose())?)?;
        self.update(z, y)?;
        Ok(ConvexStep {
            weight,
            batch_prototypes: batch_protos,
            prototypes,
        })
    }
}

/// Result of fitting two halves separately and recombining them.
#[derive(Debug, Clone)]
pub struct SplitCombine {
    /// `V₁Wᵀ + V₂(I − W)ᵀ`, equal to the full-batch fit with ridge ε.
    pub combined: Mat,
    /// `W = (R₁ + R₂)⁻¹ R₁` with `R_k = Z_k Z_kᵀ + (ε/2) I`.
    pub weight: Mat,
    /// `I − W`.
    pub complement: Mat,
    pub first: Mat,
    pub second: Mat,
}

/// Fits each half with ridge `ε/2` and recombines the two fits.
pub fn split_combine(
    z1: &Mat,
    y1: &Mat,
    z2: &Mat,
    y2: &Mat,
    epsilon: f64,
) -> Result<SplitCombine> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::contract(format!("epsilon must be positive, got {epsilon}")));
    }
    if z1.rows() != z2.rows() || y1.rows() != y2.rows() {
        return Err(Error::dim("split_combine", "halves disagree in m or d"));
    }
    if z1.cols() != y1.cols() || z2.cols() != y2.cols() {
        return Err(Error::dim("split_combine", "Z and Y column counts differ"));
    }
    let half = epsilon / 2.0;
    let r1 = z1.matmul(&z1.transpose())?.add_diag(half)?;
    let r2 = z2.matmul(&z2.transpose())?.add_diag(half)?;
    let first = solve_spd(&r1, &z1.matmul(&y1.transpose())?)?.transpose();
    let second = solve_spd(&r2, &z2.matmul(&y2.transpose())?)?.transpose();
    let weight = solve_spd(&r1.add(&r2)?, &r1)?;
    let complement = Mat::identity(weight.rows()).sub(&weight)?;
    let combined = first
        .matmul(&weight.transpose())?
        .add(&second.matmul(&complement.transpose())?)?;
    Ok(SplitCombine {
        combined,
        weight,
        complement,
        first,
        second,
    })
}
