//! Exact optimal transport on small instances, the linear-ball MMD and the
//! exhaustive assignment solver for the histogram LP.
//!
//! The exact solver is the transportation simplex (MODI): a northwest-corner
//! basis, potentials from the basis tree, Dantzig pricing, and a switch to
//! Bland's rule after a run of degenerate pivots. The final potentials are
//! returned as a dual certificate.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::pooling::{counting_histogram, FeatureMap, Histogram};
use crate::prototypes::PrototypeMatrix;
use crate::tensor::{dot, euclidean, norm, Mat};

/// Largest `m·n` accepted by [`ot_exact`].
pub const MAX_OT_CELLS: usize = 10_000;
/// Mass sums further than this from one are rejected.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// Weighted point cloud: `masses[k]` sits at column `k` of `support`.
#[derive(Debug, Clone, PartialEq)]
pub struct MassDistribution {
    masses: Vec<f64>,
    support: Mat,
}

impl MassDistribution {
    /// Masses within [`MASS_TOLERANCE`] of summing to one are rescaled to sum to one.
    pub fn new(masses: Vec<f64>, support: Mat) -> Result<Self> {
        if masses.len() != support.cols() {
            return Err(Error::dim(
                "MassDistribution",
                format!("{} masses for {} support points", masses.len(), support.cols()),
            ));
        }
        if masses.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
            return Err(Error::contract("masses must be finite and nonnegative"));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::contract(format!(
                "masses sum to {total}, not 1 (tolerance {MASS_TOLERANCE:e})"
            )));
        }
        let masses = masses.into_iter().map(|m| m / total).collect();
        Ok(MassDistribution { masses, support })
    }

    /// Equal mass on every column of `support`.
    pub fn uniform(support: Mat) -> Self {
        let k = support.cols();
        MassDistribution {
            masses: vec![1.0 / k as f64; k],
            support,
        }
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn support(&self) -> &Mat {
        &self.support
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.support.rows()
    }

    /// `Σ_k masses[k] · support[:, k]`.
    pub fn mean(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; d];
        for (k, w) in self.masses.iter().enumerate() {
            for (i, o) in out.iter_mut().enumerate() {
                *o += w * self.support[(i, k)];
            }
        }
        out
    }
}

/// Coupling between two marginals and its cost under the problem's cost matrix.
///
/// For [`ot_exact`] the cost is the Euclidean transport cost. For the
/// histogram LP the cost uses `c_ij = −νᵢᵀxⱼ`, so it is the negated objective
/// and may be negative.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub plan: Mat,
    pub cost: f64,
}

/// Dual potentials `(f, g)` with `f_i + g_j ≤ c_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualCertificate {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub value: f64,
}

impl DualCertificate {
    /// Largest violation `max(f_i + g_j − c_ij)`, or a negative number when strictly feasible.
    pub fn max_violation(&self, cost: &Mat) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for (i, fi) in self.f.iter().enumerate() {
            for (j, gj) in self.g.iter().enumerate() {
                worst = worst.max(fi + gj - cost[(i, j)]);
            }
        }
        worst
    }
}

/// Pairwise Euclidean distances between the supports.
pub fn euclidean_costs(p: &MassDistribution, q: &MassDistribution) -> Result<Mat> {
    if p.dim() != q.dim() {
        return Err(Error::dim(
            "euclidean_costs",
            format!("support dimensions {} and {}", p.dim(), q.dim()),
        ));
    }
    let xs: Vec<Vec<f64>> = (0..p.len()).map(|i| p.support.col(i)).collect();
    let ys: Vec<Vec<f64>> = (0..q.len()).map(|j| q.support.col(j)).collect();
    Ok(Mat::from_fn(p.len(), q.len(), |i, j| euclidean(&xs[i], &ys[j])))
}

/// Exact OT distance with Euclidean ground cost, plus a certificate whose
/// value matches the plan's cost.
pub fn ot_exact(
    p: &MassDistribution,
    q: &MassDistribution,
) -> Result<(TransportPlan, DualCertificate)> {
    if p.len() * q.len() > MAX_OT_CELLS {
        return Err(Error::contract(format!(
            "{}x{} transport problem exceeds {MAX_OT_CELLS} cells",
            p.len(),
            q.len()
        )));
    }
    let cost = euclidean_costs(p, q)?;
    transport_simplex(&p.masses, &q.masses, &cost)
}

/// Solves `min Σ c_ij π_ij` over couplings of `supply` and `demand`.
pub fn transport_simplex(
    supply: &[f64],
    demand: &[f64],
    cost: &Mat,
) -> Result<(TransportPlan, DualCertificate)> {
    let (m, n) = (supply.len(), demand.len());
    if cost.shape() != (m, n) {
        return Err(Error::dim(
            "transport_simplex",
            format!("cost {:?} for marginals of length {m} and {n}", cost.shape()),
        ));
    }
    let (ts, td): (f64, f64) = (supply.iter().sum(), demand.iter().sum());
    if (ts - td).abs() > MASS_TOLERANCE {
        return Err(Error::contract(format!(
            "marginal masses differ: {ts} vs {td}"
        )));
    }
    let mut solver = Simplex::northwest(supply, demand, cost);
    solver.optimize()?;
    let (u, v) = solver.potentials();

    let mut plan = Mat::zeros(m, n);
    for &(i, j) in &solver.basis {
        plan[(i, j)] = solver.flow[i * n + j].max(0.0);
    }
    let cost_value: f64 = (0..m)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| cost[(i, j)] * plan[(i, j)])
        .sum();
    let value = dot(supply, &u) + dot(demand, &v);
    Ok((
        TransportPlan {
            plan,
            cost: cost_value,
        },
        DualCertificate { f: u, g: v, value },
    ))
}

struct Simplex<'a> {
    m: usize,
    n: usize,
    cost: &'a Mat,
    flow: Vec<f64>,
    basic: Vec<bool>,
    basis: Vec<(usize, usize)>,
}

const PRICING_TOL: f64 = 1e-12;

impl<'a> Simplex<'a> {
    fn northwest(supply: &[f64], demand: &[f64], cost: &'a Mat) -> Self {
        let (m, n) = (supply.len(), demand.len());
        let mut s = supply.to_vec();
        let mut d = demand.to_vec();
        let mut flow = vec![0.0; m * n];
        let mut basic = vec![false; m * n];
        let mut basis = Vec::with_capacity(m + n - 1);
        let (mut i, mut j) = (0, 0);
        loop {
            let amount = s[i].min(d[j]).max(0.0);
            flow[i * n + j] = amount;
            basic[i * n + j] = true;
            basis.push((i, j));
            s[i] -= amount;
            d[j] -= amount;
            if i == m - 1 && j == n - 1 {
                break;
            }
            // Advance exactly one index so the staircase has m + n − 1 cells.
            if i == m - 1 {
                j += 1;
            } else if j == n - 1 || s[i] <= d[j] {
                i += 1;
            } else {
                j += 1;
            }
        }
        Simplex {
            m,
            n,
            cost,
            flow,
            basic,
            basis,
        }
    }

    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        // Nodes 0..m are rows, m..m+n are columns; edges carry the basis cell.
        let mut adj = vec![Vec::new(); self.m + self.n];
        for &(i, j) in &self.basis {
            adj[i].push((self.m + j, i * self.n + j));
            adj[self.m + j].push((i, i * self.n + j));
        }
        adj
    }

    fn potentials(&self) -> (Vec<f64>, Vec<f64>) {
        let adj = self.adjacency();
        let mut pot = vec![f64::NAN; self.m + self.n];
        pot[0] = 0.0;
        let mut queue = VecDeque::from([0usize]);
        while let Some(node) = queue.pop_front() {
            for &(next, cell) in &adj[node] {
                if pot[next].is_nan() {
                    let c = self.cost.as_slice()[cell];
                    pot[next] = c - pot[node];
                    queue.push_back(next);
                }
            }
        }
        let v = pot.split_off(self.m);
        (pot, v)
    }

    /// Path of basis cells from row node `i` to column node `m + j`.
    fn tree_path(&self, i: usize, j: usize) -> Vec<usize> {
        let adj = self.adjacency();
        let target = self.m + j;
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; self.m + self.n];
        let mut seen = vec![false; self.m + self.n];
        seen[i] = true;
        let mut queue = VecDeque::from([i]);
        while let Some(node) = queue.pop_front() {
            if node == target {
                break;
            }
            for &(next, cell) in &adj[node] {
                if !seen[next] {
                    seen[next] = true;
                    parent[next] = Some((node, cell));
                    queue.push_back(next);
                }
            }
        }
        let mut path = Vec::new();
        let mut node = target;
        while let Some((prev, cell)) = parent[node] {
            path.push(cell);
            node = prev;
        }
        path.reverse();
        path
    }

    fn optimize(&mut self) -> Result<()> {
        let (m, n) = (self.m, self.n);
        let max_pivots = 50 * (m * n) + 1000;
        let mut degenerate_run = 0usize;
        for _ in 0..max_pivots {
            let (u, v) = self.potentials();
            let bland = degenerate_run > m + n;
            let mut entering: Option<(usize, f64)> = None;
            for (i, ui) in u.iter().enumerate() {
                for (j, vj) in v.iter().enumerate() {
                    let cell = i * n + j;
                    if self.basic[cell] {
                        continue;
                    }
                    let reduced = self.cost[(i, j)] - ui - vj;
                    if reduced < -PRICING_TOL {
                        match entering {
                            None => entering = Some((cell, reduced)),
                            Some((_, best)) if !bland && reduced < best => {
                                entering = Some((cell, reduced))
                            }
                            _ => {}
                        }
                    }
                }
                if bland && entering.is_some() {
                    break;
                }
            }
            let Some((cell, _)) = entering else {
                return Ok(());
            };
            let (ei, ej) = (cell / n, cell % n);
            let path = self.tree_path(ei, ej);
            // Cells at even positions of the path lose flow, odd positions gain.
            let mut theta = f64::INFINITY;
            let mut leaving = usize::MAX;
            for &c in path.iter().step_by(2) {
                let f = self.flow[c];
                if f < theta || (f == theta && c < leaving) {
                    theta = f;
                    leaving = c;
                }
            }
            let theta = theta.max(0.0);
            for (k, &c) in path.iter().enumerate() {
                if k % 2 == 0 {
                    self.flow[c] -= theta;
                } else {
                    self.flow[c] += theta;
                }
            }
            self.flow[cell] = theta;
            self.flow[leaving] = 0.0;
            self.basic[leaving] = false;
            self.basic[cell] = true;
            let pos = self
                .basis
                .iter()
                .position(|&(a, b)| a * n + b == leaving)
                .expect("leaving cell is basic");
            self.basis[pos] = (ei, ej);
            if theta > 0.0 {
                degenerate_run = 0;
            } else {
                degenerate_run += 1;
            }
        }
        Err(Error::NoConvergence(format!(
            "transport simplex ({m}x{n}) after {max_pivots} pivots"
        )))
    }
}

/// MMD over linear functionals of operator norm at most one: the distance
/// between the two means.
pub fn mmd_linear(p: &MassDistribution, q: &MassDistribution) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::dim(
            "mmd_linear",
            format!("support dimensions {} and {}", p.dim(), q.dim()),
        ));
    }
    Ok(euclidean(&p.mean(), &q.mean()))
}

/// Largest feature count accepted by [`assignment_lp_bruteforce`].
pub const BRUTE_MAX_FEATURES: usize = 8;
/// Largest prototype count accepted by [`assignment_lp_bruteforce`].
pub const BRUTE_MAX_PROTOTYPES: usize = 5;

/// Solves the histogram LP by enumerating all `mⁿ` feature-to-prototype
/// assignments. Among maximizers the lexicographically first assignment
/// wins, which is the lowest prototype index for every tied feature.
pub fn assignment_lp_bruteforce(
    features: &FeatureMap,
    prototypes: &PrototypeMatrix,
) -> Result<(Histogram, TransportPlan)> {
    let x = features.features();
    let v = prototypes.vectors();
    let (n, m) = (x.cols(), v.cols());
    if n > BRUTE_MAX_FEATURES || m > BRUTE_MAX_PROTOTYPES {
        return Err(Error::contract(format!(
            "brute force limited to n <= {BRUTE_MAX_FEATURES}, m <= {BRUTE_MAX_PROTOTYPES} (got n = {n}, m = {m})"
        )));
    }
    if x.rows() != v.rows() {
        return Err(Error::dim(
            "assignment_lp_bruteforce",
            format!("features of dim {} vs prototypes of dim {}", x.rows(), v.rows()),
        ));
    }
    let scores = v.transpose().matmul(x)?;
    let inv_n = 1.0 / n as f64;

    let mut assign = vec![0usize; n];
    let mut best = vec![0usize; n];
    let mut best_value = f64::NEG_INFINITY;
    loop {
        let value: f64 = assign
            .iter()
            .enumerate()
            .map(|(j, &i)| scores[(i, j)] * inv_n)
            .sum();
        if value > best_value {
            best_value = value;
            best.copy_from_slice(&assign);
        }
        // Odometer increment with feature 0 most significant.
        let mut pos = n;
        loop {
            if pos == 0 {
                let (hist, mut plan) = counting_histogram(&best, m)?;
                plan.cost = -best_value;
                return Ok((hist, plan));
            }
            pos -= 1;
            assign[pos] += 1;
            if assign[pos] < m {
                break;
            }
            assign[pos] = 0;
        }
    }
}

/// Objective `Σ νᵢᵀxⱼ πᵢⱼ` of the histogram LP at an arbitrary plan.
pub fn assignment_objective(features: &Mat, prototypes: &Mat, plan: &Mat) -> Result<f64> {
    let scores = prototypes.transpose().matmul(features)?;
    if scores.shape() != plan.shape() {
        return Err(Error::dim("assignment_objective", "plan shape"));
    }
    Ok(scores
        .as_slice()
        .iter()
        .zip(plan.as_slice())
        .map(|(s, p)| s * p)
        .sum())
}

/// True when every support point has Euclidean norm at most `radius`.
pub fn within_ball(dist: &MassDistribution, radius: f64) -> bool {
    (0..dist.len()).all(|k| norm(&dist.support.col(k)) <= radius)
}
