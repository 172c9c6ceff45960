use crate::error::{Error, Result};
use crate::tensor::Mat;

/// Cholesky factor `M = L·Lᵀ` of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    lower: Mat,
}

impl Cholesky {
    /// Only the lower triangle of `m` is read.
    pub fn factor(m: &Mat) -> Result<Self> {
        let n = m.rows();
        if m.cols() != n {
            return Err(Error::dim(
                "cholesky",
                format!("{}x{} is not square", m.rows(), m.cols()),
            ));
        }
        let mut l = Mat::zeros(n, n);
        for j in 0..n {
            let mut diag = m[(j, j)];
            for k in 0..j {
                diag -= l[(j, k)] * l[(j, k)];
            }
            if !(diag > 0.0) || !diag.is_finite() {
                return Err(Error::NotPositiveDefinite {
                    pivot: j,
                    value: diag,
                });
            }
            let ljj = diag.sqrt();
            l[(j, j)] = ljj;
            for i in (j + 1)..n {
                let mut s = m[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / ljj;
            }
        }
        Ok(Cholesky { lower: l })
    }

    pub fn dim(&self) -> usize {
        self.lower.rows()
    }

    /// Solves `M·X = B` by forward then backward substitution.
    pub fn solve(&self, b: &Mat) -> Result<Mat> {
        let n = self.dim();
        if b.rows() != n {
            return Err(Error::dim(
                "solve_spd",
                format!("system of order {n} with right-hand side {}x{}", b.rows(), b.cols()),
            ));
        }
        let l = &self.lower;
        let mut x = b.clone();
        for c in 0..b.cols() {
            for i in 0..n {
                let mut s = x[(i, c)];
                for k in 0..i {
                    s -= l[(i, k)] * x[(k, c)];
                }
                x[(i, c)] = s / l[(i, i)];
            }
            for i in (0..n).rev() {
                let mut s = x[(i, c)];
                for k in (i + 1)..n {
                    s -= l[(k, i)] * x[(k, c)];
                }
                x[(i, c)] = s / l[(i, i)];
            }
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("solve_spd".into()));
        }
        Ok(x)
    }

    pub fn lower(&self) -> &Mat {
        &self.lower
    }
}

/// Solves `M·X = B` for symmetric positive-definite `M`.
pub fn solve_spd(m: &Mat, b: &Mat) -> Result<Mat> {
    Cholesky::factor(m)?.solve(b)
}

/// Ridge (Tikhonov) weight shared by the closed-form fits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RidgeConfig {
    ridge_weight: f64,
}

impl RidgeConfig {
    pub fn new(ridge_weight: f64) -> Result<Self> {
        if !(ridge_weight > 0.0) || !ridge_weight.is_finite() {
            return Err(Error::contract(format!(
                "ridge weight must be positive and finite, got {ridge_weight}"
            )));
        }
        Ok(RidgeConfig { ridge_weight })
    }

    pub fn ridge_weight(&self) -> f64 {
        self.ridge_weight
    }
}

fn check_batch(z: &Mat, y: &Mat, op: &'static str) -> Result<()> {
    if z.cols() != y.cols() {
        return Err(Error::dim(
            op,
            format!("Z has {} columns, Y has {}", z.cols(), y.cols()),
        ));
    }
    Ok(())
}

/// Minimizer of `‖A·Z − Y‖²_F + ε‖A‖²_F` through the m×m normal equations:
/// `A = Y·Zᵀ·(Z·Zᵀ + εI)⁻¹`.
pub fn ridge_fit_primal(z: &Mat, y: &Mat, cfg: RidgeConfig) -> Result<Mat> {
    check_batch(z, y, "ridge_fit_primal")?;
    let gram = z.matmul(&z.transpose())?.add_diag(cfg.ridge_weight)?;
    let rhs = z.matmul(&y.transpose())?;
    Ok(solve_spd(&gram, &rhs)?.transpose())
}

/// Same minimizer through the B×B kernel system: `A = Y·(ZᵀZ + εI)⁻¹·Zᵀ`.
pub fn ridge_fit_dual(z: &Mat, y: &Mat, cfg: RidgeConfig) -> Result<Mat> {
    check_batch(z, y, "ridge_fit_dual")?;
    let kernel = z.transpose().matmul(z)?.add_diag(cfg.ridge_weight)?;
    // (ZᵀZ + εI) is symmetric, so Y·K⁻¹ = (K⁻¹·Yᵀ)ᵀ.
    let coef = solve_spd(&kernel, &y.transpose())?.transpose();
    coef.matmul(&z.transpose())
}

/// Picks the smaller of the two linear systems.
pub fn ridge_fit(z: &Mat, y: &Mat, cfg: RidgeConfig) -> Result<Mat> {
    if z.cols() < z.rows() {
        ridge_fit_dual(z, y, cfg)
    } else {
        ridge_fit_primal(z, y, cfg)
    }
}

/// Column-wise softmax of `temperature · S`, with max-subtraction.
///
/// A temperature of zero yields the uniform distribution in every column.
pub fn softmax_cols(s: &Mat, temperature: f64) -> Result<Mat> {
    if !(temperature >= 0.0) || !temperature.is_finite() {
        return Err(Error::contract(format!(
            "softmax temperature must be finite and >= 0, got {temperature}"
        )));
    }
    if !s.is_finite() {
        return Err(Error::NonFinite("softmax_cols input".into()));
    }
    let (m, n) = s.shape();
    let mut out = Mat::zeros(m, n);
    for j in 0..n {
        let max = (0..m).fold(f64::NEG_INFINITY, |acc, i| acc.max(s[(i, j)]));
        let mut total = 0.0;
        for i in 0..m {
            let e = (temperature * (s[(i, j)] - max)).exp();
            out[(i, j)] = e;
            total += e;
        }
        for i in 0..m {
            out[(i, j)] /= total;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_mat, rng};

    fn ridge(eps: f64) -> RidgeConfig {
        RidgeConfig::new(eps).unwrap()
    }

    /// Plain gradient descent on ‖AZ − Y‖² + ε‖A‖², independent of any solver.
    fn ridge_by_gradient_descent(z: &Mat, y: &Mat, eps: f64) -> Mat {
        let zzt = z.matmul(&z.transpose()).unwrap();
        let yzt = y.matmul(&z.transpose()).unwrap();
        // Lipschitz bound of the gradient: 2(‖ZZᵀ‖_F + ε) ≥ 2(λ_max + ε).
        let step = 1.0 / (2.0 * (zzt.frobenius_norm() + eps));
        let mut a = Mat::zeros(y.rows(), z.rows());
        for _ in 0..2_000_000 {
            let grad = a
                .matmul(&zzt)
                .unwrap()
                .sub(&yzt)
                .unwrap()
                .add(&a.scale(eps))
                .unwrap()
                .scale(2.0);
            if grad.frobenius_norm() < 1e-10 {
                return a;
            }
            a.add_scaled_assign(&grad, -step).unwrap();
        }
        panic!("gradient descent oracle did not converge");
    }

    #[test]
    fn solve_spd_identity_and_scaled() {
        let mut r = rng(1);
        let b = random_mat(&mut r, 4, 3);
        let x = solve_spd(&Mat::identity(4), &b).unwrap();
        assert!(x.rel_diff(&b).unwrap() < 1e-15);
        let x = solve_spd(&Mat::identity(3).scale(2.0), &Mat::identity(3)).unwrap();
        assert!(x.rel_diff(&Mat::identity(3).scale(0.5)).unwrap() < 1e-15);
    }

    #[test]
    fn solve_spd_residual_on_random_spd() {
        let mut r = rng(2);
        let a = random_mat(&mut r, 8, 8);
        let m = a.matmul(&a.transpose()).unwrap().add_diag(0.5).unwrap();
        let b = random_mat(&mut r, 8, 3);
        let x = solve_spd(&m, &b).unwrap();
        let resid = m.matmul(&x).unwrap().sub(&b).unwrap().frobenius_norm() / b.frobenius_norm();
        assert!(resid <= 1e-10, "residual {resid}");
    }

    #[test]
    fn solve_spd_names_failing_pivot() {
        let m = Mat::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        match solve_spd(&m, &Mat::identity(2)) {
            Err(Error::NotPositiveDefinite { pivot, .. }) => assert_eq!(pivot, 1),
            other => panic!("expected pivot failure, got {other:?}"),
        }
    }

    #[test]
    fn ridge_trivial_cases() {
        let a = ridge_fit_primal(&Mat::identity(2), &Mat::identity(2), ridge(1.0)).unwrap();
        assert!(a.rel_diff(&Mat::identity(2).scale(0.5)).unwrap() < 1e-15);
        let a = ridge_fit_dual(&Mat::identity(2), &Mat::identity(2), ridge(1.0)).unwrap();
        assert!(a.rel_diff(&Mat::identity(2).scale(0.5)).unwrap() < 1e-15);

        let mut r = rng(3);
        let z = random_mat(&mut r, 4, 5);
        let a = ridge_fit_primal(&z, &Mat::zeros(3, 5), ridge(0.1)).unwrap();
        assert_eq!(a.max_abs(), 0.0);
    }

    #[test]
    fn ridge_dual_single_column_is_scalar_inverse() {
        let z = Mat::column_vector(&[1.0, -2.0, 0.5]).unwrap();
        let y = Mat::column_vector(&[3.0, 4.0]).unwrap();
        let eps = 0.05;
        let a = ridge_fit_dual(&z, &y, ridge(eps)).unwrap();
        let denom = 1.0 + 4.0 + 0.25 + eps;
        let expected = y.matmul(&z.transpose()).unwrap().scale(1.0 / denom);
        assert!(a.rel_diff(&expected).unwrap() < 1e-14);
    }

    #[test]
    fn ridge_primal_matches_gradient_descent_oracle() {
        let mut r = rng(4);
        let z = random_mat(&mut r, 4, 6);
        let y = random_mat(&mut r, 3, 6);
        let oracle = ridge_by_gradient_descent(&z, &y, 0.05);
        let a = ridge_fit_primal(&z, &y, ridge(0.05)).unwrap();
        let max_err = a.sub(&oracle).unwrap().max_abs();
        assert!(max_err < 1e-6, "entrywise error {max_err}");
    }

    #[test]
    fn ridge_dual_matches_primal_wide() {
        let mut r = rng(5);
        let z = random_mat(&mut r, 64, 8);
        let y = random_mat(&mut r, 16, 8);
        let p = ridge_fit_primal(&z, &y, ridge(0.05)).unwrap();
        let d = ridge_fit_dual(&z, &y, ridge(0.05)).unwrap();
        assert!(d.rel_diff(&p).unwrap() <= 1e-9);
    }

    #[test]
    fn ridge_rejects_mismatch_and_bad_weight() {
        assert!(RidgeConfig::new(0.0).is_err());
        assert!(RidgeConfig::new(-1.0).is_err());
        let err = ridge_fit_primal(&Mat::zeros(2, 3), &Mat::zeros(2, 4), ridge(1.0));
        assert!(matches!(err, Err(Error::Dimension { .. })));
    }

    #[test]
    fn softmax_examples() {
        let s = Mat::filled(4, 1, 3.7);
        let p = softmax_cols(&s, 2.0).unwrap();
        for i in 0..4 {
            assert!((p[(i, 0)] - 0.25).abs() < 1e-15);
        }
        let s = Mat::from_rows(&[vec![0.0], vec![3f64.ln()]]).unwrap();
        let p = softmax_cols(&s, 1.0).unwrap();
        assert!((p[(0, 0)] - 0.25).abs() < 1e-15);
        assert!((p[(1, 0)] - 0.75).abs() < 1e-15);

        let mut r = rng(6);
        let s = random_mat(&mut r, 5, 3);
        let mut shifted = s.clone();
        for i in 0..5 {
            shifted[(i, 1)] += 12.5;
        }
        let a = softmax_cols(&s, 3.0).unwrap();
        let b = softmax_cols(&shifted, 3.0).unwrap();
        assert!(a.sub(&b).unwrap().max_abs() < 1e-14);
        assert!(softmax_cols(&s, -1.0).is_err());
        let u = softmax_cols(&s, 0.0).unwrap();
        assert!(u.as_slice().iter().all(|v| (*v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn softmax_survives_large_logits() {
        let s = Mat::from_rows(&[vec![1e4], vec![-1e4], vec![0.0]]).unwrap();
        let p = softmax_cols(&s, 1e3).unwrap();
        assert!(p.is_finite());
        assert!((p[(0, 0)] - 1.0).abs() < 1e-15);
    }
}
