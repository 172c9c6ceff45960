use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Mat;

/// Minimum number of random probe directions per check.
pub const MIN_PROBES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub probe_count: usize,
}

/// `|a − n| / max(1e-12, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-12)
}

/// Compares the gradient returned by `f` against central differences along
/// [`MIN_PROBES`] random directions.
///
/// `f` returns the scalar value and its gradient at the given point. Entry
/// `k` is perturbed by `h_k·u_k` with `h_k = 1e-5·(1 + |x_k|)` and `u ~ N(0, I)`.
pub fn grad_check<F>(f: F, point: &Mat, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&Mat) -> Result<(f64, Mat)>,
{
    grad_check_with(f, point, MIN_PROBES, seed)
}

pub fn grad_check_with<F>(f: F, point: &Mat, probes: usize, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&Mat) -> Result<(f64, Mat)>,
{
    if probes == 0 {
        return Err(Error::contract("grad_check needs at least one probe"));
    }
    let (value, grad) = f(point)?;
    if !value.is_finite() || !grad.is_finite() {
        return Err(Error::NonFinite("grad_check: function at base point".into()));
    }
    if grad.shape() != point.shape() {
        return Err(Error::dim(
            "grad_check",
            format!("gradient {:?} for point {:?}", grad.shape(), point.shape()),
        ));
    }
    let steps = point.map(|v| 1e-5 * (1.0 + v.abs()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel_error: f64 = 0.0;
    for _ in 0..probes {
        let dir = Mat::from_fn(point.rows(), point.cols(), |i, j| {
            let u: f64 = StandardNormal.sample(&mut rng);
            u * steps[(i, j)]
        });
        let plus = point.add(&dir)?;
        let minus = point.sub(&dir)?;
        let (fp, _) = f(&plus)?;
        let (fm, _) = f(&minus)?;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite("grad_check: perturbed evaluation".into()));
        }
        let numeric = (fp - fm) / 2.0;
        let analytic: f64 = grad
            .as_slice()
            .iter()
            .zip(dir.as_slice())
            .map(|(g, d)| g * d)
            .sum();
        max_rel_error = max_rel_error.max(relative_error(analytic, numeric));
    }
    Ok(GradCheckReport {
        max_rel_error,
        probe_count: probes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrong_gradient_is_flagged() {
        let x = Mat::filled(2, 2, 0.7);
        let report = grad_check(|p| Ok((p.sum(), Mat::filled(2, 2, 2.0))), &x, 1).unwrap();
        assert!((report.max_rel_error - 1.0 / 3.0).abs() < 1e-6);
        assert_eq!(report.probe_count, MIN_PROBES);
    }

    #[test]
    fn half_frobenius_gradient_is_point() {
        let x = Mat::from_fn(3, 2, |i, j| i as f64 - 0.5 * j as f64 + 0.1);
        let f = |p: &Mat| Ok((0.5 * p.frobenius_norm().powi(2), p.clone()));
        let report = grad_check(f, &x, 2).unwrap();
        assert!(report.max_rel_error < 1e-9, "{report:?}");
    }

    #[test]
    fn non_finite_function_errors() {
        let x = Mat::filled(1, 1, 1.0);
        let r = grad_check(|p| Ok((f64::NAN, p.clone())), &x, 0);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
