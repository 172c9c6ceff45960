//! Dense matrices, SPD solves, ridge fits and reverse-mode gradients.

mod gradcheck;
mod linalg;
mod mat;
pub mod tape;

pub use gradcheck::{grad_check, grad_check_with, relative_error, GradCheckReport, MIN_PROBES};
pub use linalg::{
    ridge_fit, ridge_fit_dual, ridge_fit_primal, softmax_cols, solve_spd, Cholesky, RidgeConfig,
};
pub use mat::{dot, euclidean, norm, Mat};
pub use tape::{Gradients, Tape, Var};
