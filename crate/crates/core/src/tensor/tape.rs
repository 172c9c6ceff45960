//! Minimal reverse-mode differentiation over dense matrices.
//!
//! Every node stores its forward value; `Tape::backward` walks the nodes in
//! reverse creation order and accumulates adjoints. Nodes built only from
//! constants carry no adjoint and are skipped.

use crate::error::{Error, Result};
use crate::tensor::linalg::{softmax_cols, Cholesky};
use crate::tensor::Mat;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Adjoint rule of a user-defined node: maps the upstream gradient and the
/// parents' forward values to one gradient per parent.
pub type BackwardFn = Box<dyn Fn(&Mat, &[&Mat]) -> Vec<Mat>>;

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    AddDiag(Var),
    SolveSpd { system: Var, rhs: Var, factor: Cholesky },
    SoftmaxCols { input: Var, temperature: f64 },
    SelectCols { input: Var, idx: Vec<usize> },
    NormalizeCols { input: Var, norms: Vec<f64> },
    Sum(Var),
    Custom { parents: Vec<Var>, backward: BackwardFn },
}

struct Node {
    value: Mat,
    op: Op,
    tracked: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Columns with a norm below this are scaled as if their norm were this value.
pub const NORM_FLOOR: f64 = 1e-12;

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Mat, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// A differentiable input.
    pub fn var(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// An input that receives no gradient.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::MatMul(a, b), t))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::Add(a, b), t))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::Sub(a, b), t))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        let t = self.tracked(a);
        self.push(value, Op::Scale(a, s), t)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let t = self.tracked(a);
        self.push(value, Op::Transpose(a), t)
    }

    /// `a + shift·I`.
    pub fn add_diag(&mut self, a: Var, shift: f64) -> Result<Var> {
        let value = self.value(a).add_diag(shift)?;
        let t = self.tracked(a);
        Ok(self.push(value, Op::AddDiag(a), t))
    }

    /// `system⁻¹ · rhs` for a symmetric positive-definite `system`.
    ///
    /// The adjoint treats `system` as a general matrix, which is exact for
    /// any symmetric parametrization upstream.
    pub fn solve_spd(&mut self, system: Var, rhs: Var) -> Result<Var> {
        let factor = Cholesky::factor(self.value(system))?;
        let value = factor.solve(self.value(rhs))?;
        let t = self.tracked(system) || self.tracked(rhs);
        Ok(self.push(value, Op::SolveSpd { system, rhs, factor }, t))
    }

    pub fn softmax_cols(&mut self, input: Var, temperature: f64) -> Result<Var> {
        let value = softmax_cols(self.value(input), temperature)?;
        let t = self.tracked(input);
        Ok(self.push(value, Op::SoftmaxCols { input, temperature }, t))
    }

    pub fn select_cols(&mut self, input: Var, idx: &[usize]) -> Result<Var> {
        let value = self.value(input).select_cols(idx)?;
        let t = self.tracked(input);
        Ok(self.push(
            value,
            Op::SelectCols {
                input,
                idx: idx.to_vec(),
            },
            t,
        ))
    }

    /// Scales each column to unit Euclidean norm.
    pub fn normalize_cols(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let norms: Vec<f64> = (0..x.cols())
            .map(|j| {
                (0..x.rows())
                    .map(|i| x[(i, j)] * x[(i, j)])
                    .sum::<f64>()
                    .sqrt()
                    .max(NORM_FLOOR)
            })
            .collect();
        let value = Mat::from_fn(x.rows(), x.cols(), |i, j| x[(i, j)] / norms[j]);
        let t = self.tracked(input);
        self.push(value, Op::NormalizeCols { input, norms }, t)
    }

    /// Sum of all entries as a 1×1 matrix.
    pub fn sum(&mut self, input: Var) -> Var {
        let value = Mat::filled(1, 1, self.value(input).sum());
        let t = self.tracked(input);
        self.push(value, Op::Sum(input), t)
    }

    /// `wa·a + wb·b`.
    pub fn lincomb(&mut self, a: Var, wa: f64, b: Var, wb: f64) -> Result<Var> {
        let sa = self.scale(a, wa);
        let sb = self.scale(b, wb);
        self.add(sa, sb)
    }

    /// Records a node whose forward value and adjoint rule are supplied by the caller.
    pub fn custom(&mut self, parents: &[Var], value: Mat, backward: BackwardFn) -> Var {
        let t = parents.iter().any(|p| self.tracked(*p));
        self.push(
            value,
            Op::Custom {
                parents: parents.to_vec(),
                backward,
            },
            t,
        )
    }

    /// Adjoints of the 1×1 node `output` with respect to every tracked node.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).shape() != (1, 1) {
            return Err(Error::contract("backward needs a 1x1 output"));
        }
        let mut grads: Vec<Option<Mat>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Mat::filled(1, 1, 1.0));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let contributions: Vec<(Var, Mat)> = match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(upstream);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let mut out = Vec::with_capacity(2);
                    if self.tracked(*a) {
                        out.push((*a, upstream.matmul(&self.value(*b).transpose())?));
                    }
                    if self.tracked(*b) {
                        out.push((*b, self.value(*a).transpose().matmul(&upstream)?));
                    }
                    out
                }
                Op::Add(a, b) => vec![(*a, upstream.clone()), (*b, upstream)],
                Op::Sub(a, b) => vec![(*a, upstream.clone()), (*b, upstream.scale(-1.0))],
                Op::Scale(a, s) => vec![(*a, upstream.scale(*s))],
                Op::Transpose(a) => vec![(*a, upstream.transpose())],
                Op::AddDiag(a) => vec![(*a, upstream)],
                Op::SolveSpd {
                    system,
                    rhs,
                    factor,
                } => {
                    let d_rhs = factor.solve(&upstream)?;
                    let d_system = d_rhs.matmul(&node.value.transpose())?.scale(-1.0);
                    vec![(*system, d_system), (*rhs, d_rhs)]
                }
                Op::SoftmaxCols { input, temperature } => {
                    let p = &node.value;
                    let (m, n) = p.shape();
                    let mut ds = Mat::zeros(m, n);
                    for j in 0..n {
                        let inner: f64 = (0..m).map(|i| p[(i, j)] * upstream[(i, j)]).sum();
                        for i in 0..m {
                            ds[(i, j)] = temperature * p[(i, j)] * (upstream[(i, j)] - inner);
                        }
                    }
                    vec![(*input, ds)]
                }
                Op::SelectCols { input, idx } => {
                    let src = self.value(*input);
                    let mut dx = Mat::zeros(src.rows(), src.cols());
                    for (k, &j) in idx.iter().enumerate() {
                        for i in 0..src.rows() {
                            dx[(i, j)] += upstream[(i, k)];
                        }
                    }
                    vec![(*input, dx)]
                }
                Op::NormalizeCols { input, norms } => {
                    let u = &node.value;
                    let (r, c) = u.shape();
                    let mut dx = Mat::zeros(r, c);
                    for j in 0..c {
                        let proj: f64 = (0..r).map(|i| u[(i, j)] * upstream[(i, j)]).sum();
                        for i in 0..r {
                            dx[(i, j)] = (upstream[(i, j)] - u[(i, j)] * proj) / norms[j];
                        }
                    }
                    vec![(*input, dx)]
                }
                Op::Sum(input) => {
                    let (r, c) = self.value(*input).shape();
                    vec![(*input, Mat::filled(r, c, upstream[(0, 0)]))]
                }
                Op::Custom { parents, backward } => {
                    let values: Vec<&Mat> = parents.iter().map(|p| self.value(*p)).collect();
                    let gs = backward(&upstream, &values);
                    if gs.len() != parents.len() {
                        return Err(Error::contract(
                            "custom adjoint returned the wrong number of gradients",
                        ));
                    }
                    parents.iter().copied().zip(gs).collect()
                }
            };
            for (parent, g) in contributions {
                if !self.tracked(parent) {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_scaled_assign(&g, 1.0)?,
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    /// Gradient with respect to a leaf; `None` when the output does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient with respect to `v`, zeros when there is no dependency.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Mat {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = tape.value(v).shape();
                Mat::zeros(r, c)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use crate::testutil::{random_mat, rng};

    #[test]
    fn sum_of_entries_has_unit_gradient() {
        let mut r = rng(10);
        let x = random_mat(&mut r, 3, 4);
        let report = grad_check(
            |p| {
                let mut t = Tape::new();
                let v = t.var(p.clone());
                let s = t.sum(v);
                let g = t.backward(s)?;
                Ok((t.value(s)[(0, 0)], g.wrt(&t, v)))
            },
            &x,
            7,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-10, "{report:?}");
    }

    #[test]
    fn half_squared_norm_has_identity_gradient() {
        let mut r = rng(11);
        let x = random_mat(&mut r, 3, 3);
        let mut t = Tape::new();
        let v = t.var(x.clone());
        let vt = t.transpose(v);
        let sq = t.matmul(vt, v).unwrap();
        // trace(XᵀX)/2 via Σ diag: select the diagonal through a custom node.
        let value = Mat::filled(1, 1, 0.5 * x.frobenius_norm().powi(2));
        let half = t.custom(
            &[sq],
            value,
            Box::new(|up, vals| {
                let n = vals[0].rows();
                vec![Mat::identity(n).scale(0.5 * up[(0, 0)])]
            }),
        );
        let g = t.backward(half).unwrap();
        assert!(g.wrt(&t, v).rel_diff(&x).unwrap() < 1e-14);
    }

    #[test]
    fn composite_graph_passes_grad_check() {
        let mut r = rng(12);
        let a = random_mat(&mut r, 4, 5);
        let b = random_mat(&mut r, 3, 5);
        let f = |p: &Mat| -> crate::Result<(f64, Mat)> {
            let mut t = Tape::new();
            let z = t.var(p.clone());
            let y = t.constant(b.clone());
            let zt = t.transpose(z);
            let gram = t.matmul(z, zt)?;
            let m = t.add_diag(gram, 0.3)?;
            let yt = t.transpose(y);
            let rhs = t.matmul(z, yt)?;
            let sol = t.solve_spd(m, rhs)?;
            let st = t.transpose(sol);
            let pred = t.matmul(st, z)?;
            let sm = t.softmax_cols(pred, 2.0)?;
            let sel = t.select_cols(sm, &[4, 0, 0, 2])?;
            let nrm = t.normalize_cols(sel);
            let sq = t.custom(
                &[nrm],
                Mat::filled(1, 1, t.value(nrm).as_slice().iter().map(|v| v.powi(3)).sum()),
                Box::new(|up, vals| vec![vals[0].map(|v| 3.0 * v * v * up[(0, 0)])]),
            );
            let g = t.backward(sq)?;
            Ok((t.value(sq)[(0, 0)], g.wrt(&t, z)))
        };
        let report = grad_check(f, &a, 21).unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(Mat::identity(2));
        let v = t.var(Mat::filled(2, 2, 1.0));
        let p = t.matmul(c, v).unwrap();
        let s = t.sum(p);
        let g = t.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert!(g.get(v).is_some());
        assert!(t.backward(p).is_err());
    }
}
