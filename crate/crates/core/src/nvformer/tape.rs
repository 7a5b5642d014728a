//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters are
//! borrowed from the caller and only materialized as gradients.

use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// Boolean attention mask: `true` where a query may attend to a key.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, allowed: Vec<bool>) -> Self {
        assert_eq!(allowed.len(), rows * cols);
        Mask {
            rows,
            cols,
            allowed,
        }
    }

    /// Query `t` sees keys `0..=t`.
    pub fn causal(n: usize) -> Self {
        let allowed = (0..n * n).map(|i| i % n <= i / n).collect();
        Mask::new(n, n, allowed)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn allows(&self, r: usize, c: usize) -> bool {
        self.allowed[r * self.cols + c]
    }
}

enum Op {
    Const,
    Param(usize),
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    /// `a + 1×c` row broadcast
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    Softmax {
        x: Var,
        fallback: Vec<bool>,
    },
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    MulConst(Var, Matrix),
    /// `Σ_k w_k · inputs[k] + b` with scalar weights from a `1×p` row.
    Mix {
        inputs: Vec<Matrix>,
        w: Var,
        b: Var,
    },
    Mse(Var, Matrix),
}

struct Node {
    value: Matrix,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p [Matrix],
    param_vars: Vec<Option<Var>>,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [Matrix]) -> Self {
        Tape {
            params,
            param_vars: vec![None; params.len()],
            nodes: Vec::with_capacity(256),
        }
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        match self.nodes[v.0].op {
            Op::Param(i) => &self.params[i],
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Const)
    }

    pub fn param(&mut self, index: usize) -> Var {
        if let Some(v) = self.param_vars[index] {
            return v;
        }
        let v = self.push(Matrix::zeros(0, 0), Op::Param(index));
        self.param_vars[index] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul_t(self.value(b));
        self.push(out, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let mut out = self.value(a).clone();
        let bias = self.value(row);
        assert_eq!(bias.shape(), (1, out.cols()), "add_row bias shape");
        for r in 0..out.rows() {
            for (x, b) in out.row_mut(r).iter_mut().zip(bias.as_slice()) {
                *x += b;
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| x * k);
        self.push(out, Op::Scale(a, k))
    }

    /// tanh approximation of GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self
            .value(a)
            .map(|x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh()));
        self.push(out, Op::Gelu(a))
    }

    /// Row-wise layer normalization followed by the affine `γ`, `β` (both `1×c`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xm = self.value(x);
        let (rows, cols) = xm.shape();
        let mut xhat = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xm.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for (o, v) in xhat.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
        }
        let g = self.value(gamma).as_slice();
        let b = self.value(beta).as_slice();
        let mut out = xhat.clone();
        for r in 0..rows {
            for ((o, gj), bj) in out.row_mut(r).iter_mut().zip(g).zip(b) {
                *o = *o * gj + bj;
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Row-wise softmax. Masked entries get zero weight; a row with every
    /// entry masked falls back to uniform weights.
    pub fn softmax(&mut self, x: Var, mask: Option<&Mask>) -> Var {
        let xm = self.value(x);
        let (rows, cols) = xm.shape();
        if let Some(m) = mask {
            assert_eq!(m.shape(), (rows, cols), "mask shape");
        }
        let mut out = Matrix::zeros(rows, cols);
        let mut fallback = vec![false; rows];
        for r in 0..rows {
            let row = xm.row(r);
            let allowed = |c: usize| mask.is_none_or(|m| m.allows(r, c));
            let max = (0..cols)
                .filter(|&c| allowed(c))
                .map(|c| row[c])
                .fold(f64::NEG_INFINITY, f64::max);
            let o = out.row_mut(r);
            if max == f64::NEG_INFINITY {
                fallback[r] = true;
                o.iter_mut().for_each(|v| *v = 1.0 / cols as f64);
                continue;
            }
            let mut sum = 0.0;
            for c in 0..cols {
                if allowed(c) {
                    o[c] = (row[c] - max).exp();
                    sum += o[c];
                }
            }
            o.iter_mut().for_each(|v| *v /= sum);
        }
        self.push(out, Op::Softmax { x, fallback })
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let out = self.value(a).slice_cols(start, width);
        self.push(out, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Matrix::concat_cols(&mats);
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Matrix::concat_rows(&mats);
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    /// Elementwise product with a constant (dropout masks).
    pub fn mul_const(&mut self, a: Var, k: Matrix) -> Var {
        let av = self.value(a);
        assert_eq!(av.shape(), k.shape());
        let mut out = av.clone();
        for (o, m) in out.as_mut_slice().iter_mut().zip(k.as_slice()) {
            *o *= m;
        }
        self.push(out, Op::MulConst(a, k))
    }

    pub fn mix(&mut self, inputs: Vec<Matrix>, w: Var, b: Var) -> Var {
        let wv = self.value(w);
        assert_eq!(wv.shape(), (1, inputs.len()), "mix weight shape");
        let bias = self.value(b).get(0, 0);
        let (rows, cols) = inputs[0].shape();
        let mut out = Matrix::filled(rows, cols, bias);
        for (k, x) in inputs.iter().enumerate() {
            let wk = wv.get(0, k);
            for (o, v) in out.as_mut_slice().iter_mut().zip(x.as_slice()) {
                *o += wk * v;
            }
        }
        self.push(out, Op::Mix { inputs, w, b })
    }

    /// Mean squared error against a constant target, as a `1×1` value.
    pub fn mse(&mut self, pred: Var, target: Matrix) -> Var {
        let p = self.value(pred);
        assert_eq!(p.shape(), target.shape(), "mse shape");
        let n = p.len() as f64;
        let loss = p
            .as_slice()
            .iter()
            .zip(target.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        self.push(Matrix::filled(1, 1, loss), Op::Mse(pred, target))
    }

    /// Gradients of the scalar `loss` with respect to every parameter
    /// (`None` for parameters the loss does not touch).
    pub fn backward(&self, loss: Var) -> Vec<Option<Matrix>> {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        let mut param_grads: Vec<Option<Matrix>> = vec![None; self.params.len()];

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Const => {}
                Op::Param(p) => param_grads[*p] = Some(g),
                Op::MatMul(a, b) => {
                    let da = g.matmul_t(self.value(*b));
                    let db = self.value(*a).t_matmul(&g);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MatMulT(a, b) => {
                    let da = g.matmul(self.value(*b));
                    let db = g.t_matmul(self.value(*a));
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::AddRow(a, b) => {
                    let mut db = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (d, x) in db.as_mut_slice().iter_mut().zip(g.row(r)) {
                            *d += x;
                        }
                    }
                    accumulate(&mut grads, *b, db);
                    accumulate(&mut grads, *a, g);
                }
                Op::Scale(a, k) => {
                    let k = *k;
                    accumulate(&mut grads, *a, g.map(|x| x * k));
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let mut da = g;
                    for (d, &x) in da.as_mut_slice().iter_mut().zip(x.as_slice()) {
                        let u = GELU_C * (x + GELU_K * x * x * x);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * GELU_K * x * x);
                        *d *= 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gv = self.value(*gamma).as_slice();
                    let (rows, cols) = g.shape();
                    let mut dgamma = Matrix::zeros(1, cols);
                    let mut dbeta = Matrix::zeros(1, cols);
                    let mut dx = Matrix::zeros(rows, cols);
                    let n = cols as f64;
                    for r in 0..rows {
                        let gr = g.row(r);
                        let xr = xhat.row(r);
                        let mut sum_d = 0.0;
                        let mut sum_dx = 0.0;
                        for j in 0..cols {
                            dgamma.as_mut_slice()[j] += gr[j] * xr[j];
                            dbeta.as_mut_slice()[j] += gr[j];
                            let d = gr[j] * gv[j];
                            sum_d += d;
                            sum_dx += d * xr[j];
                        }
                        let is = inv_std[r];
                        for (j, o) in dx.row_mut(r).iter_mut().enumerate() {
                            let d = gr[j] * gv[j];
                            *o = is / n * (n * d - sum_d - xr[j] * sum_dx);
                        }
                    }
                    accumulate(&mut grads, *gamma, dgamma);
                    accumulate(&mut grads, *beta, dbeta);
                    accumulate(&mut grads, *x, dx);
                }
                Op::Softmax { x, fallback } => {
                    let y = &self.nodes[i].value;
                    let mut dx = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        if fallback[r] {
                            continue;
                        }
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let s: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for (o, (yv, gv)) in dx.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                            *o = yv * (gv - s);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::SliceCols(a, start) => {
                    let (rows, cols) = self.value(*a).shape();
                    let mut da = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        da.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.value(*p).cols();
                        accumulate(&mut grads, *p, g.slice_cols(start, w));
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let h = self.value(*p).rows();
                        accumulate(&mut grads, *p, g.slice_rows(start, h));
                        start += h;
                    }
                }
                Op::MulConst(a, k) => {
                    let mut da = g;
                    for (d, m) in da.as_mut_slice().iter_mut().zip(k.as_slice()) {
                        *d *= m;
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::Mix { inputs, w, b } => {
                    let mut dw = Matrix::zeros(1, inputs.len());
                    for (k, x) in inputs.iter().enumerate() {
                        dw.as_mut_slice()[k] = crate::tensor::dot(g.as_slice(), x.as_slice());
                    }
                    accumulate(&mut grads, *w, dw);
                    accumulate(&mut grads, *b, Matrix::filled(1, 1, g.sum()));
                }
                Op::Mse(pred, target) => {
                    let p = self.value(*pred);
                    let k = 2.0 * g.get(0, 0) / p.len() as f64;
                    let mut dp = p.clone();
                    for (d, t) in dp.as_mut_slice().iter_mut().zip(target.as_slice()) {
                        *d = k * (*d - t);
                    }
                    accumulate(&mut grads, *pred, dp);
                }
            }
        }
        param_grads
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // central differences over every entry of every parameter
    fn check(params: Vec<Matrix>, f: impl Fn(&mut Tape) -> Var, tol: f64) {
        let tape_grads = {
            let mut tape = Tape::new(&params);
            let loss = f(&mut tape);
            tape.backward(loss)
        };
        let h = 1e-5;
        for (pi, p) in params.iter().enumerate() {
            for e in 0..p.len() {
                let eval = |delta: f64| {
                    let mut ps = params.clone();
                    ps[pi].as_mut_slice()[e] += delta;
                    let mut tape = Tape::new(&ps);
                    let l = f(&mut tape);
                    tape.value(l).get(0, 0)
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let an = tape_grads[pi].as_ref().map_or(0.0, |g| g.as_slice()[e]);
                assert!(
                    (fd - an).abs() <= tol * (1.0 + fd.abs()),
                    "param {pi}[{e}]: fd {fd} vs analytic {an}"
                );
            }
        }
    }

    fn mat(rows: usize, cols: usize, seed: f64) -> Matrix {
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols)
                .map(|i| ((i as f64 + 1.0) * seed).sin())
                .collect(),
        )
    }

    #[test]
    fn matmul_chain_gradients() {
        let params = vec![mat(3, 4, 0.7), mat(4, 2, 1.3), mat(1, 2, 0.4)];
        check(
            params,
            |t| {
                let a = t.param(0);
                let b = t.param(1);
                let bias = t.param(2);
                let ab = t.matmul(a, b);
                let y = t.add_row(ab, bias);
                let y = t.gelu(y);
                t.mse(y, mat(3, 2, 2.1))
            },
            1e-6,
        );
    }

    #[test]
    fn attention_block_gradients() {
        let params = vec![mat(4, 6, 0.3), mat(5, 6, 0.9), mat(1, 6, 1.7), mat(1, 6, 0.2)];
        let mask = Mask::new(4, 5, (0..20).map(|i| i % 3 != 0).collect());
        check(
            params,
            |t| {
                let q = t.param(0);
                let k = t.param(1);
                let scores = t.matmul_t(q, k);
                let scores = t.scale(scores, 0.5);
                let p = t.softmax(scores, Some(&mask));
                let v = t.slice_cols(k, 1, 4);
                let out = t.matmul(p, v);
                let both = t.concat_cols(&[out, out]);
                let stacked = t.concat_rows(&[both, both]);
                let g = t.param(2);
                let b = t.param(3);
                let n = t.slice_cols(stacked, 0, 6);
                let n = t.layer_norm(n, g, b);
                t.mse(n, mat(8, 6, 0.5))
            },
            1e-6,
        );
    }

    #[test]
    fn mix_and_mask_gradients() {
        let inputs = vec![mat(3, 2, 0.1), mat(3, 2, 0.2), mat(3, 2, 0.3)];
        let params = vec![mat(1, 3, 0.8), mat(1, 1, 0.5)];
        check(
            params,
            |t| {
                let w = t.param(0);
                let b = t.param(1);
                let y = t.mix(inputs.clone(), w, b);
                let y = t.mul_const(y, mat(3, 2, 3.3));
                t.mse(y, Matrix::zeros(3, 2))
            },
            1e-6,
        );
    }

    #[test]
    fn softmax_rows_and_fallback() {
        let params: Vec<Matrix> = vec![];
        let mut t = Tape::new(&params);
        let x = t.constant(mat(3, 4, 1.1));
        let mut allowed = vec![true; 12];
        allowed[8..12].iter_mut().for_each(|a| *a = false);
        allowed[1] = false;
        let mask = Mask::new(3, 4, allowed);
        let y = t.softmax(x, Some(&mask));
        let y = t.value(y);
        for r in 0..3 {
            assert!((y.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(y.get(0, 1), 0.0);
        assert!(y.row(2).iter().all(|&w| w == 0.25));
    }

    #[test]
    fn causal_mask_layout() {
        let m = Mask::causal(3);
        assert!(m.allows(0, 0) && !m.allows(0, 1) && m.allows(2, 1) && !m.allows(1, 2));
    }

    #[test]
    fn layer_norm_statistics() {
        let params: Vec<Matrix> = vec![Matrix::filled(1, 5, 1.0), Matrix::zeros(1, 5)];
        let mut t = Tape::new(&params);
        let x = t.constant(mat(4, 5, 2.3).map(|v| 3.0 * v + 7.0));
        let g = t.param(0);
        let b = t.param(1);
        let y = t.layer_norm(x, g, b);
        let y = t.value(y);
        for r in 0..4 {
            let row = y.row(r);
            let mean = row.iter().sum::<f64>() / 5.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }
}
