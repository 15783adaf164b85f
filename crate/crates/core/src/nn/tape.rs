//! Reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters are
//! pulled in from a [`Params`] store once per tape; [`Tape::backward`]
//! returns one gradient per parameter.

use std::collections::HashMap;

use super::matrix::{dot, sigmoid, Matrix};
use super::params::{ParamId, Params};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScaleRows(Var, Var),
    Scale(Var, f64),
    OneMinus(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Log(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    Rows(Var, Vec<usize>),
    MeanRows(Var),
    MaxCols(Var, Vec<usize>),
    Pick(Var, Vec<(usize, usize)>),
    Sum(Var),
    ScatterCols(Var, Vec<usize>),
    Mask(Var, Matrix),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Per-parameter gradients, shaped like the parameters.
#[derive(Debug, Clone)]
pub struct Grads(pub Vec<Matrix>);

impl Grads {
    pub fn zeros_like(params: &Params) -> Self {
        Grads(params.iter().map(|(_, m)| Matrix::zeros(m.rows, m.cols)).collect())
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.0[id.0]
    }

    pub fn accumulate(&mut self, other: &Grads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.0 {
            for x in &mut g.data {
                *x *= s;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(Matrix::norm_sq).sum::<f64>().sqrt()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.data[0]
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, params: &Params, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(params.get(id).clone(), Op::Param(id));
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// `x · wᵀ`: applies a weight stored as `out × in` to row vectors.
    pub fn matmul_t(&mut self, x: Var, w: Var) -> Var {
        let out = self.value(x).matmul_t(self.value(w));
        self.push(out, Op::MatMulT(x, w))
    }

    /// Affine map `x · wᵀ + b` with `b` a `1 × out` row broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xw = self.matmul_t(x, w);
        self.add_row(xw, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(out, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let av = self.value(a);
        let rv = self.value(row);
        assert_eq!(rv.rows, 1, "add_row expects a single row");
        assert_eq!(av.cols, rv.cols, "add_row width");
        let mut out = av.clone();
        for r in 0..out.rows {
            for (o, b) in out.row_mut(r).iter_mut().zip(&rv.data) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(out, Op::Mul(a, b))
    }

    /// Multiplies row `r` of `a` by `s[r]`; `s` is `n × 1`.
    pub fn scale_rows(&mut self, a: Var, s: Var) -> Var {
        let av = self.value(a);
        let sv = self.value(s);
        assert_eq!((sv.rows, sv.cols), (av.rows, 1), "scale_rows shape");
        let mut out = av.clone();
        for r in 0..out.rows {
            let k = sv.data[r];
            for o in out.row_mut(r) {
                *o *= k;
            }
        }
        self.push(out, Op::ScaleRows(a, s))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| x * k);
        self.push(out, Op::Scale(a, k))
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| 1.0 - x);
        self.push(out, Op::OneMinus(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = Matrix::zeros(av.rows, av.cols);
        for r in 0..av.rows {
            out.row_mut(r).copy_from_slice(&super::matrix::softmax(av.row(r)));
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = Matrix::zeros(av.rows, av.cols);
        for r in 0..av.rows {
            out.row_mut(r).copy_from_slice(&super::matrix::log_softmax(av.row(r)));
        }
        self.push(out, Op::LogSoftmaxRows(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Log(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let pv = self.value(p);
                assert_eq!(pv.rows, rows, "concat_cols row count");
                out.row_mut(r)[off..off + pv.cols].copy_from_slice(pv.row(r));
                off += pv.cols;
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols, cols, "concat_rows width");
            data.extend_from_slice(&pv.data);
            rows += pv.rows;
        }
        self.push(Matrix::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        assert!(start + len <= av.cols, "slice_cols out of range");
        let mut out = Matrix::zeros(av.rows, len);
        for r in 0..av.rows {
            out.row_mut(r).copy_from_slice(&av.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols(a, start))
    }

    /// Gathers rows by index (embedding lookup).
    pub fn rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let av = self.value(a);
        let mut out = Matrix::zeros(idx.len(), av.cols);
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(av.row(i));
        }
        self.push(out, Op::Rows(a, idx.to_vec()))
    }

    pub fn row(&mut self, a: Var, i: usize) -> Var {
        self.rows(a, &[i])
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = Matrix::zeros(1, av.cols);
        for r in 0..av.rows {
            for (o, x) in out.data.iter_mut().zip(av.row(r)) {
                *o += x;
            }
        }
        let n = av.rows as f64;
        for o in &mut out.data {
            *o /= n;
        }
        self.push(out, Op::MeanRows(a))
    }

    /// Row-wise maximum as an `n × 1` column; the gradient flows to the
    /// first maximal entry of each row.
    pub fn max_cols(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = Matrix::zeros(av.rows, 1);
        let mut arg = Vec::with_capacity(av.rows);
        for r in 0..av.rows {
            let i = super::matrix::argmax(av.row(r));
            arg.push(i);
            out.data[r] = av.get(r, i);
        }
        self.push(out, Op::MaxCols(a, arg))
    }

    /// Picks entries `(row, col)` into a `k × 1` column.
    pub fn pick(&mut self, a: Var, at: &[(usize, usize)]) -> Var {
        let av = self.value(a);
        let data = at.iter().map(|&(r, c)| av.get(r, c)).collect::<Vec<_>>();
        let n = data.len();
        self.push(Matrix::from_vec(n, 1, data), Op::Pick(a, at.to_vec()))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Matrix::from_vec(1, 1, vec![s]), Op::Sum(a))
    }

    /// Scatters a `1 × T` row into a `1 × width` row, summing entries that
    /// share a target column.
    pub fn scatter_cols(&mut self, a: Var, targets: &[usize], width: usize) -> Var {
        let av = self.value(a);
        assert_eq!((av.rows, av.cols), (1, targets.len()), "scatter_cols shape");
        let mut out = Matrix::zeros(1, width);
        for (&t, &x) in targets.iter().zip(&av.data) {
            out.data[t] += x;
        }
        self.push(out, Op::ScatterCols(a, targets.to_vec()))
    }

    /// Element-wise product with a constant mask (dropout).
    pub fn mask(&mut self, a: Var, mask: Matrix) -> Var {
        let out = self.value(a).zip_map(&mask, |x, m| x * m);
        self.push(out, Op::Mask(a, mask))
    }

    /// Back-propagates from a `1 × 1` output.
    pub fn backward(&self, output: Var, params: &Params) -> Grads {
        assert_eq!(self.value(output).shape(), (1, 1), "backward expects a scalar output");
        let mut grads: Vec<Option<Matrix>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Matrix::filled(1, 1, 1.0));
        let mut out = Grads::zeros_like(params);

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let mut acc = |v: Var, delta: Matrix| match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.0[id.0].add_assign(&g),
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    acc(*a, g.matmul_t(bv));
                    acc(*b, av.t_matmul(&g));
                }
                Op::MatMulT(x, w) => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    acc(*x, g.matmul(wv));
                    acc(*w, g.t_matmul(xv));
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::AddRow(a, row) => {
                    let mut rg = Matrix::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (o, x) in rg.data.iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    acc(*a, g);
                    acc(*row, rg);
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    acc(*a, g.zip_map(bv, |x, y| x * y));
                    acc(*b, g.zip_map(av, |x, y| x * y));
                }
                Op::ScaleRows(a, s) => {
                    let av = self.value(*a);
                    let sv = self.value(*s);
                    let mut ga = g.clone();
                    let mut gs = Matrix::zeros(sv.rows, 1);
                    for r in 0..g.rows {
                        gs.data[r] = dot(g.row(r), av.row(r));
                        let k = sv.data[r];
                        for x in ga.row_mut(r) {
                            *x *= k;
                        }
                    }
                    acc(*a, ga);
                    acc(*s, gs);
                }
                Op::Scale(a, k) => acc(*a, g.map(|x| x * k)),
                Op::OneMinus(a) => acc(*a, g.map(|x| -x)),
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    acc(*a, g.zip_map(y, |gx, s| gx * s * (1.0 - s)));
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    acc(*a, g.zip_map(y, |gx, t| gx * (1.0 - t * t)));
                }
                Op::Relu(a) => {
                    let av = self.value(*a);
                    acc(*a, g.zip_map(av, |gx, x| if x > 0.0 { gx } else { 0.0 }));
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = Matrix::zeros(g.rows, g.cols);
                    for r in 0..g.rows {
                        let gy = dot(g.row(r), y.row(r));
                        for ((o, &gx), &p) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                            *o = p * (gx - gy);
                        }
                    }
                    acc(*a, ga);
                }
                Op::LogSoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = Matrix::zeros(g.rows, g.cols);
                    for r in 0..g.rows {
                        let gs: f64 = g.row(r).iter().sum();
                        for ((o, &gx), &lp) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                            *o = gx - lp.exp() * gs;
                        }
                    }
                    acc(*a, ga);
                }
                Op::Log(a) => {
                    let av = self.value(*a);
                    acc(*a, g.zip_map(av, |gx, x| gx / x));
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).cols;
                        let mut gp = Matrix::zeros(g.rows, w);
                        for r in 0..g.rows {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[off..off + w]);
                        }
                        off += w;
                        acc(p, gp);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let pv = self.value(p);
                        let n = pv.rows * pv.cols;
                        let gp = Matrix::from_vec(pv.rows, pv.cols, g.data[off..off + n].to_vec());
                        off += n;
                        acc(p, gp);
                    }
                }
                Op::SliceCols(a, start) => {
                    let av = self.value(*a);
                    let mut ga = Matrix::zeros(av.rows, av.cols);
                    for r in 0..g.rows {
                        ga.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                    }
                    acc(*a, ga);
                }
                Op::Rows(a, idx) => {
                    let av = self.value(*a);
                    let mut ga = Matrix::zeros(av.rows, av.cols);
                    for (r, &i) in idx.iter().enumerate() {
                        for (o, x) in ga.row_mut(i).iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    acc(*a, ga);
                }
                Op::MeanRows(a) => {
                    let av = self.value(*a);
                    let n = av.rows as f64;
                    let mut ga = Matrix::zeros(av.rows, av.cols);
                    for r in 0..av.rows {
                        for (o, x) in ga.row_mut(r).iter_mut().zip(&g.data) {
                            *o = x / n;
                        }
                    }
                    acc(*a, ga);
                }
                Op::MaxCols(a, arg) => {
                    let av = self.value(*a);
                    let mut ga = Matrix::zeros(av.rows, av.cols);
                    for (r, &c) in arg.iter().enumerate() {
                        ga.set(r, c, g.data[r]);
                    }
                    acc(*a, ga);
                }
                Op::Pick(a, at) => {
                    let av = self.value(*a);
                    let mut ga = Matrix::zeros(av.rows, av.cols);
                    for (k, &(r, c)) in at.iter().enumerate() {
                        let cur = ga.get(r, c);
                        ga.set(r, c, cur + g.data[k]);
                    }
                    acc(*a, ga);
                }
                Op::Sum(a) => {
                    let av = self.value(*a);
                    acc(*a, Matrix::filled(av.rows, av.cols, g.data[0]));
                }
                Op::ScatterCols(a, targets) => {
                    let ga = targets.iter().map(|&t| g.data[t]).collect();
                    acc(*a, Matrix::row_vector(ga));
                }
                Op::Mask(a, m) => acc(*a, g.zip_map(m, |x, k| x * k)),
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::check::max_relative_error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Ids {
        w: ParamId,
        b: ParamId,
        x: ParamId,
        s: ParamId,
        m: ParamId,
        p: ParamId,
    }

    /// One scalar function touching every op.
    fn everything(t: &mut Tape, p: &Params, ids: &Ids) -> Var {
        let w = t.param(p, ids.w);
        let b = t.param(p, ids.b);
        let x = t.param(p, ids.x);
        let s = t.param(p, ids.s);
        let m = t.param(p, ids.m);
        let proj_w = t.param(p, ids.p);
        let h = t.linear(x, w, b);
        let h = t.tanh(h);
        let g = t.sigmoid(m);
        let hg = t.mul(h, g);
        let sc = t.scale_rows(hg, s);
        let om = t.one_minus(g);
        let d = t.sub(sc, om);
        let r = t.relu(d);
        let cat = t.concat_cols(&[r, h]);
        let sl = t.slice_cols(cat, 2, 4);
        let rows = t.rows(sl, &[2, 0, 2]);
        let stacked = t.concat_rows(&[rows, h]);
        let mean = t.mean_rows(stacked);
        let mx = t.max_cols(stacked);
        let sm = t.softmax_rows(stacked);
        let lsm = t.log_softmax_rows(stacked);
        let pk = t.pick(lsm, &[(0, 1), (3, 2), (0, 1)]);
        let proj = t.matmul(mean, proj_w);
        let sc2 = t.scatter_cols(proj, &[1, 1], 3);
        let sm_row = t.row(sm, 1);
        let lg = t.log(sm_row);
        let masked = t.mask(lg, Matrix::from_vec(1, 4, vec![1.0, 0.0, 2.0, 1.0]));
        let parts = [t.sum(mx), t.sum(pk), t.sum(sc2), t.sum(masked)];
        let all = t.concat_cols(&parts);
        let total = t.sum(all);
        let half = t.scale(total, 0.5);
        t.add(half, total)
    }

    #[test]
    fn all_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = Params::new();
        let ids = Ids {
            w: params.add("w", Matrix::uniform(4, 3, 0.8, &mut rng)),
            b: params.add("b", Matrix::uniform(1, 4, 0.5, &mut rng)),
            x: params.add("x", Matrix::uniform(3, 3, 1.0, &mut rng)),
            s: params.add("s", Matrix::uniform(3, 1, 1.0, &mut rng)),
            m: params.add("m", Matrix::uniform(3, 4, 1.0, &mut rng)),
            p: params.add("p", Matrix::uniform(4, 2, 1.0, &mut rng)),
        };
        let mut tape = Tape::new();
        let out = everything(&mut tape, &params, &ids);
        let analytic = tape.backward(out, &params);
        let err = max_relative_error(&mut params, &analytic, |p| {
            let mut t = Tape::new();
            let out = everything(&mut t, p, &ids);
            t.scalar(out)
        });
        assert!(err < 1e-6, "max relative error {err}");
    }

    #[test]
    fn reused_param_is_registered_once() {
        let mut params = Params::new();
        let id = params.add("w", Matrix::filled(1, 1, 2.0));
        let mut t = Tape::new();
        let a = t.param(&params, id);
        let b = t.param(&params, id);
        assert_eq!(a, b);
        let y = t.mul(a, b);
        let g = t.backward(y, &params);
        assert_eq!(g.get(id).data, vec![4.0]);
    }
}
