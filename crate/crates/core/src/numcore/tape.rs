use rand::Rng;

use super::array::Array;
use super::{log_softmax_slice, sigmoid, softmax_slice};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Scale(Var, f64),
    Conv1d { seq: Var, filters: Var, bias: Option<Var> },
    Glu(Var),
    PadRows { x: Var, left: usize },
    Gather { table: Var, indices: Vec<usize> },
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Softmax(Var),
    LogSoftmax(Var),
    Dropout { x: Var, mask: Vec<f64> },
    NllMean { x: Var, targets: Vec<usize> },
    Sum(Var),
    SumSquares(Var),
}

struct Node {
    value: Array,
    op: Op,
}

/// Define-by-run reverse-mode tape. Nodes are appended in evaluation order,
/// so walking indices backwards is a reverse topological traversal.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Array>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Array> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn accumulate(grads: &mut [Option<Array>], v: Var, g: Array) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
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

    fn push(&mut self, value: Array, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// `W·x + b` applied to a vector `[k]` or to every row of `[T, k]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if ws.len() != 2 || xs.len() > 2 || *xs.last().unwrap() != ws[1] {
            return Err(Error::dim("linear", xs, ws));
        }
        let (out_dim, in_dim) = (ws[0], ws[1]);
        if let Some(b) = b {
            if self.shape(b) != [out_dim] {
                return Err(Error::dim("linear", ws, self.shape(b)));
            }
        }
        let xv = self.value(x);
        let wv = self.value(w).data();
        let rows = xv.rows();
        let mut out = vec![0.0; rows * out_dim];
        for r in 0..rows {
            let xr = xv.row(r);
            let orow = &mut out[r * out_dim..(r + 1) * out_dim];
            for (o, slot) in orow.iter_mut().enumerate() {
                *slot = dot(&wv[o * in_dim..(o + 1) * in_dim], xr);
            }
            if let Some(b) = b {
                for (slot, bv) in orow.iter_mut().zip(self.value(b).data()) {
                    *slot += bv;
                }
            }
        }
        let shape = if xs.len() == 1 {
            vec![out_dim]
        } else {
            vec![rows, out_dim]
        };
        let value = Array::new(shape, out)?;
        Ok(self.push(value, Op::Linear { x, w, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim("add", self.shape(a), self.shape(b)));
        }
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let mut value = self.value(a).clone();
        value.scale_in_place(c);
        self.push(value, Op::Scale(a, c))
    }

    /// Width-3 convolution over an already padded `[P, h]` sequence with
    /// filters `[out, 3, h]`; returns `[P - 2, out]`.
    pub fn conv1d(&mut self, seq: Var, filters: Var, bias: Option<Var>) -> Result<Var> {
        let (ss, fs) = (self.shape(seq), self.shape(filters));
        if ss.len() != 2 || fs.len() != 3 || fs[1] != 3 || fs[2] != ss[1] {
            return Err(Error::dim("conv1d", ss, fs));
        }
        if ss[0] < 3 {
            return Err(Error::EmptyInput("conv1d"));
        }
        let (padded, channels, out_ch) = (ss[0], ss[1], fs[0]);
        if let Some(b) = bias {
            if self.shape(b) != [out_ch] {
                return Err(Error::dim("conv1d", fs, self.shape(b)));
            }
        }
        let steps = padded - 2;
        let window = 3 * channels;
        let sv = self.value(seq).data();
        let fv = self.value(filters).data();
        let mut out = vec![0.0; steps * out_ch];
        for i in 0..steps {
            // rows i..i+3 are contiguous in row-major order
            let win = &sv[i * channels..i * channels + window];
            for o in 0..out_ch {
                out[i * out_ch + o] = dot(&fv[o * window..(o + 1) * window], win);
            }
            if let Some(b) = bias {
                for (slot, bv) in out[i * out_ch..(i + 1) * out_ch]
                    .iter_mut()
                    .zip(self.value(b).data())
                {
                    *slot += bv;
                }
            }
        }
        let value = Array::new(vec![steps, out_ch], out)?;
        Ok(self.push(value, Op::Conv1d { seq, filters, bias }))
    }

    /// Gated linear unit over the last axis: `a ∘ σ(b)` for `[a; b]`.
    pub fn glu(&mut self, f: Var) -> Result<Var> {
        let fv = self.value(f);
        let width = fv.cols();
        if !width.is_multiple_of(2) {
            return Err(Error::dim("glu", fv.shape(), &[width / 2 * 2]));
        }
        let h = width / 2;
        let rows = fv.rows();
        let mut out = Vec::with_capacity(rows * h);
        for r in 0..rows {
            let row = fv.row(r);
            out.extend((0..h).map(|k| row[k] * sigmoid(row[h + k])));
        }
        let mut shape = fv.shape().to_vec();
        *shape.last_mut().unwrap() = h;
        let value = Array::new(shape, out)?;
        Ok(self.push(value, Op::Glu(f)))
    }

    /// Adds `left` and `right` zero rows around a `[T, c]` matrix.
    pub fn pad_rows(&mut self, x: Var, left: usize, right: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 {
            return Err(Error::dim("pad_rows", xv.shape(), &[0, 0]));
        }
        let (rows, cols) = (xv.rows(), xv.cols());
        let mut data = vec![0.0; (rows + left + right) * cols];
        data[left * cols..(left + rows) * cols].copy_from_slice(xv.data());
        let value = Array::new(vec![rows + left + right, cols], data)?;
        Ok(self.push(value, Op::PadRows { x, left }))
    }

    /// Row lookup into a `[V, d]` table.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if tv.rank() != 2 {
            return Err(Error::dim("gather", tv.shape(), &[0, 0]));
        }
        if indices.is_empty() {
            return Err(Error::EmptyInput("gather"));
        }
        let (vocab, d) = (tv.rows(), tv.cols());
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= vocab {
                return Err(Error::Contract(format!(
                    "index {i} outside table of {vocab} rows"
                )));
            }
            data.extend_from_slice(tv.row(i));
        }
        let value = Array::new(vec![indices.len(), d], data)?;
        Ok(self.push(
            value,
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
        ))
    }

    /// `[n, k] · [k, m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for p in 0..k {
                let aip = av[i * k + p];
                for j in 0..m {
                    out[i * m + j] += aip * bv[p * m + j];
                }
            }
        }
        let value = Array::new(vec![n, m], out)?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// `[n, k] · [m, k]ᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::dim("matmul_nt", sa, sb));
        }
        let (n, k, m) = (sa[0], sa[1], sb[0]);
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[i * m + j] = dot(&av[i * k..(i + 1) * k], &bv[j * k..(j + 1) * k]);
            }
        }
        let value = Array::new(vec![n, m], out)?;
        Ok(self.push(value, Op::MatMulNT(a, b)))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        for r in 0..value.rows() {
            softmax_slice(value.row_mut(r));
        }
        self.push(value, Op::Softmax(x))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        for r in 0..value.rows() {
            log_softmax_slice(value.row_mut(r));
        }
        self.push(value, Op::LogSoftmax(x))
    }

    /// Inverted dropout. Identity (same node) in inference mode or for `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        p: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} not in [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let mut value = self.value(x).clone();
        value
            .data_mut()
            .iter_mut()
            .zip(&mask)
            .for_each(|(v, m)| *v *= m);
        Ok(self.push(value, Op::Dropout { x, mask }))
    }

    /// Mean negative log-likelihood of `targets` under `[T, V]` log-probabilities.
    pub fn nll_mean(&mut self, logp: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logp);
        if lv.rank() != 2 || lv.rows() != targets.len() {
            return Err(Error::dim("nll_mean", lv.shape(), &[targets.len()]));
        }
        if targets.is_empty() {
            return Err(Error::EmptyInput("nll_mean"));
        }
        let mut total = 0.0;
        for (t, &tgt) in targets.iter().enumerate() {
            if tgt >= lv.cols() {
                return Err(Error::Contract(format!("target {tgt} outside vocabulary")));
            }
            total -= lv.row(t)[tgt];
        }
        let value = Array::scalar(total / targets.len() as f64);
        Ok(self.push(
            value,
            Op::NllMean {
                x: logp,
                targets: targets.to_vec(),
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Array::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x))
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let value = Array::scalar(self.value(x).sq_norm());
        self.push(value, Op::SumSquares(x))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        if self.value(out).len() != 1 {
            return Err(Error::dim("backward", self.value(out).shape(), &[1]));
        }
        let mut grads: Vec<Option<Array>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Array::scalar(1.0));
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, i: usize, g: &Array, grads: &mut [Option<Array>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (out_dim, in_dim) = (wv.shape()[0], wv.shape()[1]);
                let rows = xv.rows();
                let mut dx = Array::zeros(xv.shape());
                let mut dw = Array::zeros(wv.shape());
                let gd = g.data();
                for r in 0..rows {
                    let xr = xv.row(r);
                    let dxr = dx.row_mut(r);
                    for o in 0..out_dim {
                        let go = gd[r * out_dim + o];
                        if go == 0.0 {
                            continue;
                        }
                        let wrow = &wv.data()[o * in_dim..(o + 1) * in_dim];
                        axpy(go, wrow, dxr);
                        axpy(go, xr, &mut dw.data_mut()[o * in_dim..(o + 1) * in_dim]);
                    }
                }
                accumulate(grads, *x, dx);
                accumulate(grads, *w, dw);
                if let Some(b) = b {
                    accumulate(grads, *b, column_sums(g, out_dim));
                }
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Scale(a, c) => {
                let mut d = g.clone();
                d.scale_in_place(*c);
                accumulate(grads, *a, d);
            }
            Op::Conv1d { seq, filters, bias } => {
                let sv = self.value(*seq);
                let fv = self.value(*filters);
                let channels = sv.cols();
                let out_ch = fv.shape()[0];
                let window = 3 * channels;
                let steps = sv.rows() - 2;
                let mut dseq = Array::zeros(sv.shape());
                let mut dfil = Array::zeros(fv.shape());
                let gd = g.data();
                for i in 0..steps {
                    for o in 0..out_ch {
                        let go = gd[i * out_ch + o];
                        if go == 0.0 {
                            continue;
                        }
                        let frow = &fv.data()[o * window..(o + 1) * window];
                        axpy(
                            go,
                            frow,
                            &mut dseq.data_mut()[i * channels..i * channels + window],
                        );
                        axpy(
                            go,
                            &sv.data()[i * channels..i * channels + window],
                            &mut dfil.data_mut()[o * window..(o + 1) * window],
                        );
                    }
                }
                accumulate(grads, *seq, dseq);
                accumulate(grads, *filters, dfil);
                if let Some(b) = bias {
                    accumulate(grads, *b, column_sums(g, out_ch));
                }
            }
            Op::Glu(f) => {
                let fv = self.value(*f);
                let h = fv.cols() / 2;
                let mut df = Array::zeros(fv.shape());
                for r in 0..fv.rows() {
                    let row = fv.row(r);
                    let grow = g.row(r);
                    let drow = df.row_mut(r);
                    for k in 0..h {
                        let s = sigmoid(row[h + k]);
                        drow[k] = grow[k] * s;
                        drow[h + k] = grow[k] * row[k] * s * (1.0 - s);
                    }
                }
                accumulate(grads, *f, df);
            }
            Op::PadRows { x, left } => {
                let xv = self.value(*x);
                let cols = xv.cols();
                let start = left * cols;
                let data = g.data()[start..start + xv.len()].to_vec();
                accumulate(grads, *x, Array::new(xv.shape().to_vec(), data).unwrap());
            }
            Op::Gather { table, indices } => {
                let tv = self.value(*table);
                let mut dt = Array::zeros(tv.shape());
                for (r, &idx) in indices.iter().enumerate() {
                    axpy(1.0, g.row(r), dt.row_mut(idx));
                }
                accumulate(grads, *table, dt);
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, k, m) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                let mut da = Array::zeros(av.shape());
                let mut db = Array::zeros(bv.shape());
                let gd = g.data();
                for i in 0..n {
                    for p in 0..k {
                        let grow = &gd[i * m..(i + 1) * m];
                        let brow = &bv.data()[p * m..(p + 1) * m];
                        da.data_mut()[i * k + p] = dot(grow, brow);
                        axpy(av.data()[i * k + p], grow, &mut db.data_mut()[p * m..(p + 1) * m]);
                    }
                }
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::MatMulNT(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, k, m) = (av.shape()[0], av.shape()[1], bv.shape()[0]);
                let mut da = Array::zeros(av.shape());
                let mut db = Array::zeros(bv.shape());
                let gd = g.data();
                for i in 0..n {
                    for j in 0..m {
                        let gij = gd[i * m + j];
                        if gij == 0.0 {
                            continue;
                        }
                        axpy(gij, &bv.data()[j * k..(j + 1) * k], &mut da.data_mut()[i * k..(i + 1) * k]);
                        axpy(gij, &av.data()[i * k..(i + 1) * k], &mut db.data_mut()[j * k..(j + 1) * k]);
                    }
                }
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let mut dx = Array::zeros(y.shape());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let inner = dot(yr, gr);
                    for ((d, yv), gv) in dx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *d = yv * (gv - inner);
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::LogSoftmax(x) => {
                let y = &node.value;
                let mut dx = Array::zeros(y.shape());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let gsum: f64 = gr.iter().sum();
                    for ((d, yv), gv) in dx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *d = gv - yv.exp() * gsum;
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::Dropout { x, mask } => {
                let mut dx = g.clone();
                dx.data_mut()
                    .iter_mut()
                    .zip(mask)
                    .for_each(|(v, m)| *v *= m);
                accumulate(grads, *x, dx);
            }
            Op::NllMean { x, targets } => {
                let xv = self.value(*x);
                let mut dx = Array::zeros(xv.shape());
                let scale = -g.data()[0] / targets.len() as f64;
                for (t, &tgt) in targets.iter().enumerate() {
                    dx.row_mut(t)[tgt] += scale;
                }
                accumulate(grads, *x, dx);
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                accumulate(grads, *x, Array::filled(xv.shape(), g.data()[0]));
            }
            Op::SumSquares(x) => {
                let mut dx = self.value(*x).clone();
                dx.scale_in_place(2.0 * g.data()[0]);
                accumulate(grads, *x, dx);
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yv, xv)| *yv += alpha * xv);
}

fn column_sums(g: &Array, cols: usize) -> Array {
    let mut out = vec![0.0; cols];
    for r in 0..g.rows() {
        axpy(1.0, g.row(r), &mut out);
    }
    Array::vector(out)
}
