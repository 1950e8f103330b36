//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node to the tape, so node order is a
//! topological order and the backward pass is a single reverse sweep.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { ta: bool, tb: bool },
    Add,
    Sub,
    Mul,
    AddRow,
    Scale(f64),
    Sigmoid,
    Tanh,
    Relu,
    SoftmaxRows,
    LayerNorm { eps: f64 },
    Im2Col { k: usize },
    GatherRows(Vec<usize>),
    ConcatCols,
    ConcatRows,
    SliceCols { start: usize },
    SliceRows { start: usize },
    Mse,
    Sum,
    Mean,
    MulConst(Vec<f64>),
    Reshape,
    GruCell,
}

struct Node {
    value: Tensor,
    op: Op,
    parents: Vec<Var>,
    requires_grad: bool,
}

pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<usize, Var>,
    training: bool,
    rng: ChaCha8Rng,
}

/// Gradients from one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn shape_err(msg: String) -> Error {
    Error::ShapeError(msg)
}

/// `c = alpha * op(a) op(b) + beta * c` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    (rsc, csc): (usize, usize),
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: callers pass slices whose extents cover every strided index
    // touched for the given m, k, n.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Rows, cols and strides of `op(x)` for a stored `[r, c]` matrix.
fn op_view(t: &Tensor, trans: bool) -> (usize, usize, (usize, usize)) {
    let (r, c) = (t.rows(), t.cols());
    if trans {
        (c, r, (1, c))
    } else {
        (r, c, (c, 1))
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Graph {
    pub fn new(training: bool, seed: u64) -> Self {
        Graph {
            nodes: Vec::new(),
            params: HashMap::new(),
            training,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Evaluation-mode graph; dropout is the identity.
    pub fn eval() -> Self {
        Graph::new(false, 0)
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, parents: Vec<Var>) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            parents,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            parents: Vec::new(),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Binds parameter `id` of `store` once per graph.
    pub fn param(&mut self, store: &ParamStore, id: usize) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.leaf(store.tensor(id).clone(), true);
        self.params.insert(id, v);
        v
    }

    /// Parameter ids bound on this graph with their handles.
    pub fn bound_params(&self) -> impl Iterator<Item = (usize, Var)> + '_ {
        self.params.iter().map(|(&id, &v)| (id, v))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a) · op(b)` where `op` optionally transposes.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k, sa) = op_view(av, ta);
        let (k2, n, sb) = op_view(bv, tb);
        if k != k2 {
            return Err(shape_err(format!(
                "matmul inner dims {k} vs {k2} ({:?} x {:?})",
                av.shape(),
                bv.shape()
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), sa, bv.data(), sb, &mut out, (n, 1), 0.0);
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(t, Op::MatMul { ta, tb }, vec![a, b]))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(a, b, "elementwise")?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(t, op, vec![a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul, |x, y| x * y)
    }

    /// Adds a length-`cols` vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        let c = av.cols();
        if rv.len() != c {
            return Err(shape_err(format!("row broadcast: {:?} + {:?}", av.shape(), rv.shape())));
        }
        let r = rv.data();
        let data = av
            .data()
            .chunks(c)
            .flat_map(|chunk| chunk.iter().zip(r).map(|(x, y)| x + y))
            .collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(t, Op::AddRow, vec![a, row]))
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let av = self.value(a);
        let t = Tensor::new(av.shape().to_vec(), av.data().iter().map(|&x| f(x)).collect()).expect("same shape");
        self.push(t, op, vec![a])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::Scale(c), |x| c * x)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid, sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh, f64::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu, |x| x.max(0.0))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let c = av.cols();
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(c) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for x in row.iter_mut() {
                *x = (*x - mx).exp();
                s += *x;
            }
            for x in row.iter_mut() {
                *x /= s;
            }
        }
        let t = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        self.push(t, Op::SoftmaxRows, vec![a])
    }

    /// Per-row normalization followed by `gamma ⊙ x̂ + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let d = xv.cols();
        if d == 0 || gv.len() != d || bv.len() != d {
            return Err(shape_err(format!(
                "layer_norm over {d} features with gamma {:?}, beta {:?}",
                gv.shape(),
                bv.shape()
            )));
        }
        let mut data = Vec::with_capacity(xv.len());
        for row in xv.data().chunks(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let rstd = 1.0 / (var + eps).sqrt();
            for j in 0..d {
                data.push(gv.data()[j] * (row[j] - mean) * rstd + bv.data()[j]);
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(t, Op::LayerNorm { eps }, vec![x, gamma, beta]))
    }

    /// `[T, C] -> [T, k·C]`, block `j` holding `x[t + j - k/2]` (zero padded).
    pub fn im2col(&mut self, x: Var, k: usize) -> Result<Var> {
        if k.is_multiple_of(2) {
            return Err(Error::ConfigError(format!("kernel size {k} must be odd")));
        }
        let xv = self.value(x);
        let (t_len, c) = (xv.rows(), xv.cols());
        let pad = k / 2;
        let mut out = vec![0.0; t_len * k * c];
        for t in 0..t_len {
            for j in 0..k {
                let src = t as isize + j as isize - pad as isize;
                if src < 0 || src >= t_len as isize {
                    continue;
                }
                let dst = t * k * c + j * c;
                out[dst..dst + c].copy_from_slice(xv.row(src as usize));
            }
        }
        let t = Tensor::new(vec![t_len, k * c], out)?;
        Ok(self.push(t, Op::Im2Col { k }, vec![x]))
    }

    /// Row gather; backward scatter-adds.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (rows, c) = (tv.rows(), tv.cols());
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= rows {
                return Err(Error::IndexError { index: i, len: rows });
            }
            out.extend_from_slice(tv.row(i));
        }
        let t = Tensor::new(vec![idx.len(), c], out)?;
        Ok(self.push(t, Op::GatherRows(idx.to_vec()), vec![table]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(shape_err("concat_cols row counts differ".into()));
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let t = Tensor::new(vec![rows, total], out)?;
        Ok(self.push(t, Op::ConcatCols, parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        if parts.iter().any(|&p| self.value(p).cols() != cols) {
            return Err(shape_err("concat_rows column counts differ".into()));
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let rows = out.len() / cols.max(1);
        let t = Tensor::new(vec![rows, cols], out)?;
        Ok(self.push(t, Op::ConcatRows, parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        let c = av.cols();
        if start + len > c {
            return Err(shape_err(format!("slice_cols {start}+{len} of {c}")));
        }
        let out: Vec<f64> = av
            .data()
            .chunks(c)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let t = Tensor::new(vec![av.rows(), len], out)?;
        Ok(self.push(t, Op::SliceCols { start }, vec![a]))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        let (r, c) = (av.rows(), av.cols());
        if start + len > r {
            return Err(shape_err(format!("slice_rows {start}+{len} of {r}")));
        }
        let t = Tensor::new(vec![len, c], av.data()[start * c..(start + len) * c].to_vec())?;
        Ok(self.push(t, Op::SliceRows { start }, vec![a]))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape, vec![a]))
    }

    /// Mean squared difference, as a 1-element tensor.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mse")?;
        let (av, bv) = (self.value(a), self.value(b));
        if av.is_empty() {
            return Err(Error::EmptyInput("mse operands"));
        }
        let s: f64 = av.data().iter().zip(bv.data()).map(|(x, y)| (x - y).powi(2)).sum();
        let t = Tensor::scalar(s / av.len() as f64);
        Ok(self.push(t, Op::Mse, vec![a, b]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let t = Tensor::scalar(self.value(a).data().iter().sum());
        self.push(t, Op::Sum, vec![a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let t = Tensor::scalar(av.data().iter().sum::<f64>() / av.len() as f64);
        self.push(t, Op::Mean, vec![a])
    }

    /// Inverted dropout; identity outside training.
    pub fn dropout(&mut self, a: Var, rate: f64) -> Var {
        if !self.training || rate <= 0.0 {
            return a;
        }
        let keep = 1.0 - rate;
        let n = self.value(a).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let av = self.value(a);
        let data = av.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let t = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        self.push(t, Op::MulConst(mask), vec![a])
    }

    /// One GRU step from precomputed input and hidden projections
    /// (`[1, 3H]` each, gate order r, z, n) and the previous state `[1, H]`.
    pub fn gru_cell(&mut self, gx: Var, gh: Var, h: Var) -> Result<Var> {
        let (xv, hv, prev) = (self.value(gx), self.value(gh), self.value(h));
        let hd = prev.len();
        if xv.len() != 3 * hd || hv.len() != 3 * hd {
            return Err(shape_err(format!(
                "gru cell: projections {:?}/{:?} for state {:?}",
                xv.shape(),
                hv.shape(),
                prev.shape()
            )));
        }
        let (x, hh, p) = (xv.data(), hv.data(), prev.data());
        let out: Vec<f64> = (0..hd)
            .map(|j| {
                let r = sigmoid(x[j] + hh[j]);
                let z = sigmoid(x[hd + j] + hh[hd + j]);
                let n = (x[2 * hd + j] + r * hh[2 * hd + j]).tanh();
                n + z * (p[j] - n)
            })
            .collect();
        let t = Tensor::new(vec![1, hd], out)?;
        Ok(self.push(t, Op::GruCell, vec![gx, gh, h]))
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(shape_err(format!(
                "backward needs a scalar, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || node.parents.is_empty() {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let parent_grads = self.local_backward(node, &g);
            grads[i] = Some(g);
            for (p, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                match &mut grads[p.0] {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&pg) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn local_backward(&self, node: &Node, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let pv = |k: usize| &self.nodes[node.parents[k].0].value;
        let want = |k: usize| self.nodes[node.parents[k].0].requires_grad;
        let out = &node.value;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul { ta, tb } => {
                let (a, b) = (pv(0), pv(1));
                let (m, k, sa) = op_view(a, *ta);
                let (_, n, sb) = op_view(b, *tb);
                let ga = want(0).then(|| {
                    // d op(a) = g · op(b)ᵀ, written transposed when ta
                    let mut d = vec![0.0; m * k];
                    let dst = if *ta { (1, m) } else { (k, 1) };
                    gemm(m, n, k, g, (n, 1), b.data(), (sb.1, sb.0), &mut d, dst, 0.0);
                    d
                });
                let gb = want(1).then(|| {
                    let mut d = vec![0.0; k * n];
                    let dst = if *tb { (1, k) } else { (n, 1) };
                    gemm(k, m, n, a.data(), (sa.1, sa.0), g, (n, 1), &mut d, dst, 0.0);
                    d
                });
                vec![ga, gb]
            }
            Op::Add => vec![want(0).then(|| g.to_vec()), want(1).then(|| g.to_vec())],
            Op::Sub => vec![
                want(0).then(|| g.to_vec()),
                want(1).then(|| g.iter().map(|v| -v).collect()),
            ],
            Op::Mul => {
                let (a, b) = (pv(0).data(), pv(1).data());
                vec![
                    want(0).then(|| g.iter().zip(b).map(|(x, y)| x * y).collect()),
                    want(1).then(|| g.iter().zip(a).map(|(x, y)| x * y).collect()),
                ]
            }
            Op::AddRow => {
                let c = out.cols();
                let gr = want(1).then(|| {
                    let mut acc = vec![0.0; c];
                    for row in g.chunks(c) {
                        for (a, v) in acc.iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                    acc
                });
                vec![want(0).then(|| g.to_vec()), gr]
            }
            Op::Scale(c) => vec![Some(g.iter().map(|v| c * v).collect())],
            Op::Sigmoid => vec![Some(
                g.iter().zip(out.data()).map(|(gv, y)| gv * y * (1.0 - y)).collect(),
            )],
            Op::Tanh => vec![Some(
                g.iter().zip(out.data()).map(|(gv, y)| gv * (1.0 - y * y)).collect(),
            )],
            Op::Relu => vec![Some(
                g.iter()
                    .zip(pv(0).data())
                    .map(|(gv, x)| if *x > 0.0 { *gv } else { 0.0 })
                    .collect(),
            )],
            Op::SoftmaxRows => {
                let c = out.cols();
                let mut d = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks(c).zip(out.data().chunks(c)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    d.extend(gr.iter().zip(yr).map(|(a, y)| y * (a - dot)));
                }
                vec![Some(d)]
            }
            Op::LayerNorm { eps } => {
                let (x, gamma) = (pv(0), pv(1).data());
                let d = x.cols();
                let mut dx = vec![0.0; x.len()];
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                let mut xhat = vec![0.0; d];
                let mut dxhat = vec![0.0; d];
                for (r, row) in x.data().chunks(d).enumerate() {
                    let mean = row.iter().sum::<f64>() / d as f64;
                    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
                    let rstd = 1.0 / (var + eps).sqrt();
                    let gr = &g[r * d..(r + 1) * d];
                    for j in 0..d {
                        xhat[j] = (row[j] - mean) * rstd;
                        dxhat[j] = gr[j] * gamma[j];
                        dgamma[j] += gr[j] * xhat[j];
                        dbeta[j] += gr[j];
                    }
                    let m1 = dxhat.iter().sum::<f64>() / d as f64;
                    let m2 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for j in 0..d {
                        dx[r * d + j] = rstd * (dxhat[j] - m1 - xhat[j] * m2);
                    }
                }
                vec![Some(dx), want(1).then_some(dgamma), want(2).then_some(dbeta)]
            }
            Op::Im2Col { k } => {
                let x = pv(0);
                let (t_len, c) = (x.rows(), x.cols());
                let pad = k / 2;
                let mut dx = vec![0.0; x.len()];
                for t in 0..t_len {
                    for j in 0..*k {
                        let src = t as isize + j as isize - pad as isize;
                        if src < 0 || src >= t_len as isize {
                            continue;
                        }
                        let s = src as usize * c;
                        let o = t * k * c + j * c;
                        for ch in 0..c {
                            dx[s + ch] += g[o + ch];
                        }
                    }
                }
                vec![Some(dx)]
            }
            Op::GatherRows(idx) => {
                let table = pv(0);
                let c = table.cols();
                let mut d = vec![0.0; table.len()];
                for (r, &i) in idx.iter().enumerate() {
                    for ch in 0..c {
                        d[i * c + ch] += g[r * c + ch];
                    }
                }
                vec![Some(d)]
            }
            Op::ConcatCols => {
                let total = out.cols();
                let rows = out.rows();
                let mut offset = 0;
                let mut res = Vec::with_capacity(node.parents.len());
                for k in 0..node.parents.len() {
                    let w = pv(k).cols();
                    res.push(want(k).then(|| {
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        d
                    }));
                    offset += w;
                }
                res
            }
            Op::ConcatRows => {
                let mut offset = 0;
                let mut res = Vec::with_capacity(node.parents.len());
                for k in 0..node.parents.len() {
                    let n = pv(k).len();
                    res.push(want(k).then(|| g[offset..offset + n].to_vec()));
                    offset += n;
                }
                res
            }
            Op::SliceCols { start } => {
                let a = pv(0);
                let (c, w) = (a.cols(), out.cols());
                let mut d = vec![0.0; a.len()];
                for r in 0..a.rows() {
                    d[r * c + start..r * c + start + w].copy_from_slice(&g[r * w..(r + 1) * w]);
                }
                vec![Some(d)]
            }
            Op::SliceRows { start } => {
                let a = pv(0);
                let c = a.cols();
                let mut d = vec![0.0; a.len()];
                d[start * c..start * c + g.len()].copy_from_slice(g);
                vec![Some(d)]
            }
            Op::Mse => {
                let (a, b) = (pv(0).data(), pv(1).data());
                let s = 2.0 * g[0] / a.len() as f64;
                let da: Vec<f64> = a.iter().zip(b).map(|(x, y)| s * (x - y)).collect();
                let db = want(1).then(|| da.iter().map(|v| -v).collect());
                vec![want(0).then_some(da), db]
            }
            Op::Sum => vec![Some(vec![g[0]; pv(0).len()])],
            Op::Mean => {
                let n = pv(0).len();
                vec![Some(vec![g[0] / n as f64; n])]
            }
            Op::MulConst(mask) => vec![Some(g.iter().zip(mask).map(|(a, b)| a * b).collect())],
            Op::Reshape => vec![Some(g.to_vec())],
            Op::GruCell => {
                let (x, hh, p) = (pv(0).data(), pv(1).data(), pv(2).data());
                let hd = p.len();
                let mut dgx = vec![0.0; 3 * hd];
                let mut dgh = vec![0.0; 3 * hd];
                let mut dh = vec![0.0; hd];
                for j in 0..hd {
                    let r = sigmoid(x[j] + hh[j]);
                    let z = sigmoid(x[hd + j] + hh[hd + j]);
                    let n = (x[2 * hd + j] + r * hh[2 * hd + j]).tanh();
                    let go = g[j];
                    let dz = go * (p[j] - n);
                    let dn_pre = go * (1.0 - z) * (1.0 - n * n);
                    let dr_pre = dn_pre * hh[2 * hd + j] * r * (1.0 - r);
                    let dz_pre = dz * z * (1.0 - z);
                    dgx[j] = dr_pre;
                    dgh[j] = dr_pre;
                    dgx[hd + j] = dz_pre;
                    dgh[hd + j] = dz_pre;
                    dgx[2 * hd + j] = dn_pre;
                    dgh[2 * hd + j] = dn_pre * r;
                    dh[j] = go * z;
                }
                vec![want(0).then_some(dgx), want(1).then_some(dgh), want(2).then_some(dh)]
            }
        }
    }
}
