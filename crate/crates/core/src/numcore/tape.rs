//! Reverse-mode differentiation over a linear record of tensor operations.
//!
//! A [`Tape`] is rebuilt for every forward pass. Each operation appends a
//! node whose inputs are earlier nodes, so the record is topologically
//! sorted by construction and `backward` is a single reverse sweep.

use super::kernels;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
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
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    CausalSoftmax {
        x: Var,
        scale: f64,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu(Var),
    LogSoftmax(Var),
    Pick {
        x: Var,
        flat: Vec<usize>,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Operation record for one forward/backward cycle.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// Records a leaf; it is differentiable iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let requires_grad = tensor.requires_grad();
        self.push(tensor, Op::Leaf, requires_grad)
    }

    /// Records a non-differentiable leaf.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.push(tensor.detach(), Op::Leaf, false)
    }

    /// Value-equal node that blocks gradient flow.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.detach();
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, x: Var) -> &Tensor {
        &self.nodes[x.0].value
    }

    pub fn requires_grad(&self, x: Var) -> bool {
        self.nodes[x.0].requires_grad
    }

    /// Accumulated gradient of a differentiable leaf, if `backward` reached it.
    pub fn grad(&self, x: Var) -> Option<&[f64]> {
        self.nodes[x.0].value.grad()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn dims(&self, x: Var, what: &str) -> Result<(usize, usize)> {
        self.nodes[x.0].value.matrix_dims(what)
    }

    fn data(&self, x: Var) -> &[f64] {
        self.nodes[x.0].value.data()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a, "matmul lhs")?;
        let (k2, n) = self.dims(b, "matmul rhs")?;
        if k != k2 {
            return Err(Error::dim(format!("matmul [{m}x{k}] · [{k2}x{n}]")));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul_nn(self.data(a), self.data(b), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new([m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ` without materialising the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a, "matmul_nt lhs")?;
        let (n, k2) = self.dims(b, "matmul_nt rhs")?;
        if k != k2 {
            return Err(Error::dim(format!("matmul_nt [{m}x{k}] · [{n}x{k2}]ᵀ")));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul_nt(self.data(a), self.data(b), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new([m, n], out)?, Op::MatMulNt(a, b), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims(x, "transpose")?;
        let mut out = vec![0.0; r * c];
        kernels::transpose(self.data(x), &mut out, r, c);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new([c, r], out)?, Op::Transpose(x), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[a.0].value.shape().to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Add(a, b), rg))
    }

    /// Adds a vector along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xs = self.nodes[x.0].value.shape().to_vec();
        let n = *xs.last().ok_or_else(|| Error::dim("add_bias on a scalar"))?;
        if self.nodes[bias.0].value.shape() != [n] {
            return Err(Error::dim(format!(
                "bias shape {:?} does not match last axis {n}",
                self.nodes[bias.0].value.shape()
            )));
        }
        let b = self.data(bias);
        let out: Vec<f64> = self
            .data(x)
            .chunks(n)
            .flat_map(|row| row.iter().zip(b).map(|(v, b)| v + b))
            .collect();
        let rg = self.rg(&[x, bias]);
        Ok(self.push(Tensor::new(xs, out)?, Op::AddBias(x, bias), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.nodes[a.0].value.shape().to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out: Vec<f64> = self.data(x).iter().map(|v| v * c).collect();
        let shape = self.nodes[x.0].value.shape().to_vec();
        let rg = self.rg(&[x]);
        self.push(Tensor::new(shape, out).expect("shape preserved"), Op::Scale(x, c), rg)
    }

    /// Selects rows of a matrix: `out[i] = table[ids[i]]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(table, "gather_rows")?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= r) {
            return Err(Error::dim(format!("row {bad} out of range for {r} rows")));
        }
        let t = self.data(table);
        let out: Vec<f64> = ids
            .iter()
            .flat_map(|&i| t[i * c..(i + 1) * c].iter().copied())
            .collect();
        let rg = self.rg(&[table]);
        Ok(self.push(
            Tensor::new([ids.len(), c], out)?,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(x, "slice_cols")?;
        if start + len > c {
            return Err(Error::dim(format!("columns {start}..{} of {c}", start + len)));
        }
        let src = self.data(x);
        let out: Vec<f64> = (0..r)
            .flat_map(|i| src[i * c + start..i * c + start + len].iter().copied())
            .collect();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new([r, len], out)?, Op::SliceCols { x, start }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::dim("concat of nothing"))?;
        let (r, _) = self.dims(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.dims(p, "concat_cols")?;
            if pr != r {
                return Err(Error::dim(format!("concat rows {pr} vs {r}")));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.data(p)[i * w..(i + 1) * w]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor::new([r, total], out)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Row-wise softmax of `scale * x` over columns `0..=row`; later columns are zero.
    pub fn causal_softmax(&mut self, x: Var, scale: f64) -> Result<Var> {
        let (r, c) = self.dims(x, "causal_softmax")?;
        if r != c {
            return Err(Error::dim(format!("causal_softmax needs a square matrix, got {r}x{c}")));
        }
        let src = self.data(x);
        let mut out = vec![0.0; r * c];
        for t in 0..r {
            let row = &src[t * c..t * c + t + 1];
            let dst = &mut out[t * c..t * c + t + 1];
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(scale * v));
            let mut z = 0.0;
            for (d, &v) in dst.iter_mut().zip(row) {
                *d = (scale * v - max).exp();
                z += *d;
            }
            dst.iter_mut().for_each(|d| *d /= z);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new([r, c], out)?, Op::CausalSoftmax { x, scale }, rg))
    }

    /// Normalises each row of `x` to zero mean and unit variance, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.dims(x, "layer_norm")?;
        for p in [gain, bias] {
            if self.nodes[p.0].value.shape() != [c] {
                return Err(Error::dim("layer_norm parameter shape"));
            }
        }
        let src = self.data(x);
        let (g, b) = (self.data(gain), self.data(bias));
        let mut out = vec![0.0; r * c];
        let mut xhat = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[i] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            Tensor::new([r, c], out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out: Vec<f64> = self.data(x).iter().map(|&v| kernels::gelu(v)).collect();
        let shape = self.nodes[x.0].value.shape().to_vec();
        let rg = self.rg(&[x]);
        self.push(Tensor::new(shape, out).expect("shape preserved"), Op::Gelu(x), rg)
    }

    /// Log-softmax along the last axis, stabilised by max subtraction.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.nodes[x.0].value.shape().to_vec();
        let v = *shape.last().ok_or_else(|| Error::dim("log_softmax on a scalar"))?;
        if v == 0 {
            return Err(Error::dim("log_softmax over an empty axis"));
        }
        let out: Vec<f64> = self
            .data(x)
            .chunks(v)
            .flat_map(kernels::log_softmax_row)
            .collect();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, Op::LogSoftmax(x), rg))
    }

    /// Vector of `x[rows[i], cols[i]]` for a matrix `x`.
    pub fn pick(&mut self, x: Var, rows: &[usize], cols: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(x, "pick")?;
        if rows.len() != cols.len() {
            return Err(Error::dim("pick: rows and cols differ in length"));
        }
        let mut flat = Vec::with_capacity(rows.len());
        for (&i, &j) in rows.iter().zip(cols) {
            if i >= r || j >= c {
                return Err(Error::dim(format!("pick ({i}, {j}) outside {r}x{c}")));
            }
            flat.push(i * c + j);
        }
        let src = self.data(x);
        let out: Vec<f64> = flat.iter().map(|&f| src[f]).collect();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::vector(out), Op::Pick { x, flat }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.nodes[x.0].value.numel().max(1);
        let s = self.sum(x);
        self.scale(s, 1.0 / n as f64)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
        if sa != sb {
            return Err(Error::dim(format!("{what}: shapes {sa:?} and {sb:?}")));
        }
        Ok(())
    }

    /// Propagates d(loss)/d(node) to every differentiable leaf, adding into
    /// existing gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = &self.nodes[loss.0].value;
        if !lv.is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        if !lv.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    adj[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.dims(*a, "")?;
                    let (_, n) = self.dims(*b, "")?;
                    if self.requires_grad(*a) {
                        let mut da = vec![0.0; m * k];
                        kernels::matmul_nt(&g, self.data(*b), &mut da, m, n, k);
                        accumulate(&mut adj, *a, da);
                    }
                    if self.requires_grad(*b) {
                        let mut db = vec![0.0; k * n];
                        kernels::matmul_tn(self.data(*a), &g, &mut db, m, k, n);
                        accumulate(&mut adj, *b, db);
                    }
                }
                Op::MatMulNt(a, b) => {
                    // out[m,n] = a[m,k] · b[n,k]ᵀ
                    let (m, k) = self.dims(*a, "")?;
                    let (n, _) = self.dims(*b, "")?;
                    if self.requires_grad(*a) {
                        let mut da = vec![0.0; m * k];
                        kernels::matmul_nn(&g, self.data(*b), &mut da, m, n, k);
                        accumulate(&mut adj, *a, da);
                    }
                    if self.requires_grad(*b) {
                        let mut db = vec![0.0; n * k];
                        kernels::matmul_tn(&g, self.data(*a), &mut db, m, n, k);
                        accumulate(&mut adj, *b, db);
                    }
                }
                Op::Transpose(x) => {
                    let (r, c) = self.dims(*x, "")?;
                    let mut dx = vec![0.0; r * c];
                    kernels::transpose(&g, &mut dx, c, r);
                    accumulate(&mut adj, *x, dx);
                }
                Op::Add(a, b) => {
                    if self.requires_grad(*a) {
                        accumulate(&mut adj, *a, g.clone());
                    }
                    if self.requires_grad(*b) {
                        accumulate(&mut adj, *b, g);
                    }
                }
                Op::AddBias(x, bias) => {
                    let n = self.nodes[bias.0].value.numel();
                    if self.requires_grad(*bias) {
                        let mut db = vec![0.0; n];
                        for row in g.chunks(n) {
                            db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                        }
                        accumulate(&mut adj, *bias, db);
                    }
                    if self.requires_grad(*x) {
                        accumulate(&mut adj, *x, g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.requires_grad(*a) {
                        let da = g.iter().zip(self.data(*b)).map(|(g, y)| g * y).collect();
                        accumulate(&mut adj, *a, da);
                    }
                    if self.requires_grad(*b) {
                        let db = g.iter().zip(self.data(*a)).map(|(g, x)| g * x).collect();
                        accumulate(&mut adj, *b, db);
                    }
                }
                Op::Scale(x, c) => {
                    let dx = g.iter().map(|v| v * c).collect();
                    accumulate(&mut adj, *x, dx);
                }
                Op::GatherRows { table, ids } => {
                    let (r, c) = self.dims(*table, "")?;
                    let mut dt = vec![0.0; r * c];
                    for (i, &id) in ids.iter().enumerate() {
                        dt[id * c..(id + 1) * c]
                            .iter_mut()
                            .zip(&g[i * c..(i + 1) * c])
                            .for_each(|(d, v)| *d += v);
                    }
                    accumulate(&mut adj, *table, dt);
                }
                Op::SliceCols { x, start } => {
                    let (r, c) = self.dims(*x, "")?;
                    let len = g.len() / r.max(1);
                    let mut dx = vec![0.0; r * c];
                    for i in 0..r {
                        dx[i * c + start..i * c + start + len]
                            .copy_from_slice(&g[i * len..(i + 1) * len]);
                    }
                    accumulate(&mut adj, *x, dx);
                }
                Op::ConcatCols(parts) => {
                    let total = node.value.shape()[1];
                    let r = node.value.shape()[0];
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.nodes[p.0].value.shape()[1];
                        if self.requires_grad(p) {
                            let mut dp = Vec::with_capacity(r * w);
                            for i in 0..r {
                                dp.extend_from_slice(&g[i * total + offset..i * total + offset + w]);
                            }
                            accumulate(&mut adj, p, dp);
                        }
                        offset += w;
                    }
                }
                Op::CausalSoftmax { x, scale } => {
                    let c = node.value.shape()[1];
                    let y = node.value.data();
                    let mut dx = vec![0.0; y.len()];
                    for t in 0..c {
                        let ys = &y[t * c..t * c + t + 1];
                        let gs = &g[t * c..t * c + t + 1];
                        let dot: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                        for j in 0..=t {
                            dx[t * c + j] = scale * ys[j] * (gs[j] - dot);
                        }
                    }
                    accumulate(&mut adj, *x, dx);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    let c = self.nodes[gain.0].value.numel();
                    let r = rstd.len();
                    let gv = self.data(*gain);
                    if self.requires_grad(*gain) {
                        let mut dg = vec![0.0; c];
                        for i in 0..r {
                            for j in 0..c {
                                dg[j] += g[i * c + j] * xhat[i * c + j];
                            }
                        }
                        accumulate(&mut adj, *gain, dg);
                    }
                    if self.requires_grad(*bias) {
                        let mut db = vec![0.0; c];
                        for row in g.chunks(c) {
                            db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                        }
                        accumulate(&mut adj, *bias, db);
                    }
                    if self.requires_grad(*x) {
                        let mut dx = vec![0.0; r * c];
                        for i in 0..r {
                            let (mut m1, mut m2) = (0.0, 0.0);
                            for j in 0..c {
                                let dh = g[i * c + j] * gv[j];
                                m1 += dh;
                                m2 += dh * xhat[i * c + j];
                            }
                            m1 /= c as f64;
                            m2 /= c as f64;
                            for j in 0..c {
                                let dh = g[i * c + j] * gv[j];
                                dx[i * c + j] = rstd[i] * (dh - m1 - xhat[i * c + j] * m2);
                            }
                        }
                        accumulate(&mut adj, *x, dx);
                    }
                }
                Op::Gelu(x) => {
                    let dx = g
                        .iter()
                        .zip(self.data(*x))
                        .map(|(g, &v)| g * kernels::gelu_grad(v))
                        .collect();
                    accumulate(&mut adj, *x, dx);
                }
                Op::LogSoftmax(x) => {
                    let v = *node.value.shape().last().unwrap();
                    let y = node.value.data();
                    let mut dx = vec![0.0; y.len()];
                    for ((d, ys), gs) in dx.chunks_mut(v).zip(y.chunks(v)).zip(g.chunks(v)) {
                        let gsum: f64 = gs.iter().sum();
                        for j in 0..v {
                            d[j] = gs[j] - ys[j].exp() * gsum;
                        }
                    }
                    accumulate(&mut adj, *x, dx);
                }
                Op::Pick { x, flat } => {
                    let mut dx = vec![0.0; self.nodes[x.0].value.numel()];
                    for (&f, v) in flat.iter().zip(&g) {
                        dx[f] += v;
                    }
                    accumulate(&mut adj, *x, dx);
                }
                Op::Sum(x) => {
                    let n = self.nodes[x.0].value.numel();
                    accumulate(&mut adj, *x, vec![g[0]; n]);
                }
            }
        }

        for (idx, g) in adj.into_iter().enumerate() {
            if let Some(g) = g {
                let node = &mut self.nodes[idx];
                if matches!(node.op, Op::Leaf) && node.requires_grad {
                    if g.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFinite(format!("gradient of node {idx}")));
                    }
                    node.value.accumulate_grad(&g);
                }
            }
        }
        Ok(())
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], x: Var, delta: Vec<f64>) {
    match &mut adj[x.0] {
        Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
        slot @ None => *slot = Some(delta),
    }
}
