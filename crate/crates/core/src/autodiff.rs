//! Tape-based reverse-mode differentiation over the tensor kernels.
//!
//! Forward applications are recorded in topological order (an op can only
//! reference already-recorded nodes); values are computed eagerly with the
//! same kernels the plain paths use, so taped and untaped forwards are
//! bit-identical. A backward pass walks the tape in reverse and accumulates
//! vector-Jacobian products.

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(pub(crate) usize);

/// Handle to a tape node.
#[derive(Debug, Clone, Copy)]
pub struct Var {
    pub id: VarId,
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Add(VarId, VarId),
    Sub(VarId, VarId),
    Mul(VarId, VarId),
    Div(VarId, VarId),
    Scale(VarId, f64),
    /// Matrix [B,d] plus a broadcast row [d].
    AddRow(VarId, VarId),
    MatMul(VarId, VarId),
    /// Total sum to shape [1].
    Sum(VarId),
    Sin(VarId),
    Silu(VarId),
    Conv2dReflect(VarId, VarId),
    AvgPool(VarId, usize),
    /// Stable log-softmax along each row of [B,K].
    RowLogSoftmax(VarId),
    /// Gather rows of a [K,c] table by label.
    EmbedRows(VarId, Vec<usize>),
    Reshape(VarId),
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Gradients keyed by tape node, as produced by a backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.id.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `var`, materializing zeros when the node was unreachable
    /// from the loss.
    pub fn get_or_zero(&self, tape: &Tape, var: Var) -> Tensor {
        match self.get(var) {
            Some(g) => g.clone(),
            None => Tensor::zeros(tape.value(var).shape()),
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.id.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.id.0].requires_grad
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        let id = VarId(self.nodes.len());
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var { id }
    }

    fn needs_grad(&self, ids: &[VarId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Record a leaf value.
    pub fn input(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(Op::Input, value, requires_grad)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.input(value, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        let rg = self.needs_grad(&[a.id, b.id]);
        Ok(self.push(Op::Add(a.id, b.id), v, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        let rg = self.needs_grad(&[a.id, b.id]);
        Ok(self.push(Op::Sub(a.id, b.id), v, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).mul(self.value(b))?;
        let rg = self.needs_grad(&[a.id, b.id]);
        Ok(self.push(Op::Mul(a.id, b.id), v, rg))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).div(self.value(b))?;
        let rg = self.needs_grad(&[a.id, b.id]);
        Ok(self.push(Op::Div(a.id, b.id), v, rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).scaled(c);
        let rg = self.needs_grad(&[a.id]);
        Ok(self.push(Op::Scale(a.id, c), v, rg))
    }

    /// `m + row` with `row` broadcast over the rows of `m`.
    pub fn add_row(&mut self, m: Var, row: Var) -> Result<Var> {
        let (b, d) = self.value(m).dims2("add_row matrix")?;
        let r = self.value(row);
        if r.shape() != [d] {
            return Err(Error::ShapeMismatch {
                context: "add_row",
                left: self.value(m).shape().to_vec(),
                right: r.shape().to_vec(),
            });
        }
        let mut out = self.value(m).clone();
        for i in 0..b {
            for j in 0..d {
                out.data_mut()[i * d + j] += r.data()[j];
            }
        }
        let rg = self.needs_grad(&[m.id, row.id]);
        Ok(self.push(Op::AddRow(m.id, row.id), out, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::matmul(self.value(a), self.value(b))?;
        let rg = self.needs_grad(&[a.id, b.id]);
        Ok(self.push(Op::MatMul(a.id, b.id), v, rg))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).sum());
        let rg = self.needs_grad(&[a.id]);
        Ok(self.push(Op::Sum(a.id), v, rg))
    }

    pub fn sin(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::sin);
        let rg = self.needs_grad(&[a.id]);
        Ok(self.push(Op::Sin(a.id), v, rg))
    }

    /// Smooth ReLU-like activation x·sigmoid(x).
    pub fn silu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x * sigmoid(x));
        let rg = self.needs_grad(&[a.id]);
        Ok(self.push(Op::Silu(a.id), v, rg))
    }

    pub fn conv2d_reflect(&mut self, img: Var, kernel: Var) -> Result<Var> {
        let v = tensor::conv2d_reflect(self.value(img), self.value(kernel))?;
        let rg = self.needs_grad(&[img.id, kernel.id]);
        Ok(self.push(Op::Conv2dReflect(img.id, kernel.id), v, rg))
    }

    pub fn avgpool(&mut self, img: Var, factor: usize) -> Result<Var> {
        let v = tensor::avgpool(self.value(img), factor)?;
        let rg = self.needs_grad(&[img.id]);
        Ok(self.push(Op::AvgPool(img.id, factor), v, rg))
    }

    pub fn row_log_softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (b, k) = x.dims2("row_log_softmax")?;
        let mut out = x.clone();
        for i in 0..b {
            let row = &x.data()[i * k..(i + 1) * k];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for j in 0..k {
                out.data_mut()[i * k + j] = row[j] - lse;
            }
        }
        let rg = self.needs_grad(&[a.id]);
        Ok(self.push(Op::RowLogSoftmax(a.id), out, rg))
    }

    pub fn embed_rows(&mut self, table: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (k, c) = t.dims2("embed_rows table")?;
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::invalid(format!(
                "embed_rows label {bad} out of range for {k} classes"
            )));
        }
        let mut data = Vec::with_capacity(labels.len() * c);
        for &l in labels {
            data.extend_from_slice(&t.data()[l * c..(l + 1) * c]);
        }
        let v = Tensor::new(vec![labels.len(), c], data)?;
        let rg = self.needs_grad(&[table.id]);
        Ok(self.push(Op::EmbedRows(table.id, labels.to_vec()), v, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).reshaped(shape)?;
        let rg = self.needs_grad(&[a.id]);
        Ok(self.push(Op::Reshape(a.id), v, rg))
    }

    /// Reverse pass from a scalar loss (shape [1] or []).
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let v = self.value(loss);
        if v.len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                v.shape()
            )));
        }
        self.backward_seeded(loss, &Tensor::full(v.shape(), 1.0))
    }

    /// Reverse pass with an explicit output cotangent (used by `jacobian`).
    pub fn backward_seeded(&self, output: Var, seed: &Tensor) -> Result<Gradients> {
        if seed.shape() != self.value(output).shape() {
            return Err(Error::ShapeMismatch {
                context: "backward seed",
                left: seed.shape().to_vec(),
                right: self.value(output).shape().to_vec(),
            });
        }
        let mut cot: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        cot[output.id.0] = Some(seed.clone());
        for i in (0..=output.id.0).rev() {
            let g = match cot[i].take() {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut cot)?;
            cot[i] = Some(g);
        }
        Ok(Gradients { grads: cot })
    }

    fn accumulate(&self, cot: &mut [Option<Tensor>], id: VarId, delta: Tensor) -> Result<()> {
        if !self.nodes[id.0].requires_grad {
            return Ok(());
        }
        match &mut cot[id.0] {
            Some(existing) => {
                *existing = existing.add(&delta)?;
            }
            slot @ None => {
                *slot = Some(delta);
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, cot: &mut [Option<Tensor>]) -> Result<()> {
        match &self.nodes[i].op {
            Op::Input => {}
            Op::Add(a, b) => {
                self.accumulate(cot, *a, g.clone())?;
                self.accumulate(cot, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                self.accumulate(cot, *a, g.clone())?;
                self.accumulate(cot, *b, g.scaled(-1.0))?;
            }
            Op::Mul(a, b) => {
                self.accumulate(cot, *a, g.mul(&self.nodes[b.0].value)?)?;
                self.accumulate(cot, *b, g.mul(&self.nodes[a.0].value)?)?;
            }
            Op::Div(a, b) => {
                let bv = &self.nodes[b.0].value;
                self.accumulate(cot, *a, g.div(bv)?)?;
                let av = &self.nodes[a.0].value;
                let gb = g.mul(av)?.div(&bv.mul(bv)?)?.scaled(-1.0);
                self.accumulate(cot, *b, gb)?;
            }
            Op::Scale(a, c) => {
                self.accumulate(cot, *a, g.scaled(*c))?;
            }
            Op::AddRow(m, row) => {
                self.accumulate(cot, *m, g.clone())?;
                let (b, d) = g.dims2("add_row grad")?;
                let mut gr = Tensor::zeros(&[d]);
                for r in 0..b {
                    for j in 0..d {
                        gr.data_mut()[j] += g.data()[r * d + j];
                    }
                }
                self.accumulate(cot, *row, gr)?;
            }
            Op::MatMul(a, b) => {
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                let ga = tensor::matmul(g, &bv.transposed()?)?;
                self.accumulate(cot, *a, ga)?;
                let gb = tensor::matmul(&av.transposed()?, g)?;
                self.accumulate(cot, *b, gb)?;
            }
            Op::Sum(a) => {
                let shape = self.nodes[a.0].value.shape();
                self.accumulate(cot, *a, Tensor::full(shape, g.data()[0]))?;
            }
            Op::Sin(a) => {
                let da = self.nodes[a.0].value.map(f64::cos);
                self.accumulate(cot, *a, g.mul(&da)?)?;
            }
            Op::Silu(a) => {
                let da = self.nodes[a.0]
                    .value
                    .map(|x| {
                        let s = sigmoid(x);
                        s * (1.0 + x * (1.0 - s))
                    });
                self.accumulate(cot, *a, g.mul(&da)?)?;
            }
            Op::Conv2dReflect(img, kernel) => {
                let iv = &self.nodes[img.0].value;
                let kv = &self.nodes[kernel.0].value;
                let (h, w) = iv.dims2("conv grad img")?;
                let (kh, kw) = kv.dims2("conv grad kernel")?;
                let c = (kh / 2) as isize;
                let mut gi = Tensor::zeros(&[h, w]);
                let mut gk = Tensor::zeros(&[kh, kw]);
                for y in 0..h {
                    for x in 0..w {
                        let go = g.data()[y * w + x];
                        for ky in 0..kh {
                            let sy = reflect(y as isize + ky as isize - c, h);
                            for kx in 0..kw {
                                let sx = reflect(x as isize + kx as isize - c, w);
                                gi.data_mut()[sy * w + sx] += go * kv.data()[ky * kw + kx];
                                gk.data_mut()[ky * kw + kx] += go * iv.data()[sy * w + sx];
                            }
                        }
                    }
                }
                self.accumulate(cot, *img, gi)?;
                self.accumulate(cot, *kernel, gk)?;
            }
            Op::AvgPool(a, f) => {
                let (h, w) = self.nodes[a.0].value.dims2("avgpool grad")?;
                let ow = w / f;
                let inv = 1.0 / (f * f) as f64;
                let mut gi = Tensor::zeros(&[h, w]);
                for y in 0..h {
                    for x in 0..w {
                        gi.data_mut()[y * w + x] = g.data()[(y / f) * ow + (x / f)] * inv;
                    }
                }
                self.accumulate(cot, *a, gi)?;
            }
            Op::RowLogSoftmax(a) => {
                // d/dx of y = x - lse(x):  g - softmax(x) * rowsum(g)
                let y = &self.nodes[i].value;
                let (b, k) = y.dims2("log_softmax grad")?;
                let mut ga = g.clone();
                for r in 0..b {
                    let gs: f64 = g.data()[r * k..(r + 1) * k].iter().sum();
                    for j in 0..k {
                        let sm = y.data()[r * k + j].exp();
                        ga.data_mut()[r * k + j] -= sm * gs;
                    }
                }
                self.accumulate(cot, *a, ga)?;
            }
            Op::EmbedRows(table, labels) => {
                let (k, c) = self.nodes[table.0].value.dims2("embed grad")?;
                let mut gt = Tensor::zeros(&[k, c]);
                for (r, &l) in labels.iter().enumerate() {
                    for j in 0..c {
                        gt.data_mut()[l * c + j] += g.data()[r * c + j];
                    }
                }
                self.accumulate(cot, *table, gt)?;
            }
            Op::Reshape(a) => {
                let shape = self.nodes[a.0].value.shape().to_vec();
                self.accumulate(cot, *a, g.reshaped(&shape)?)?;
            }
        }
        Ok(())
    }

    /// Recompute every node from the leaves with the same kernels; used to
    /// check the replay invariant.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut vals: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match &node.op {
                Op::Input => node.value.clone(),
                Op::Add(a, b) => vals[a.0].add(&vals[b.0])?,
                Op::Sub(a, b) => vals[a.0].sub(&vals[b.0])?,
                Op::Mul(a, b) => vals[a.0].mul(&vals[b.0])?,
                Op::Div(a, b) => vals[a.0].div(&vals[b.0])?,
                Op::Scale(a, c) => vals[a.0].scaled(*c),
                Op::AddRow(m, r) => {
                    let (b, d) = vals[m.0].dims2("replay add_row")?;
                    let mut out = vals[m.0].clone();
                    for i in 0..b {
                        for j in 0..d {
                            out.data_mut()[i * d + j] += vals[r.0].data()[j];
                        }
                    }
                    out
                }
                Op::MatMul(a, b) => tensor::matmul(&vals[a.0], &vals[b.0])?,
                Op::Sum(a) => Tensor::scalar(vals[a.0].sum()),
                Op::Sin(a) => vals[a.0].map(f64::sin),
                Op::Silu(a) => vals[a.0].map(|x| x * sigmoid(x)),
                Op::Conv2dReflect(img, k) => tensor::conv2d_reflect(&vals[img.0], &vals[k.0])?,
                Op::AvgPool(a, f) => tensor::avgpool(&vals[a.0], *f)?,
                Op::RowLogSoftmax(a) => {
                    let x = &vals[a.0];
                    let (b, k) = x.dims2("replay lsm")?;
                    let mut out = x.clone();
                    for i in 0..b {
                        let row = &x.data()[i * k..(i + 1) * k];
                        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                        for j in 0..k {
                            out.data_mut()[i * k + j] = row[j] - lse;
                        }
                    }
                    out
                }
                Op::EmbedRows(t, labels) => {
                    let (_, c) = vals[t.0].dims2("replay embed")?;
                    let mut data = Vec::with_capacity(labels.len() * c);
                    for &l in labels {
                        data.extend_from_slice(&vals[t.0].data()[l * c..(l + 1) * c]);
                    }
                    Tensor::new(vec![labels.len(), c], data)?
                }
                Op::Reshape(a) => vals[a.0].reshaped(node.value.shape())?,
            };
            vals.push(v);
        }
        Ok(vals)
    }
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * n - 2 - i;
    }
    i as usize
}

/// Max relative error between the analytic gradient of a tape-built scalar
/// function and central finite differences with step `h`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let eval = |pt: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.input(pt.clone(), false);
        let out = f(&mut tape, v)?;
        tape.value(out).item()
    };

    let mut tape = Tape::new();
    let xv = tape.input(x.clone(), true);
    let out = f(&mut tape, xv)?;
    let grads = tape.backward(out)?;
    let analytic = grads.get_or_zero(&tape, xv);

    let mut max_err = 0.0f64;
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[i] += h;
        let fp = eval(&xp)?;
        let mut xm = x.clone();
        xm.data_mut()[i] -= h;
        let fm = eval(&xm)?;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite {
                step: i,
                detail: format!("finite-difference probe at coordinate {i}"),
            });
        }
        let numeric = (fp - fm) / (2.0 * h);
        let err = (analytic.data()[i] - numeric).abs() / numeric.abs().max(1.0);
        max_err = max_err.max(err);
    }
    Ok(max_err)
}

/// Guard for the dense Jacobian: beyond this, use vector-Jacobian products.
pub const JACOBIAN_DIM_LIMIT: usize = 4096;

/// Dense Jacobian of a tape-built vector function, one backward pass per
/// output component.
pub fn jacobian<F>(f: F, x: &Tensor) -> Result<Tensor>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let n = x.len();
    if n > JACOBIAN_DIM_LIMIT {
        return Err(Error::GuardExceeded {
            what: "jacobian input dim",
            needed: n,
            limit: JACOBIAN_DIM_LIMIT,
            hint: "use vector-Jacobian products instead of a dense Jacobian",
        });
    }
    let mut tape = Tape::new();
    let xv = tape.input(x.clone(), true);
    let out = f(&mut tape, xv)?;
    let out_shape = tape.value(out).shape().to_vec();
    let m = tape.value(out).len();
    let mut j = Tensor::zeros(&[m, n]);
    for row in 0..m {
        let mut seed = Tensor::zeros(&out_shape);
        seed.data_mut()[row] = 1.0;
        let grads = tape.backward_seeded(out, &seed)?;
        let g = grads.get_or_zero(&tape, xv);
        for col in 0..n {
            j.data_mut()[row * n + col] = g.data()[col];
        }
    }
    Ok(j)
}
