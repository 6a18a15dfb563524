//! Reverse-mode gradient tape over [`Tensor`] values.
//!
//! Operations are recorded in creation order, so the node list is already a
//! topological order and the backward pass is a single reverse sweep. Nodes
//! whose inputs are all non-differentiable are marked as such and skipped.

use std::sync::Arc;

use crate::error::{dim_err, Error, Result};
use crate::irope::RotaryTable;
use crate::tensor::{matmul_nt, matmul_tn, Tensor};

/// Handle to a value recorded on a [`GradTape`].
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
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    Softmax(Var),
    RmsNorm(Var, f64),
    Silu(Var),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    RepeatRows(Var),
    Reshape(Var),
    Gather(Var, Arc<[usize]>),
    Rotary(Var, Arc<RotaryTable>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct GradTape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every differentiable leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a differentiable leaf; `None` for constants.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf whose gradient will be reported by [`GradTape::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::Transpose(a), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).mul(self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).mean()?);
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::Mean(a), rg))
    }

    pub fn softmax_lastdim(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).softmax_lastdim()?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::Softmax(a), rg))
    }

    pub fn rms_norm_rows(&mut self, a: Var, eps: f64) -> Result<Var> {
        let out = self.value(a).rms_norm_rows(eps)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::RmsNorm(a, eps), rg))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * sigmoid(x));
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Silu(a), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|v| self.value(*v)).collect();
        let out = Tensor::concat_rows(&values)?;
        let rg = self.any_grad(parts);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let out = self.value(a).slice_rows(start, end)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::SliceRows(a, start), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|v| self.value(*v)).collect();
        let out = Tensor::concat_cols(&values)?;
        let rg = self.any_grad(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let out = self.value(a).slice_cols(start, end)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::SliceCols(a, start), rg))
    }

    pub fn repeat_rows(&mut self, a: Var, m: usize) -> Result<Var> {
        let out = self.value(a).repeat_rows(m)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::RepeatRows(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    pub fn gather(&mut self, a: Var, indices: Arc<[usize]>, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).gather(&indices, shape)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::Gather(a, indices), rg))
    }

    pub fn rotary(&mut self, a: Var, table: Arc<RotaryTable>) -> Result<Var> {
        let out = table.apply(self.value(a))?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::Rotary(a, table), rg))
    }

    /// `a · b + repeat(bias)`: an affine map with an explicit row-bias.
    pub fn affine(&mut self, x: Var, w: Var, bias: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        let m = self.shape(y)[0];
        let b = self.repeat_rows(bias, m)?;
        self.add(y, b)
    }

    /// Mean of squared differences.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        self.mean(sq)
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(lv.shape()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads)?;
        }

        // Report every differentiable leaf, zero-filled when unreachable.
        let mut out: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                out[i] = Some(
                    grads[i]
                        .take()
                        .unwrap_or_else(|| Tensor::zeros(node.value.shape())),
                );
            }
        }
        Ok(Gradients { grads: out })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        debug_assert_eq!(g.shape(), self.nodes[v.0].value.shape());
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k) = av.dims2()?;
                let (_, n) = bv.dims2()?;
                if self.requires_grad(*a) {
                    let mut da = vec![0.0; m * k];
                    matmul_nt(g.data(), bv.data(), &mut da, m, n, k);
                    self.accumulate(grads, *a, Tensor::new(vec![m, k], da)?);
                }
                if self.requires_grad(*b) {
                    let mut db = vec![0.0; k * n];
                    matmul_tn(av.data(), g.data(), &mut db, m, k, n);
                    self.accumulate(grads, *b, Tensor::new(vec![k, n], db)?);
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()?),
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, g.mul(self.value(*b))?);
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, g.mul(self.value(*a))?);
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.scale(*s)),
            Op::Sum(a) => {
                let shape = self.shape(*a).to_vec();
                self.accumulate(grads, *a, Tensor::full(&shape, g.item()?));
            }
            Op::Mean(a) => {
                let shape = self.shape(*a).to_vec();
                let n = self.value(*a).numel() as f64;
                self.accumulate(grads, *a, Tensor::full(&shape, g.item()? / n));
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let n = *y.shape().last().unwrap_or(&1);
                let mut dx = vec![0.0; y.numel()];
                for ((dxr, yr), gr) in dx
                    .chunks_mut(n)
                    .zip(y.data().chunks(n))
                    .zip(g.data().chunks(n))
                {
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for ((d, &yv), &gv) in dxr.iter_mut().zip(yr).zip(gr) {
                        *d = yv * (gv - dot);
                    }
                }
                self.accumulate(grads, *a, Tensor::new(y.shape().to_vec(), dx)?);
            }
            Op::RmsNorm(a, eps) => {
                let x = self.value(*a);
                let y = &node.value;
                let (_, n) = x.dims2()?;
                let mut dx = vec![0.0; x.numel()];
                if n > 0 {
                    for (((dxr, xr), yr), gr) in dx
                        .chunks_mut(n)
                        .zip(x.data().chunks(n))
                        .zip(y.data().chunks(n))
                        .zip(g.data().chunks(n))
                    {
                        let r = crate::tensor::rms(xr, *eps);
                        let dot: f64 =
                            yr.iter().zip(gr).map(|(y, g)| y * g).sum::<f64>() / n as f64;
                        for ((d, &yv), &gv) in dxr.iter_mut().zip(yr).zip(gr) {
                            *d = (gv - yv * dot) / r;
                        }
                    }
                }
                self.accumulate(grads, *a, Tensor::new(x.shape().to_vec(), dx)?);
            }
            Op::Silu(a) => {
                let x = self.value(*a);
                let dx: Vec<f64> = x
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&x, &g)| {
                        let s = sigmoid(x);
                        g * s * (1.0 + x * (1.0 - s))
                    })
                    .collect();
                self.accumulate(grads, *a, Tensor::new(x.shape().to_vec(), dx)?);
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for p in parts {
                    let rows = self.shape(*p)[0];
                    if self.requires_grad(*p) {
                        self.accumulate(grads, *p, g.slice_rows(start, start + rows)?);
                    }
                    start += rows;
                }
            }
            Op::SliceRows(a, start) => {
                let shape = self.shape(*a).to_vec();
                let n = shape[1];
                let mut full = Tensor::zeros(&shape);
                full.data_mut()[start * n..start * n + g.numel()].copy_from_slice(g.data());
                self.accumulate(grads, *a, full);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let cols = self.shape(*p)[1];
                    if self.requires_grad(*p) {
                        self.accumulate(grads, *p, g.slice_cols(start, start + cols)?);
                    }
                    start += cols;
                }
            }
            Op::SliceCols(a, start) => {
                let shape = self.shape(*a).to_vec();
                let (m, n) = (shape[0], shape[1]);
                let w = g.shape()[1];
                let mut full = Tensor::zeros(&shape);
                let data = full.data_mut();
                for i in 0..m {
                    data[i * n + start..i * n + start + w]
                        .copy_from_slice(&g.data()[i * w..(i + 1) * w]);
                }
                self.accumulate(grads, *a, full);
            }
            Op::RepeatRows(a) => {
                let n = self.shape(*a)[1];
                let mut acc = vec![0.0; n];
                if n > 0 {
                    for row in g.data().chunks(n) {
                        for (s, v) in acc.iter_mut().zip(row) {
                            *s += v;
                        }
                    }
                }
                self.accumulate(grads, *a, Tensor::new(vec![1, n], acc)?);
            }
            Op::Reshape(a) => {
                let shape = self.shape(*a).to_vec();
                self.accumulate(grads, *a, g.reshape(&shape)?);
            }
            Op::Gather(a, indices) => {
                let shape = self.shape(*a).to_vec();
                let mut full = Tensor::zeros(&shape);
                let data = full.data_mut();
                for (&i, &gv) in indices.iter().zip(g.data()) {
                    data[i] += gv;
                }
                self.accumulate(grads, *a, full);
            }
            Op::Rotary(a, table) => {
                self.accumulate(grads, *a, table.apply_transpose(g)?);
            }
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Multi-head scaled dot-product attention on the tape.
///
/// `q` is `L_q×D`, `k`/`v` are `L_k×D`, heads are contiguous column blocks.
pub fn multi_head_attention(
    tape: &mut GradTape,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
) -> Result<Var> {
    let (_, d) = tape.value(q).dims2()?;
    let (lk, dk) = tape.value(k).dims2()?;
    if dk != d || tape.value(v).dims2()? != (lk, d) {
        return Err(dim_err(
            "multi_head_attention",
            tape.shape(q),
            tape.shape(k),
        ));
    }
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!(
            "{heads} heads do not divide width {d}"
        )));
    }
    if lk == 0 {
        return Err(Error::Domain("attention over zero keys".into()));
    }
    let hd = d / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (s, e) = (h * hd, (h + 1) * hd);
        let qh = tape.slice_cols(q, s, e)?;
        let kh = tape.slice_cols(k, s, e)?;
        let vh = tape.slice_cols(v, s, e)?;
        let kt = tape.transpose(kh)?;
        let logits = tape.matmul(qh, kt)?;
        let logits = tape.scale(logits, scale);
        let probs = tape.softmax_lastdim(logits)?;
        outs.push(tape.matmul(probs, vh)?);
    }
    if outs.len() == 1 {
        Ok(outs[0])
    } else {
        tape.concat_cols(&outs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitRng;

    #[test]
    fn sum_gradient_is_ones() {
        let mut rng = SplitRng::new(0);
        let mut tape = GradTape::new();
        let x = tape.param(Tensor::randn(&[3, 4], 1.0, &mut rng));
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &Tensor::ones(&[3, 4]));
    }

    #[test]
    fn unrelated_parameter_gets_exact_zero() {
        let mut rng = SplitRng::new(1);
        let mut tape = GradTape::new();
        let x = tape.param(Tensor::randn(&[2, 2], 1.0, &mut rng));
        let p = tape.param(Tensor::randn(&[5], 1.0, &mut rng));
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert!(g.get(p).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constants_report_no_gradient() {
        let mut tape = GradTape::new();
        let c = tape.constant(Tensor::ones(&[2]));
        let p = tape.param(Tensor::ones(&[2]));
        let y = tape.mul(c, p).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(p).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn non_scalar_loss_is_contract_error() {
        let mut tape = GradTape::new();
        let p = tape.param(Tensor::ones(&[2]));
        assert!(matches!(tape.backward(p), Err(Error::Contract(_))));
    }
}
