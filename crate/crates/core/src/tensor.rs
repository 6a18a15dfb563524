//! Dense row-major `f64` tensors.
//!
//! Shapes are checked at every operation boundary and nothing broadcasts
//! implicitly. Callers that want a row vector added to every row of a matrix
//! say so with [`Tensor::repeat_rows`].

use crate::error::{dim_err, Error, Result};
use crate::rng::SplitRng;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Contract(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Contract("ragged rows".into()));
        }
        Self::new(vec![m, n], rows.concat())
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    /// Entries drawn i.i.d. from `Normal(0, std²)`.
    pub fn randn(shape: &[usize], std: f64, rng: &mut SplitRng) -> Self {
        Self::from_fn(shape, |_| std * rng.normal())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `(rows, cols)` of a 2-D tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [m, n] => Ok((m, n)),
            _ => Err(Error::Contract(format!(
                "expected a matrix, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn get2(&self, i: usize, j: usize) -> f64 {
        let n = self.shape[1];
        self.data[i * n + j]
    }

    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::Contract(format!(
                "expected a scalar, got shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(dim_err("reshape", &self.shape, shape));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    fn zip(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(dim_err(op, &self.shape, &other.shape));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|x| x * s)
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> f64 {
        compensated_sum(self.data.iter().copied())
    }

    pub fn mean(&self) -> Result<f64> {
        if self.data.is_empty() {
            return Err(Error::Domain("mean of an empty tensor".into()));
        }
        Ok(self.sum() / self.data.len() as f64)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(dim_err("max_abs_diff", &self.shape, &other.shape));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn norm(&self) -> f64 {
        compensated_sum(self.data.iter().map(|x| x * x)).sqrt()
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2()?;
        let (k2, n) = other.dims2()?;
        if k != k2 {
            return Err(dim_err("matmul", &self.shape, &other.shape));
        }
        let mut out = vec![0.0; m * n];
        matmul_nn(&self.data, &other.data, &mut out, m, k, n);
        Tensor::new(vec![m, n], out)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = self.dims2()?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor::new(vec![n, m], out)
    }

    /// Row-wise softmax over the last dimension, max-subtracted.
    pub fn softmax_lastdim(&self) -> Result<Tensor> {
        let n = *self
            .shape
            .last()
            .ok_or_else(|| Error::Domain("softmax of a scalar".into()))?;
        if n == 0 || self.data.is_empty() && self.shape.len() < 2 {
            return Err(Error::Domain("softmax over an empty dimension".into()));
        }
        let mut out = self.data.clone();
        for row in out.chunks_mut(n) {
            softmax_in_place(row);
        }
        Tensor::new(self.shape.clone(), out)
    }

    /// Scales each row to unit root-mean-square.
    pub fn rms_norm_rows(&self, eps: f64) -> Result<Tensor> {
        let (_, n) = self.dims2()?;
        let mut out = self.data.clone();
        for row in out.chunks_mut(n.max(1)) {
            let r = rms(row, eps);
            for x in row.iter_mut() {
                *x /= r;
            }
        }
        Tensor::new(self.shape.clone(), out)
    }

    pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
        let n = match parts.first() {
            Some(p) => p.dims2()?.1,
            None => return Err(Error::Contract("concat of zero tensors".into())),
        };
        let mut data = Vec::new();
        let mut m = 0;
        for p in parts {
            let (pm, pn) = p.dims2()?;
            if pn != n {
                return Err(dim_err("concat_rows", &parts[0].shape, &p.shape));
            }
            m += pm;
            data.extend_from_slice(&p.data);
        }
        Tensor::new(vec![m, n], data)
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Tensor> {
        let (m, n) = self.dims2()?;
        if start > end || end > m {
            return Err(Error::Contract(format!(
                "row slice {start}..{end} out of bounds for {m} rows"
            )));
        }
        Tensor::new(vec![end - start, n], self.data[start * n..end * n].to_vec())
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Tensor> {
        let (m, n) = self.dims2()?;
        if start > end || end > n {
            return Err(Error::Contract(format!(
                "column slice {start}..{end} out of bounds for {n} columns"
            )));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(m * w);
        for i in 0..m {
            data.extend_from_slice(&self.data[i * n + start..i * n + end]);
        }
        Tensor::new(vec![m, w], data)
    }

    pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
        let m = match parts.first() {
            Some(p) => p.dims2()?.0,
            None => return Err(Error::Contract("concat of zero tensors".into())),
        };
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (pm, pn) = p.dims2()?;
            if pm != m {
                return Err(dim_err("concat_cols", &parts[0].shape, &p.shape));
            }
            widths.push(pn);
        }
        let n: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data[i * w..(i + 1) * w]);
            }
        }
        Tensor::new(vec![m, n], data)
    }

    /// Stacks a `1×n` row `m` times.
    pub fn repeat_rows(&self, m: usize) -> Result<Tensor> {
        let (r, n) = self.dims2()?;
        if r != 1 {
            return Err(dim_err("repeat_rows", &self.shape, &[1, n]));
        }
        let mut data = Vec::with_capacity(m * n);
        for _ in 0..m {
            data.extend_from_slice(&self.data);
        }
        Tensor::new(vec![m, n], data)
    }

    /// `out.flat[i] = self.flat[indices[i]]`, reshaped to `shape`.
    pub fn gather(&self, indices: &[usize], shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != indices.len() {
            return Err(dim_err("gather", &[indices.len()], shape));
        }
        let n = self.numel();
        let mut data = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= n {
                return Err(Error::Contract(format!("gather index {i} >= {n}")));
            }
            data.push(self.data[i]);
        }
        Tensor::new(shape.to_vec(), data)
    }
}

/// Neumaier-compensated summation.
pub fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut c = 0.0_f64;
    for x in values {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

pub(crate) fn rms(row: &[f64], eps: f64) -> f64 {
    let n = row.len().max(1) as f64;
    (row.iter().map(|x| x * x).sum::<f64>() / n + eps).sqrt()
}

/// `out[m×n] = a[m×k] · b[k×n]`
pub(crate) fn matmul_nn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

/// `out[m×n] += a[m×k] · b[n×k]ᵀ`
pub(crate) fn matmul_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                s += x * y;
            }
            out[i * n + j] += s;
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · b[m×n]`
pub(crate) fn matmul_tn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

/// `softmax(q·kᵀ/√d)·v` for a single head.
pub fn scaled_dot_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    let (_, d) = q.dims2()?;
    let (lk, dk) = k.dims2()?;
    let (lv, _) = v.dims2()?;
    if d == 0 {
        return Err(Error::Domain("attention with zero head dimension".into()));
    }
    if dk != d {
        return Err(dim_err("scaled_dot_attention", q.shape(), k.shape()));
    }
    if lk == 0 {
        return Err(Error::Domain("attention over zero keys".into()));
    }
    if lv != lk {
        return Err(dim_err("scaled_dot_attention", k.shape(), v.shape()));
    }
    let logits = q.matmul(&k.transpose()?)?.scale(1.0 / (d as f64).sqrt());
    logits.softmax_lastdim()?.matmul(v)
}
