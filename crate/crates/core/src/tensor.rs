//! Dense row-major `f64` tensors plus the arithmetic kernels shared by the
//! recording tape and the tape-free inference path. Keeping one set of
//! kernels guarantees that a value computed under a tape is bitwise equal
//! to the same value computed without one.

use crate::error::{Error, Result};

/// Dense multi-dimensional array of 64-bit floats, row-major.
///
/// An empty shape `[]` denotes a scalar (one element).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.contains(&0) || data.len() != expected {
            return Err(Error::BadTensor {
                expected,
                actual: data.len(),
                shape,
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Builds a 2-D tensor from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Shape {
                    op: "from_rows",
                    lhs: vec![rows.len(), cols],
                    rhs: vec![r.len()],
                });
            }
            data.extend_from_slice(r);
        }
        Tensor::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    /// Row count for a 2-D tensor.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Column count for a 2-D tensor.
    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    /// Rows `lo..hi` of a 2-D tensor as a new tensor.
    pub fn slice_rows(&self, lo: usize, hi: usize) -> Tensor {
        let c = self.cols();
        Tensor {
            shape: vec![hi - lo, c],
            data: self.data[lo * c..hi * c].to_vec(),
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }
}

fn require_2d(op: &'static str, t: &Tensor) -> Result<()> {
    if t.shape.len() != 2 {
        return Err(Error::Shape {
            op,
            lhs: t.shape.clone(),
            rhs: vec![],
        });
    }
    Ok(())
}

/// `[m,k] x [k,n] -> [m,n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    require_2d("matmul", a)?;
    require_2d("matmul", b)?;
    let (m, k) = (a.rows(), a.cols());
    let (k2, n) = (b.rows(), b.cols());
    if k != k2 {
        return Err(Error::Shape {
            op: "matmul",
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a.data[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b.data[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// How the right operand of `add` lines up with the left.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Broadcast {
    /// Identical shapes.
    None,
    /// Right operand is one row, repeated over the rows of the left.
    Row,
    /// Right operand is a single element.
    Scalar,
}

pub fn add_layout(a: &Tensor, b: &Tensor) -> Result<Broadcast> {
    if a.shape == b.shape {
        return Ok(Broadcast::None);
    }
    if b.numel() == 1 {
        return Ok(Broadcast::Scalar);
    }
    if a.shape.len() == 2 && b.numel() == a.cols() {
        return Ok(Broadcast::Row);
    }
    Err(Error::Shape {
        op: "add",
        lhs: a.shape.clone(),
        rhs: b.shape.clone(),
    })
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let layout = add_layout(a, b)?;
    let mut out = a.clone();
    match layout {
        Broadcast::None => {
            for (o, &v) in out.data.iter_mut().zip(&b.data) {
                *o += v;
            }
        }
        Broadcast::Scalar => {
            let v = b.data[0];
            for o in out.data.iter_mut() {
                *o += v;
            }
        }
        Broadcast::Row => {
            let c = a.cols();
            for (i, o) in out.data.iter_mut().enumerate() {
                *o += b.data[i % c];
            }
        }
    }
    Ok(out)
}

/// Elementwise product of identically shaped tensors.
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape != b.shape {
        return Err(Error::Shape {
            op: "mul",
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let mut out = a.clone();
    for (o, &v) in out.data.iter_mut().zip(&b.data) {
        *o *= v;
    }
    Ok(out)
}

pub fn scale(a: &Tensor, c: f64) -> Tensor {
    let mut out = a.clone();
    for o in out.data.iter_mut() {
        *o *= c;
    }
    out
}

pub fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let mut out = a.clone();
    for o in out.data.iter_mut() {
        *o = f(*o);
    }
    out
}

pub fn tanh(a: &Tensor) -> Tensor {
    map(a, f64::tanh)
}

pub fn relu(a: &Tensor) -> Tensor {
    map(a, |v| if v > 0.0 { v } else { 0.0 })
}

pub fn sigmoid(a: &Tensor) -> Tensor {
    map(a, |v| 1.0 / (1.0 + (-v).exp()))
}

/// Numerically stable softmax along `axis`.
pub fn softmax_axis(a: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= a.shape.len() {
        return Err(Error::Shape {
            op: "softmax",
            lhs: a.shape.clone(),
            rhs: vec![axis],
        });
    }
    let mut out = a.clone();
    for_each_lane(&a.shape, axis, |lane| {
        let mut max = f64::NEG_INFINITY;
        for &i in lane {
            max = max.max(out.data[i]);
        }
        let mut sum = 0.0;
        for &i in lane {
            out.data[i] = (out.data[i] - max).exp();
            sum += out.data[i];
        }
        for &i in lane {
            out.data[i] /= sum;
        }
    });
    Ok(out)
}

/// Invokes `f` with the flat indices of every 1-D lane along `axis`.
pub(crate) fn for_each_lane(shape: &[usize], axis: usize, mut f: impl FnMut(&[usize])) {
    let axis_len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut lane = vec![0usize; axis_len];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * axis_len * inner + i;
            for (j, slot) in lane.iter_mut().enumerate() {
                *slot = base + j * inner;
            }
            f(&lane);
        }
    }
}

pub fn sum_all(a: &Tensor) -> Tensor {
    Tensor::scalar(a.data.iter().sum())
}

pub fn mean_all(a: &Tensor) -> Tensor {
    Tensor::scalar(a.data.iter().sum::<f64>() / a.numel() as f64)
}

/// Stacks 2-D tensors along the row (instance) axis.
pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let cols = parts[0].cols();
    let mut data = Vec::new();
    let mut rows = 0;
    for p in parts {
        require_2d("concat_rows", p)?;
        if p.cols() != cols {
            return Err(Error::Shape {
                op: "concat_rows",
                lhs: parts[0].shape.clone(),
                rhs: p.shape.clone(),
            });
        }
        rows += p.rows();
        data.extend_from_slice(&p.data);
    }
    Tensor::new(vec![rows, cols], data)
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    require_2d("transpose", a)?;
    let (m, n) = (a.rows(), a.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data[i * n + j];
        }
    }
    Tensor::new(vec![n, m], out)
}

/// Clamp bound used inside the binary cross-entropy before taking logs.
pub const BCE_CLAMP: f64 = 1e-12;

/// Binary cross-entropy of a predicted score against a {0,1} label.
pub fn bce(y_prime: f64, label: u8) -> f64 {
    let p = y_prime.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    if label == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Applies per-column normalization `gamma * (x - mean) / sqrt(var + eps) + beta`
/// to the rows of a 2-D tensor. Returns the output, the normalized values,
/// and the per-column inverse standard deviations. Used for both batch and
/// running statistics so that the taped and tape-free paths share one
/// arithmetic expression.
pub fn bn_apply(
    x: &Tensor,
    mean: &[f64],
    var: &[f64],
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> (Tensor, Tensor, Vec<f64>) {
    let (k, f) = (x.rows(), x.cols());
    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
    let mut x_hat = Tensor::zeros(&[k, f]);
    let mut out = Tensor::zeros(&[k, f]);
    let g = gamma.data();
    let b = beta.data();
    for r in 0..k {
        for c in 0..f {
            let i = r * f + c;
            let h = (x.data[i] - mean[c]) * inv_std[c];
            x_hat.data_mut()[i] = h;
            out.data_mut()[i] = g[c] * h + b[c];
        }
    }
    (out, x_hat, inv_std)
}

/// Per-column mean and biased variance of a 2-D tensor.
pub fn column_stats(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (k, f) = (x.rows(), x.cols());
    let mut mean = vec![0.0; f];
    for r in 0..k {
        for (m, &v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= k as f64;
    }
    let mut var = vec![0.0; f];
    for r in 0..k {
        for ((vv, &v), &m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
            let d = v - m;
            *vv += d * d;
        }
    }
    for v in var.iter_mut() {
        *v /= k as f64;
    }
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_error_names_op() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let err = matmul(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul"), "{msg}");
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let t = Tensor::new(vec![3], vec![0.0, 0.0, 0.0]).unwrap();
        let s = softmax_axis(&t, 0).unwrap();
        for &v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let t = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 5.0]).unwrap();
        let s = softmax_axis(&t, 1).unwrap();
        for r in 0..2 {
            let sum: f64 = s.row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_over_instance_axis() {
        let t = Tensor::new(vec![2, 2], vec![0.0, 10.0, 0.0, 10.0]).unwrap();
        let s = softmax_axis(&t, 0).unwrap();
        // Each column is a softmax group; equal entries give 0.5.
        for &v in s.data() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn tanh_odd_at_origin() {
        let t = Tensor::scalar(0.0);
        assert_eq!(tanh(&t).item(), 0.0);
    }

    #[test]
    fn add_row_broadcast() {
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(vec![2], vec![10.0, 20.0]).unwrap();
        let c = add(&a, &b).unwrap();
        assert_eq!(c.data(), &[11.0, 22.0, 13.0, 24.0]);
    }

    #[test]
    fn bce_values() {
        assert!((bce(0.5, 1) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((bce(0.5, 0) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(bce(1.0 - 1e-13, 1) < 1e-10);
    }

    #[test]
    fn zero_dim_rejected() {
        assert!(Tensor::new(vec![0, 3], vec![]).is_err());
        assert!(Tensor::new(vec![2, 2], vec![1.0]).is_err());
    }

    #[test]
    fn transpose_round_trip() {
        let a = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let back = transpose(&transpose(&a).unwrap()).unwrap();
        assert_eq!(a, back);
    }

    #[test]
    fn column_stats_identical_rows() {
        let x = Tensor::new(vec![2, 2], vec![3.0, -1.0, 3.0, -1.0]).unwrap();
        let (mean, var) = column_stats(&x);
        assert_eq!(mean, vec![3.0, -1.0]);
        assert_eq!(var, vec![0.0, 0.0]);
    }
}
