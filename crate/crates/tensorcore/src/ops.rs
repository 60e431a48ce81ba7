//! Forward kernels shared by the tape and by callers that need plain values.

use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tensor::Tensor;

/// In-place numerically stable softmax of a contiguous slice.
pub fn softmax_in_place<T: Real>(xs: &mut [T]) {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum = sum + *x;
    }
    for x in xs.iter_mut() {
        *x = *x / sum;
    }
}

/// Softmax of a rank-1 or rank-2 tensor along `axis`.
///
/// The maximum is subtracted along the axis first, so adding a constant to
/// every input along that axis leaves the output unchanged.
pub fn softmax<T: Real>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let shape = x.shape().to_vec();
    if shape.len() > 2 || shape.is_empty() {
        return Err(TensorError::Rank {
            op: "softmax",
            expected: 2,
            shape,
        });
    }
    if axis >= shape.len() {
        return Err(TensorError::Axis { axis, shape });
    }
    if shape[axis] == 0 {
        return Err(TensorError::EmptyAxis { op: "softmax", axis });
    }
    let mut out = x.data().to_vec();
    let (rows, cols) = if shape.len() == 1 { (1, shape[0]) } else { (shape[0], shape[1]) };
    let along_rows = shape.len() == 1 || axis == 1;
    if along_rows {
        for r in out.chunks_mut(cols) {
            softmax_in_place(r);
        }
    } else {
        let mut column = vec![T::zero(); rows];
        for c in 0..cols {
            for r in 0..rows {
                column[r] = out[r * cols + c];
            }
            softmax_in_place(&mut column);
            for r in 0..rows {
                out[r * cols + c] = column[r];
            }
        }
    }
    Tensor::new(shape, out)
}

/// Normalizes one feature vector: `gain * (x - mean) / sqrt(var + eps) + bias`.
///
/// Returns the output together with the normalized input and the reciprocal
/// standard deviation, which the backward pass reuses.
pub fn layer_norm_row<T: Real>(x: &[T], gain: &[T], bias: &[T], eps: T, out: &mut [T], xhat: &mut [T]) -> T {
    let n = T::from_f64(x.len() as f64);
    let mean = x.iter().copied().sum::<T>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let rstd = (var + eps).sqrt().recip();
    for i in 0..x.len() {
        xhat[i] = (x[i] - mean) * rstd;
        out[i] = gain[i] * xhat[i] + bias[i];
    }
    rstd
}

/// Layer normalization of a single vector.
pub fn layer_norm<T: Real>(x: &[T], gain: &[T], bias: &[T], eps: T) -> Result<Vec<T>> {
    if gain.len() != x.len() || bias.len() != x.len() {
        return Err(TensorError::ShapeMismatch {
            op: "layer_norm",
            lhs: vec![x.len()],
            rhs: vec![gain.len(), bias.len()],
        });
    }
    if x.is_empty() {
        return Err(TensorError::EmptyAxis { op: "layer_norm", axis: 0 });
    }
    let mut out = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    layer_norm_row(x, gain, bias, eps, &mut out, &mut xhat);
    Ok(out)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// GELU, tanh approximation.
pub fn gelu<T: Real>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

pub fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    let three = T::from_f64(3.0);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * a * x * x)
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `a[m,k] · b[k,n]`.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = rank2("matmul", a)?;
    let (k2, n) = rank2("matmul", b)?;
    if k != k2 {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = vec![T::zero(); m * n];
    T::gemm(
        m,
        k,
        n,
        T::one(),
        a.data(),
        k as isize,
        1,
        b.data(),
        n as isize,
        1,
        T::zero(),
        &mut out,
        n as isize,
        1,
    );
    Tensor::new([m, n], out)
}

pub(crate) fn rank2<T: Real>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize)> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        s => Err(TensorError::Rank {
            op,
            expected: 2,
            shape: s.to_vec(),
        }),
    }
}
