//! Dense kernels shared by the training and inference paths.

use crate::scalar::{Layout, Scalar};

pub(crate) const LN_EPS: f64 = 1e-5;

/// `y = x · w + b` for row-major `x: [rows, d_in]`, `w: [d_in, d_out]`.
pub(crate) fn linear<T: Scalar>(x: &[T], w: &[T], b: &[T], rows: usize, d_in: usize, d_out: usize, y: &mut [T]) {
    for r in 0..rows {
        y[r * d_out..(r + 1) * d_out].copy_from_slice(b);
    }
    T::gemm(
        T::one(),
        x,
        Layout::row_major(rows, d_in),
        w,
        Layout::row_major(d_in, d_out),
        T::one(),
        y,
        Layout::row_major(rows, d_out),
    );
}

/// Accumulates the parameter gradients of [`linear`] and, if requested,
/// writes `dx = dy · wᵀ`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn linear_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    dy: &[T],
    rows: usize,
    d_in: usize,
    d_out: usize,
    dw: &mut [T],
    db: &mut [T],
    dx: Option<&mut [T]>,
) {
    T::gemm(
        T::one(),
        x,
        Layout::row_major(rows, d_in).t(),
        dy,
        Layout::row_major(rows, d_out),
        T::one(),
        dw,
        Layout::row_major(d_in, d_out),
    );
    for r in 0..rows {
        for (g, &d) in db.iter_mut().zip(&dy[r * d_out..(r + 1) * d_out]) {
            *g += d;
        }
    }
    if let Some(dx) = dx {
        T::gemm(
            T::one(),
            dy,
            Layout::row_major(rows, d_out),
            w,
            Layout::row_major(d_in, d_out).t(),
            T::zero(),
            dx,
            Layout::row_major(rows, d_in),
        );
    }
}

/// Row-wise layer normalisation. Stores the normalised input and the
/// reciprocal standard deviation when caches are provided.
pub(crate) fn layer_norm<T: Scalar>(
    x: &[T],
    gain: &[T],
    bias: &[T],
    d: usize,
    y: &mut [T],
    mut xhat: Option<&mut [T]>,
    mut rstd: Option<&mut [T]>,
) {
    let n = T::from_usize(d).unwrap();
    let eps = T::c(LN_EPS);
    for (r, (row, out)) in x.chunks_exact(d).zip(y.chunks_exact_mut(d)).enumerate() {
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let rs = T::one() / (var + eps).sqrt();
        for j in 0..d {
            let h = (row[j] - mean) * rs;
            out[j] = h * gain[j] + bias[j];
            if let Some(xh) = xhat.as_deref_mut() {
                xh[r * d + j] = h;
            }
        }
        if let Some(rsd) = rstd.as_deref_mut() {
            rsd[r] = rs;
        }
    }
}

/// Back-propagates through [`layer_norm`], accumulating into `dx`.
pub(crate) fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    xhat: &[T],
    rstd: &[T],
    gain: &[T],
    d: usize,
    dgain: &mut [T],
    dbias: &mut [T],
    dx: &mut [T],
) {
    let n = T::from_usize(d).unwrap();
    let mut dxhat = vec![T::zero(); d];
    for (r, (dyr, xh)) in dy.chunks_exact(d).zip(xhat.chunks_exact(d)).enumerate() {
        let mut mean_dxhat = T::zero();
        let mut mean_dxhat_xhat = T::zero();
        for j in 0..d {
            dgain[j] += dyr[j] * xh[j];
            dbias[j] += dyr[j];
            dxhat[j] = dyr[j] * gain[j];
            mean_dxhat += dxhat[j];
            mean_dxhat_xhat += dxhat[j] * xh[j];
        }
        mean_dxhat /= n;
        mean_dxhat_xhat /= n;
        let out = &mut dx[r * d..(r + 1) * d];
        for j in 0..d {
            out[j] += rstd[r] * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
}

const GELU_A: f64 = 0.044715;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

/// Tanh approximation of GELU.
pub(crate) fn gelu<T: Scalar>(x: T) -> T {
    let half = T::c(0.5);
    let u = T::c(SQRT_2_OVER_PI) * (x + T::c(GELU_A) * x * x * x);
    half * x * (T::one() + u.tanh())
}

pub(crate) fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::c(0.5);
    let c = T::c(SQRT_2_OVER_PI);
    let a = T::c(GELU_A);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::c(3.0) * a * x * x)
}

/// In-place softmax of one row (max-subtracted).
pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// `log Σ exp(row)`, stable.
pub(crate) fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln()
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
