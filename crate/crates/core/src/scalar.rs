//! Floating-point abstraction used by every numeric kernel in the crate.
//!
//! Models, losses and optimizers are written once against [`Scalar`] and
//! instantiated for `f32` (training and serving) and `f64` (gradient
//! checking). Matrix products dispatch to the matching `matrixmultiply`
//! kernel.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use serde::{Deserialize, Serialize};

/// Element type stored in a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// A strided matrix view: `rows × cols`, element `(i, j)` at
/// `i * row_stride + j * col_stride`.
#[derive(Debug, Clone, Copy)]
pub struct Layout {
    pub rows: usize,
    pub cols: usize,
    pub row_stride: isize,
    pub col_stride: isize,
}

impl Layout {
    pub fn row_major(rows: usize, cols: usize) -> Self {
        Self { rows, cols, row_stride: cols as isize, col_stride: 1 }
    }

    /// Row-major with an explicit leading dimension (for column slices of a
    /// wider matrix).
    pub fn strided(rows: usize, cols: usize, ld: usize) -> Self {
        Self { rows, cols, row_stride: ld as isize, col_stride: 1 }
    }

    /// The transpose of this view, without moving data.
    pub fn t(self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }

    fn max_offset(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            return 0;
        }
        ((self.rows - 1) as isize * self.row_stride + (self.cols - 1) as isize * self.col_stride)
            as usize
    }
}

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Default
    + Debug
    + Display
    + Sum
    + Send
    + Sync
    + 'static
{
    const DTYPE: Dtype;

    /// `c = alpha * a · b + beta * c` over strided views.
    ///
    /// Panics if the views are inconsistent or exceed their slices.
    fn gemm(alpha: Self, a: &[Self], la: Layout, b: &[Self], lb: Layout, beta: Self, c: &mut [Self], lc: Layout);

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("constant representable")
    }
}

fn check_gemm(la: &Layout, lb: &Layout, lc: &Layout, na: usize, nb: usize, nc: usize) {
    assert_eq!(la.cols, lb.rows, "gemm inner dimension mismatch");
    assert_eq!(la.rows, lc.rows, "gemm output rows mismatch");
    assert_eq!(lb.cols, lc.cols, "gemm output cols mismatch");
    for (l, n) in [(la, na), (lb, nb), (lc, nc)] {
        assert!(l.row_stride >= 0 && l.col_stride >= 0, "negative strides unsupported");
        if l.rows > 0 && l.cols > 0 {
            assert!(l.max_offset() < n, "gemm view exceeds slice");
        }
    }
}

macro_rules! impl_scalar {
    ($t:ty, $dtype:expr, $kernel:path) => {
        impl Scalar for $t {
            const DTYPE: Dtype = $dtype;

            fn gemm(
                alpha: Self,
                a: &[Self],
                la: Layout,
                b: &[Self],
                lb: Layout,
                beta: Self,
                c: &mut [Self],
                lc: Layout,
            ) {
                check_gemm(&la, &lb, &lc, a.len(), b.len(), c.len());
                if lc.rows == 0 || lc.cols == 0 {
                    return;
                }
                // SAFETY: every view was bounds-checked against its slice
                // above, strides are non-negative and `c` is uniquely
                // borrowed.
                unsafe {
                    $kernel(
                        la.rows,
                        la.cols,
                        lb.cols,
                        alpha,
                        a.as_ptr(),
                        la.row_stride,
                        la.col_stride,
                        b.as_ptr(),
                        lb.row_stride,
                        lb.col_stride,
                        beta,
                        c.as_mut_ptr(),
                        lc.row_stride,
                        lc.col_stride,
                    );
                }
            }

            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            fn read_le(bytes: &[u8]) -> Self {
                <$t>::from_le_bytes(bytes.try_into().expect("element width"))
            }
        }
    };
}

impl_scalar!(f32, Dtype::F32, matrixmultiply::sgemm);
impl_scalar!(f64, Dtype::F64, matrixmultiply::dgemm);

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                c[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
            }
        }
        c
    }

    #[test]
    fn gemm_matches_naive_product() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64).sin()).collect();
        let mut c = vec![0.0; m * n];
        f64::gemm(1.0, &a, Layout::row_major(m, k), &b, Layout::row_major(k, n), 0.0, &mut c, Layout::row_major(m, n));
        for (x, y) in c.iter().zip(naive(&a, &b, m, k, n)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn transposed_view_reads_columns() {
        // a is stored as k×m; multiply aᵀ·b.
        let (m, k, n) = (2, 3, 2);
        let a_t: Vec<f32> = vec![1., 2., 3., 4., 5., 6.]; // rows: [1,2],[3,4],[5,6]
        let b: Vec<f32> = vec![1., 0., 0., 1., 1., 1.];
        let mut c = vec![0.0f32; m * n];
        f32::gemm(1.0, &a_t, Layout::row_major(k, m).t(), &b, Layout::row_major(k, n), 0.0, &mut c, Layout::row_major(m, n));
        assert_eq!(c, vec![6., 8., 8., 10.]);
    }

    #[test]
    fn le_bytes_round_trip() {
        let mut buf = Vec::new();
        (-1.25f32).write_le(&mut buf);
        std::f64::consts::PI.write_le(&mut buf);
        assert_eq!(f32::read_le(&buf[..4]), -1.25);
        assert_eq!(f64::read_le(&buf[4..]), std::f64::consts::PI);
    }
}
