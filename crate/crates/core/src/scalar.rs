use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2, LinalgScalar};
use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of tensors and parameters: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + Debug
    + Display
    + Default
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; exact for `f64`, rounded for `f32`.
    fn of(x: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// `c = op(a) · op(b) + beta · c` on row-major slices, where `op(a)` is `m×k`
/// and `op(b)` is `k×n`. A transposed operand is stored in its untransposed
/// (`k×m` / `n×k`) layout.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<S: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[S],
    transpose_a: bool,
    b: &[S],
    transpose_b: bool,
    beta: S,
    c: &mut [S],
) {
    let a = if transpose_a {
        ArrayView2::from_shape((k, m), a).expect("gemm lhs extent").reversed_axes()
    } else {
        ArrayView2::from_shape((m, k), a).expect("gemm lhs extent")
    };
    let b = if transpose_b {
        ArrayView2::from_shape((n, k), b).expect("gemm rhs extent").reversed_axes()
    } else {
        ArrayView2::from_shape((k, n), b).expect("gemm rhs extent")
    };
    let mut c = ArrayViewMut2::from_shape((m, n), c).expect("gemm output extent");
    general_mat_mul(S::one(), &a, &b, beta, &mut c);
}
