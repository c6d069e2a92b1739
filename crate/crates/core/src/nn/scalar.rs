use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;

/// Element type of tensors and networks. Training runs in `f32`; gradient
/// checks run the same code in `f64`.
pub trait Scalar: Float + Default + Debug + Sum + Send + Sync + 'static {
    /// `c = a * b + beta * c`, row-major `c` of shape `m x n`.
    ///
    /// # Safety
    /// The strides must describe views that stay inside `a` (m x k) and
    /// `b` (k x n); `c` must hold at least `m * n` values.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        a_strides: (isize, isize),
        b: *const Self,
        b_strides: (isize, isize),
        beta: Self,
        c: *mut Self,
    );

    fn of(v: f64) -> Self {
        Self::from(v).expect("finite conversion")
    }

    fn f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        a_strides: (isize, isize),
        b: *const f32,
        b_strides: (isize, isize),
        beta: f32,
        c: *mut f32,
    ) {
        matrixmultiply::sgemm(
            m, k, n, 1.0, a, a_strides.0, a_strides.1, b, b_strides.0, b_strides.1, beta, c, n as isize, 1,
        );
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        a_strides: (isize, isize),
        b: *const f64,
        b_strides: (isize, isize),
        beta: f64,
        c: *mut f64,
    ) {
        matrixmultiply::dgemm(
            m, k, n, 1.0, a, a_strides.0, a_strides.1, b, b_strides.0, b_strides.1, beta, c, n as isize, 1,
        );
    }
}
