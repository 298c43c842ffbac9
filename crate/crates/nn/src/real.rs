use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Scalar type for network arithmetic. `f64` is the verification mode used by
/// gradient checks; `f32` is the fast training mode.
pub trait Real:
    Float + Default + Debug + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + DivAssign + 'static
{
    fn lit(v: f64) -> Self;
    fn as_f64(self) -> f64;
    /// `C = A B + beta C` on strided row-major views; `A` is m x k, `B` is k x n.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_rs: usize,
        a_cs: usize,
        b: &[Self],
        b_rs: usize,
        b_cs: usize,
        beta: Self,
        c: &mut [Self],
        c_rs: usize,
    );
}

macro_rules! gemm_impl {
    ($f:path) => {
        #[allow(clippy::too_many_arguments)]
        fn gemm(
            m: usize,
            k: usize,
            n: usize,
            a: &[Self],
            a_rs: usize,
            a_cs: usize,
            b: &[Self],
            b_rs: usize,
            b_cs: usize,
            beta: Self,
            c: &mut [Self],
            c_rs: usize,
        ) {
            if m == 0 || n == 0 {
                return;
            }
            let span = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs + 1;
            assert!(k == 0 || a.len() >= span(m, k, a_rs, a_cs), "gemm: A too short");
            assert!(k == 0 || b.len() >= span(k, n, b_rs, b_cs), "gemm: B too short");
            assert!(c.len() >= span(m, n, c_rs, 1), "gemm: C too short");
            // SAFETY: the asserts above bound every strided access inside the slices.
            unsafe {
                $f(
                    m,
                    k,
                    n,
                    1.0,
                    a.as_ptr(),
                    a_rs as isize,
                    a_cs as isize,
                    b.as_ptr(),
                    b_rs as isize,
                    b_cs as isize,
                    beta,
                    c.as_mut_ptr(),
                    c_rs as isize,
                    1,
                );
            }
        }
    };
}

impl Real for f32 {
    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    gemm_impl!(matrixmultiply::sgemm);
}

impl Real for f64 {
    #[inline]
    fn lit(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    gemm_impl!(matrixmultiply::dgemm);
}
