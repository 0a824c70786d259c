//! Minimal dense-matrix helpers over flat row-major `Vec` buffers.
//!
//! Everything in the model is a contiguous slice plus explicit shape
//! arguments, llm.c style. GEMMs go through `matrixmultiply`, which picks
//! SIMD kernels at runtime; the rest are plain loops the compiler
//! vectorizes fine.

/// Scalar element type of the model math. Training uses `f32`; the
/// gradient-check suite instantiates the same code at `f64`.
pub trait Scalar:
    num_traits::Float + Send + Sync + 'static + std::fmt::Debug + std::iter::Sum
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
    /// c[m,n] (+)= a[m,k] @ b[k,n], all row-major. `beta` 0 overwrites, 1 accumulates.
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]);
    /// c[m,n] (+)= a[k,m]^T @ b[k,n].
    fn gemm_at_b(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]);
    /// c[m,n] (+)= a[m,k] @ b[n,k]^T.
    fn gemm_a_bt(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]);
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            #[inline]
            fn from_f64(x: f64) -> Self {
                x as $t
            }
            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }
            fn gemm(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                unsafe {
                    $gemm(
                        m, k, n, 1.0,
                        a.as_ptr(), k as isize, 1,
                        b.as_ptr(), n as isize, 1,
                        beta,
                        c.as_mut_ptr(), n as isize, 1,
                    );
                }
            }
            fn gemm_at_b(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]) {
                assert!(a.len() >= k * m && b.len() >= k * n && c.len() >= m * n);
                unsafe {
                    $gemm(
                        m, k, n, 1.0,
                        a.as_ptr(), 1, m as isize, // a viewed transposed
                        b.as_ptr(), n as isize, 1,
                        beta,
                        c.as_mut_ptr(), n as isize, 1,
                    );
                }
            }
            fn gemm_a_bt(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]) {
                assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
                unsafe {
                    $gemm(
                        m, k, n, 1.0,
                        a.as_ptr(), k as isize, 1,
                        b.as_ptr(), 1, k as isize, // b viewed transposed
                        beta,
                        c.as_mut_ptr(), n as isize, 1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Global L2 norm of a flat buffer, accumulated in f64.
pub fn l2_norm<T: Scalar>(x: &[T]) -> f64 {
    x.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt()
}

/// In-place scale.
pub fn scale<T: Scalar>(x: &mut [T], s: T) {
    let s = s.as_f64();
    for v in x.iter_mut() {
        *v = T::from_f64(v.as_f64() * s);
    }
}
