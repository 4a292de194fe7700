use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point element type of the numeric core.
///
/// Everything above the tensor layer is written against this trait; `f64` is
/// the default used by the model and experiment harness.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// `c = a · b (+ c if accumulate)` for row-major storage.
    ///
    /// `a` is logically `m×k`; with `a_t` set its storage is the `k×m`
    /// transpose. Same for `b` (`k×n`, stored `n×k` with `b_t`).
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_t: bool,
        b: &[Self],
        b_t: bool,
        c: &mut [Self],
        accumulate: bool,
    ) {
        naive_gemm(m, k, n, a, a_t, b, b_t, c, accumulate)
    }

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

#[allow(clippy::too_many_arguments)]
fn naive_gemm<S: Float + NumAssign>(
    m: usize,
    k: usize,
    n: usize,
    a: &[S],
    a_t: bool,
    b: &[S],
    b_t: bool,
    c: &mut [S],
    accumulate: bool,
) {
    if !accumulate {
        c.iter_mut().for_each(|x| *x = S::zero());
    }
    for i in 0..m {
        for p in 0..k {
            let av = if a_t { a[p * m + i] } else { a[i * k + p] };
            if av == S::zero() {
                continue;
            }
            let row = &mut c[i * n..(i + 1) * n];
            if b_t {
                for (j, cj) in row.iter_mut().enumerate() {
                    *cj += av * b[j * k + p];
                }
            } else {
                for (cj, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                    *cj += av * bv;
                }
            }
        }
    }
}

fn strides(rows: usize, cols: usize, transposed: bool) -> (isize, isize) {
    if transposed {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! blas_scalar {
    ($t:ty, $kernel:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_t: bool,
                b: &[Self],
                b_t: bool,
                c: &mut [Self],
                accumulate: bool,
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                let (rsa, csa) = strides(m, k, a_t);
                let (rsb, csb) = strides(k, n, b_t);
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: the slices cover the strided extents asserted above
                // and `c` does not alias `a` or `b`.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

blas_scalar!(f64, matrixmultiply::dgemm);
blas_scalar!(f32, matrixmultiply::sgemm);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_matches_naive_for_all_transpose_flags() {
        let a: Vec<f64> = (0..6).map(|x| x as f64 * 0.5 - 1.0).collect();
        let b: Vec<f64> = (0..12).map(|x| (x as f64).sin()).collect();
        for &(a_t, b_t) in &[(false, false), (true, false), (false, true), (true, true)] {
            let mut fast = vec![1.0; 8];
            let mut slow = vec![1.0; 8];
            f64::gemm(2, 3, 4, &a, a_t, &b, b_t, &mut fast, true);
            naive_gemm(2, 3, 4, &a, a_t, &b, b_t, &mut slow, true);
            for (x, y) in fast.iter().zip(&slow) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
