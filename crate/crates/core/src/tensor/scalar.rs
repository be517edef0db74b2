use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn tag(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

/// Floating-point element type of a tensor.
///
/// `gemm` computes `c = alpha * op(a) * op(b) + beta * c` for row-major
/// buffers. Each operand is passed as `(data, transposed, stored_cols)`.
pub trait Scalar: Float + Default + Debug + Display + Sum + Send + Sync + 'static {
    const PRECISION: Precision;

    fn of(x: f64) -> Self;

    fn gemm(
        dims: (usize, usize, usize),
        alpha: Self,
        a: (&[Self], bool, usize),
        b: (&[Self], bool, usize),
        beta: Self,
        c: &mut [Self],
    );
}

fn strides(transposed: bool, stored_cols: usize) -> (isize, isize) {
    if transposed {
        (1, stored_cols as isize)
    } else {
        (stored_cols as isize, 1)
    }
}

fn check_gemm_lengths<T>(dims: (usize, usize, usize), a: &[T], b: &[T], c: &[T]) {
    let (m, k, n) = dims;
    assert!(a.len() >= m * k, "gemm: lhs buffer too short");
    assert!(b.len() >= k * n, "gemm: rhs buffer too short");
    assert!(c.len() >= m * n, "gemm: output buffer too short");
}

macro_rules! impl_scalar {
    ($t:ty, $prec:expr, $kernel:path) => {
        impl Scalar for $t {
            const PRECISION: Precision = $prec;

            #[inline]
            fn of(x: f64) -> Self {
                x as $t
            }

            fn gemm(
                dims: (usize, usize, usize),
                alpha: Self,
                a: (&[Self], bool, usize),
                b: (&[Self], bool, usize),
                beta: Self,
                c: &mut [Self],
            ) {
                let (m, k, n) = dims;
                check_gemm_lengths(dims, a.0, b.0, c);
                if m == 0 || n == 0 {
                    return;
                }
                let (rsa, csa) = strides(a.1, a.2);
                let (rsb, csb) = strides(b.1, b.2);
                // SAFETY: buffer lengths checked above; strides describe
                // in-bounds row-major views of those buffers.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        alpha,
                        a.0.as_ptr(),
                        rsa,
                        csa,
                        b.0.as_ptr(),
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

impl_scalar!(f32, Precision::F32, matrixmultiply::sgemm);
impl_scalar!(f64, Precision::F64, matrixmultiply::dgemm);
