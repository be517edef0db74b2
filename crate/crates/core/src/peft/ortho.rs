use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Rows whose norm falls below this after projection count as dependent.
const RANK_TOL: f64 = 1e-6;

/// Two-pass modified Gram-Schmidt over the rows of `r`, in place.
///
/// Arithmetic runs in f64 whatever the storage precision.
pub fn reorthonormalize<F: Scalar>(r: &mut Tensor<F>) -> Result<()> {
    let (rows, cols) = r.matrix_dims();
    if rows > cols {
        return Err(Error::numeric(format!(
            "cannot orthonormalise {rows} rows in dimension {cols}"
        )));
    }
    let mut m: Vec<f64> = r
        .data()
        .iter()
        .map(|x| x.to_f64().unwrap_or(f64::NAN))
        .collect();
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::numeric("projection has non-finite entries"));
    }
    for i in 0..rows {
        let original = norm(&m[i * cols..(i + 1) * cols]);
        for _pass in 0..2 {
            for j in 0..i {
                let (done, rest) = m.split_at_mut(i * cols);
                let q = &done[j * cols..(j + 1) * cols];
                let v = &mut rest[..cols];
                let dot: f64 = q.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(x, &y)| *x -= dot * y);
            }
        }
        let v = &mut m[i * cols..(i + 1) * cols];
        let n = norm(v);
        if n.is_nan() || n <= RANK_TOL * original.max(1.0) {
            return Err(Error::numeric(format!(
                "row {i} is linearly dependent on earlier rows"
            )));
        }
        v.iter_mut().for_each(|x| *x /= n);
    }
    r.data_mut()
        .iter_mut()
        .zip(&m)
        .for_each(|(x, &y)| *x = F::of(y));
    Ok(())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `max |R R^T - I|` over all entries.
pub fn orthonormality_error<F: Scalar>(r: &Tensor<F>) -> f64 {
    let (rows, cols) = r.matrix_dims();
    let d: Vec<f64> = r
        .data()
        .iter()
        .map(|x| x.to_f64().unwrap_or(f64::NAN))
        .collect();
    let mut worst: f64 = 0.0;
    for i in 0..rows {
        for j in 0..rows {
            let dot: f64 = (0..cols).map(|k| d[i * cols + k] * d[j * cols + k]).sum();
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot - target).abs());
        }
    }
    worst
}

/// Gaussian `rows x cols` matrix orthonormalised by rows.
pub fn random_orthonormal<F: Scalar>(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
) -> Result<Tensor<F>> {
    let mut t = Tensor::from_fn(&[rows, cols], |_| {
        let z: f64 = StandardNormal.sample(rng);
        F::of(z)
    });
    reorthonormalize(&mut t)?;
    Ok(t)
}
