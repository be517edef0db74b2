use super::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// max over elements of |analytic - central| / max(|analytic|, |central|, 1e-8);
    /// infinite when a slope discontinuity was detected.
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_relative_error.is_finite() && self.max_relative_error < tol
    }
}

fn eval<F: Scalar>(f: &impl Fn(&mut Tape<F>, Var) -> Result<Var>, x: &Tensor<F>) -> Result<f64> {
    let mut tape = Tape::new();
    let xv = tape.leaf(x);
    let y = f(&mut tape, xv)?;
    if tape.dims(y) != (1, 1) {
        return Err(Error::Dimension {
            op: "grad_check",
            lhs: vec![tape.dims(y).0, tape.dims(y).1],
            rhs: vec![1, 1],
        });
    }
    let v = tape.value(y)[0].to_f64().unwrap_or(f64::NAN);
    if !v.is_finite() {
        return Err(Error::numeric(format!("function value is {v}")));
    }
    Ok(v)
}

/// Checks the gradient of the scalar function `f` at `x`.
///
/// Besides the central difference, the two one-sided quotients are compared:
/// when they disagree by an O(1) amount the point is a kink and that element's
/// error is reported as infinite.
pub fn grad_check<F: Scalar>(
    f: impl Fn(&mut Tape<F>, Var) -> Result<Var>,
    x: &Tensor<F>,
    step: f64,
) -> Result<GradCheck> {
    if step.is_nan() || step <= 0.0 {
        return Err(Error::config(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let mut xg = x.clone();
    xg.set_requires_grad(true);
    let f0 = eval(&f, &xg)?;

    let mut tape = Tape::new();
    let xv = tape.leaf(&xg);
    let y = f(&mut tape, xv)?;
    tape.backward(y)?;
    let analytic: Vec<f64> = match tape.grad(xv) {
        Some(g) => g.iter().map(|v| v.to_f64().unwrap()).collect(),
        None => vec![0.0; x.len()],
    };
    if analytic.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite analytic gradient"));
    }
    drop(tape);

    let mut numeric = Vec::with_capacity(x.len());
    let mut worst = (0.0f64, 0usize);
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        let base = orig.to_f64().unwrap();
        probe.data_mut()[i] = F::of(base + step);
        let fp = eval(&f, &probe)?;
        probe.data_mut()[i] = F::of(base - step);
        let fm = eval(&f, &probe)?;
        probe.data_mut()[i] = orig;

        let central = (fp - fm) / (2.0 * step);
        let forward = (fp - f0) / step;
        let backward = (f0 - fm) / step;
        let a = analytic[i];
        let jump = (forward - backward).abs();
        let err = if jump > 0.1 * forward.abs().max(backward.abs()) && jump > 100.0 * step {
            f64::INFINITY
        } else {
            (a - central).abs() / a.abs().max(central.abs()).max(1e-8)
        };
        if err > worst.0 || (err.is_infinite() && !worst.0.is_infinite()) {
            worst = (err, i);
        }
        numeric.push(central);
    }
    Ok(GradCheck {
        max_relative_error: worst.0,
        worst_index: worst.1,
        analytic,
        numeric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_is_exact() {
        let x = Tensor::<f64>::scalar(3.0);
        let r = grad_check(
            |t, x| {
                let sq = t.mul(x, x)?;
                Ok(t.sum(sq))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert_eq!(r.analytic, vec![6.0]);
        assert!((r.numeric[0] - 6.0).abs() < 1e-8);
        assert!(r.max_relative_error < 1e-9, "{}", r.max_relative_error);
    }

    #[test]
    fn abs_at_zero_is_not_passed() {
        let x = Tensor::<f64>::scalar(0.0);
        let r = grad_check(
            |t, x| {
                let a = t.abs(x);
                Ok(t.sum(a))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(!r.passes(1e-4));
        assert!(r.max_relative_error.is_infinite());
    }

    #[test]
    fn non_finite_value_is_an_error() {
        let x = Tensor::<f64>::scalar(1.0);
        let r = grad_check(|t, x| Ok(t.scale(x, f64::INFINITY)), &x, 1e-5);
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    #[test]
    fn matmul_gradient_matches_central_difference() {
        let a = Tensor::<f64>::from_fn(&[3, 4], |i| ((i * 7919) % 13) as f64 / 6.5 - 1.0);
        let b = Tensor::<f64>::from_fn(&[4, 2], |i| ((i * 104_729) % 11) as f64 / 5.5 - 1.0);
        let wrt_a = grad_check(
            |t, x| {
                let bv = t.leaf(&b);
                let p = t.matmul(x, bv)?;
                Ok(t.sum(p))
            },
            &a,
            1e-5,
        )
        .unwrap();
        assert!(
            wrt_a.max_relative_error < 1e-6,
            "{}",
            wrt_a.max_relative_error
        );
        let wrt_b = grad_check(
            |t, x| {
                let av = t.leaf(&a);
                let p = t.matmul(av, x)?;
                Ok(t.sum(p))
            },
            &b,
            1e-5,
        )
        .unwrap();
        assert!(
            wrt_b.max_relative_error < 1e-6,
            "{}",
            wrt_b.max_relative_error
        );
    }
}
