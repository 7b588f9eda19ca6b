use crate::error::{Error, Result};
use crate::real::Real;

use super::array::RealArray;

/// Central-difference gradient of a scalar function, one coordinate at a
/// time: `(f(θ + ε·e_i) - f(θ - ε·e_i)) / 2ε`.
///
/// This is the independent oracle for the tape's backward pass: it only
/// ever calls `f`, never the reverse sweep. `f` must be deterministic
/// (freeze any RNG before calling).
pub fn finite_difference_grad<T, F>(
    mut f: F,
    params: &[RealArray<T>],
    epsilon: T,
) -> Result<Vec<RealArray<T>>>
where
    T: Real,
    F: FnMut(&[RealArray<T>]) -> Result<T>,
{
    if epsilon <= T::zero() {
        return Err(Error::contract(format!(
            "finite difference epsilon must be positive, got {epsilon}"
        )));
    }
    let mut work: Vec<RealArray<T>> = params.to_vec();
    let mut grads = Vec::with_capacity(params.len());
    let two_eps = T::of(2.0) * epsilon;

    for p in 0..params.len() {
        let mut grad = RealArray::zeros(params[p].shape().to_vec());
        for i in 0..params[p].numel() {
            let base = params[p].data()[i];

            work[p].data_mut()[i] = base + epsilon;
            let plus = f(&work)?;
            work[p].data_mut()[i] = base - epsilon;
            let minus = f(&work)?;
            work[p].data_mut()[i] = base;

            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("finite difference evaluation of parameter {p}"),
                    index: i,
                });
            }
            grad.data_mut()[i] = (plus - minus) / two_eps;
        }
        grads.push(grad);
    }
    Ok(grads)
}

/// Relative disagreement between two gradient values, with a floor so that
/// near-zero pairs compare as equal instead of dividing by noise.
pub fn grad_rel_err(a: f64, b: f64) -> f64 {
    let mag = a.abs().max(b.abs());
    if mag < 1e-8 {
        0.0
    } else {
        (a - b).abs() / mag
    }
}

/// Worst relative disagreement across two gradient arrays.
pub fn max_rel_err<T: Real>(tape: &RealArray<T>, fd: &RealArray<T>) -> f64 {
    tape.data()
        .iter()
        .zip(fd.data())
        .map(|(&a, &b)| grad_rel_err(a.as_f64(), b.as_f64()))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivative_of_square_at_three() {
        let p = [RealArray::scalar(3.0f64)];
        let g = finite_difference_grad(|ps| Ok(ps[0].data()[0] * ps[0].data()[0]), &p, 1e-5)
            .unwrap();
        assert!((g[0].data()[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn derivative_of_sine_at_zero() {
        let p = [RealArray::scalar(0.0f64)];
        let g = finite_difference_grad(|ps| Ok(ps[0].data()[0].sin()), &p, 1e-5).unwrap();
        assert!((g[0].data()[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn non_positive_epsilon_rejected() {
        let p = [RealArray::scalar(1.0f64)];
        assert!(finite_difference_grad(|_| Ok(0.0), &p, 0.0).is_err());
    }

    #[test]
    fn non_finite_evaluation_reports_coordinate() {
        let p = [RealArray::vector(vec![1.0f64, -1.0])];
        let err = finite_difference_grad(
            |ps| {
                let x = ps[0].data()[1];
                Ok(if x < -1.0 { f64::NAN } else { x })
            },
            &p,
            1e-5,
        )
        .unwrap_err();
        match err {
            Error::NonFinite { index, .. } => assert_eq!(index, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }
}
