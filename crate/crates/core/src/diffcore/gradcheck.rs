use super::tape::{Tape, Var};
use super::tensor::{Real, Tensor};
use crate::error::Result;

/// Worst coordinate-wise relative error between the tape gradient of `f` at
/// `x` and central differences with the given `step`.
///
/// The relative error of coordinate `i` is
/// `|a_i − n_i| / max(|a_i|, |n_i|, 1e-8)`.
pub fn finite_diff_check<T, F>(mut f: F, x: &Tensor<T>, step: f64) -> Result<f64>
where
    T: Real,
    F: FnMut(&mut Tape<T>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let loss = f(&mut tape, xv)?;
    let analytic = tape.backward(loss)?.wrt(xv);

    let mut eval = |probe: Tensor<T>| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.leaf(probe);
        let out = f(&mut tape, v)?;
        Ok(tape.value(out).item().as_f64())
    };

    let mut worst = 0.0f64;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += T::from_f64(step);
        let mut minus = x.clone();
        minus.data_mut()[i] -= T::from_f64(step);
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * step);
        let a = analytic.data()[i].as_f64();
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let x = Tensor::<f64>::vector(vec![0.3, -1.7, 2.2]);
        let err = finite_diff_check(
            |t, v| {
                let s = t.square(v);
                Ok(t.sum(s))
            },
            &x,
            1e-3,
        )
        .unwrap();
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn constant_function_reports_zero() {
        let x = Tensor::<f64>::vector(vec![0.3, -1.7]);
        let err = finite_diff_check(
            |t, _| Ok(t.constant(Tensor::scalar(4.0))),
            &x,
            1e-3,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn logsumexp_gradient_is_softmax() {
        let v = vec![0.5, -1.0, 2.0, 0.1];
        let x = Tensor::<f64>::vector(v.clone());
        let err = finite_diff_check(|t, x| Ok(t.logsumexp(x)), &x, 1e-3).unwrap();
        assert!(err <= 1e-4, "{err}");

        let mut tape = Tape::<f64>::new();
        let xv = tape.leaf(x);
        let l = tape.logsumexp(xv);
        let g = tape.backward(l).unwrap().wrt(xv);
        let sm = super::super::tape::softmax_slice(&v);
        for (a, b) in g.data().iter().zip(&sm) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
