use super::dense::Tensor;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Evaluates `f` at `point` on a fresh tape, returning the scalar output.
fn eval<F>(f: &F, point: &Tensor) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let x = tape.constant(point.clone());
    let y = f(&tape, x)?;
    if y.shape() != (1, 1) {
        return Err(Error::Contract("grad_check needs a scalar function".into()));
    }
    let v = y.item();
    if !v.is_finite() {
        return Err(Error::Numeric(format!("grad_check: f evaluated to {v}")));
    }
    Ok(v)
}

/// Largest `|autodiff - central difference| / max(1, |central difference|)` over
/// every coordinate of `point`.
pub fn grad_check<F>(f: F, point: &Tensor, eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let analytic = {
        let tape = Tape::new();
        let x = tape.param(point.clone());
        let y = f(&tape, x)?;
        if y.shape() != (1, 1) {
            return Err(Error::Contract("grad_check needs a scalar function".into()));
        }
        if !y.item().is_finite() {
            return Err(Error::Numeric(format!("grad_check: f evaluated to {}", y.item())));
        }
        tape.backward(y)?;
        x.grad()
            .unwrap_or_else(|| Tensor::zeros(point.rows(), point.cols()))
    };

    let mut worst: f64 = 0.0;
    let mut probe = point.clone();
    for i in 0..point.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = eval(&f, &probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = eval(&f, &probe)?;
        probe.data_mut()[i] = orig;
        let fd = (up - down) / (2.0 * eps);
        let err = (analytic.data()[i] - fd).abs() / fd.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_is_exact() {
        let p = Tensor::from_rows(&[vec![0.3, -1.2], vec![2.0, 0.7]]);
        let err = grad_check(|_, x| Ok(x.sum()), &p, 1e-6).unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn non_finite_output_is_numeric_error() {
        let p = Tensor::scalar(1000.0);
        let r = grad_check(|_, x| Ok(x.exp().exp().sum()), &p, 1e-6);
        assert!(matches!(r, Err(Error::Numeric(_))));
    }
}
