use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Compares tape gradients of a scalar-valued graph against central
/// differences and returns the worst relative error over every element of
/// `input`.
///
/// The error per element is `|analytic - numeric| / max(1, |numeric|)`.
/// A non-scalar output is reduced by summation.
pub fn finite_diff_check<F>(op: F, input: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    finite_diff_check_many(|tape, vars| op(tape, vars[0]), std::slice::from_ref(input), eps)
}

/// [`finite_diff_check`] over several inputs at once; every input is
/// perturbed and checked.
pub fn finite_diff_check_many<F>(op: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Domain(format!("finite-difference eps {eps} outside [1e-7, 1e-3]")));
    }

    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = op(&mut tape, &vars)?;
        let v = tape.value(out).sum();
        if !v.is_finite() {
            return Err(Error::Numeric(format!("non-finite op value {v}")));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = op(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut work = inputs.to_vec();
    let mut worst = 0.0f64;
    for (i, grad) in analytic.iter().enumerate() {
        for j in 0..work[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + eps;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - eps;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = (grad.data()[j] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
