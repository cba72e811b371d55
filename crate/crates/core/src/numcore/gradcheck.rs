//! Central-difference gradient verification.

use crate::error::{Error, Result};
use crate::numcore::{ParamStore, Tape, Tensor, Var};

/// Worst-case agreement between analytic and numeric gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Where the worst error occurred, e.g. `input 0[3]` or a parameter name.
    pub worst: String,
    pub checked: usize,
}

/// Gradients below this magnitude are compared on an absolute scale, since
/// finite differences cannot resolve them relatively.
pub const GRAD_FLOOR: f64 = 1e-4;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

fn eval_scalar<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: for<'a> Fn(&'a Tape<f64>, &[Var<'a, f64>]) -> Result<Var<'a, f64>>,
{
    let tape = Tape::no_grad(true);
    let vars: Vec<_> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let v = out.scalar();
    if !v.is_finite() {
        return Err(Error::NonFinite("grad_check objective".into()));
    }
    Ok(v)
}

/// Compares the tape gradient of scalar `f` w.r.t. every input element with
/// central differences of width `step`.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], step: f64) -> Result<GradCheckReport>
where
    F: for<'a> Fn(&'a Tape<f64>, &[Var<'a, f64>]) -> Result<Var<'a, f64>>,
{
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, &vars)?;
    if !out.value().is_finite() {
        return Err(Error::NonFinite("grad_check objective".into()));
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> =
        vars.iter().zip(inputs).map(|(v, t)| grads.wrt(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()))).collect();

    let mut report = GradCheckReport { max_rel_err: 0.0, worst: String::new(), checked: 0 };
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        for i in 0..input.numel() {
            let orig = input.data()[i];
            probe[k].data_mut()[i] = orig + step;
            let up = eval_scalar(&f, &probe)?;
            probe[k].data_mut()[i] = orig - step;
            let down = eval_scalar(&f, &probe)?;
            probe[k].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let e = rel_err(analytic[k].data()[i], numeric);
            report.checked += 1;
            if report.worst.is_empty() || e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst = format!("input {k}[{i}]");
            }
        }
    }
    Ok(report)
}

/// Same check over every unmasked entry of every parameter in `store`.
pub fn grad_check_params<F>(store: &ParamStore<f64>, f: F, step: f64) -> Result<GradCheckReport>
where
    F: for<'a> Fn(&'a Tape<f64>, &ParamStore<f64>) -> Result<Var<'a, f64>>,
{
    let tape = Tape::new();
    let out = f(&tape, store)?;
    if !out.value().is_finite() {
        return Err(Error::NonFinite("grad_check objective".into()));
    }
    let grads = tape.backward(out)?.into_param_grads(store);

    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let tape = Tape::no_grad(true);
        let v = f(&tape, s)?.scalar();
        if !v.is_finite() {
            return Err(Error::NonFinite("grad_check objective".into()));
        }
        Ok(v)
    };

    let mut report = GradCheckReport { max_rel_err: 0.0, worst: String::new(), checked: 0 };
    let mut probe = store.clone();
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let n = store.get(id).numel();
        for i in 0..n {
            if store.get(id).mask.as_ref().is_some_and(|m| m[i] == 0.0) {
                continue;
            }
            let orig = store.get(id).tensor.data()[i];
            probe.get_mut(id).tensor.data_mut()[i] = orig + step;
            let up = eval(&probe)?;
            probe.get_mut(id).tensor.data_mut()[i] = orig - step;
            let down = eval(&probe)?;
            probe.get_mut(id).tensor.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let e = rel_err(grads.get(id)[i], numeric);
            report.checked += 1;
            if report.worst.is_empty() || e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst = format!("{}[{i}]", store.get(id).name);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::from_f64(&[4], &[0.3, -1.2, 2.0, 0.7]).unwrap();
        let r = grad_check(|_, v| Ok(v[0].square().sum_all()), &[x], 1e-5).unwrap();
        assert!(r.max_rel_err < 1e-8, "{r:?}");
    }

    #[test]
    fn constant_function() {
        let x = Tensor::from_f64(&[3], &[1., 2., 3.]).unwrap();
        let r = grad_check(|t, v| v[0].scale(0.0).sum_all().add(t.constant(Tensor::scalar(2.0))), &[x], 1e-5).unwrap();
        assert_eq!(r.max_rel_err, 0.0);
    }

    #[test]
    fn non_finite_objective_is_reported() {
        let x = Tensor::from_f64(&[1], &[-1.0]).unwrap();
        assert!(matches!(grad_check(|_, v| Ok(v[0].ln().sum_all()), &[x], 1e-5), Err(Error::NonFinite(_))));
    }
}
