//! Central finite-difference gradient checking.

use std::collections::BTreeMap;

use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Named tensors handed to a checked function, already registered on its tape.
pub type ParamVars = BTreeMap<String, Var>;

/// Compares analytic gradients of `f` against central differences, returning
/// the maximum relative error per parameter. Relative error of a coordinate is
/// `|a − n| / max(|a|, |n|, 1e-8)`.
///
/// `f` records a scalar on the tape it is given; it must be deterministic for
/// fixed parameter values.
pub fn grad_check<F, Fun>(f: Fun, params: &BTreeMap<String, Tensor<F>>, eps: F) -> Result<BTreeMap<String, f64>>
where
    F: Scalar,
    Fun: Fn(&mut Tape<F>, &ParamVars) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: ParamVars = params
        .iter()
        .map(|(name, t)| (name.clone(), tape.param(name.clone(), t.clone())))
        .collect();
    let loss = f(&mut tape, &vars)?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Numerical(format!("checked function returned {value}")));
    }
    tape.backward(loss)?;
    let analytic: BTreeMap<&String, Option<Tensor<F>>> =
        vars.iter().map(|(name, v)| (name, tape.grad(*v))).collect();

    let evaluate = |perturbed: &BTreeMap<String, Tensor<F>>| -> Result<f64> {
        let mut tape = Tape::inference();
        let vars: ParamVars = perturbed
            .iter()
            .map(|(name, t)| (name.clone(), tape.constant(t.clone())))
            .collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out).item().as_f64();
        if !v.is_finite() {
            return Err(Error::Numerical(format!("checked function returned {v} under perturbation")));
        }
        Ok(v)
    };

    let mut work = params.clone();
    let mut report = BTreeMap::new();
    let two_eps = 2.0 * eps.as_f64();
    for (name, tensor) in params {
        let grad = analytic[name].as_ref();
        let mut worst = 0.0f64;
        for idx in 0..tensor.len() {
            let original = tensor.data()[idx];
            work.get_mut(name).expect("same keys").data_mut()[idx] = original + eps;
            let up = evaluate(&work)?;
            work.get_mut(name).expect("same keys").data_mut()[idx] = original - eps;
            let down = evaluate(&work)?;
            work.get_mut(name).expect("same keys").data_mut()[idx] = original;

            let numeric = (up - down) / two_eps;
            let a = grad.map_or(0.0, |g| g.data()[idx].as_f64());
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
        report.insert(name.clone(), worst);
    }
    Ok(report)
}

/// Largest entry of a [`grad_check`] report.
pub fn max_error(report: &BTreeMap<String, f64>) -> f64 {
    report.values().copied().fold(0.0, f64::max)
}
