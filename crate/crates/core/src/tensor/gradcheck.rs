use super::graph::{Graph, Var};
use super::params::ParamStore;
use crate::error::{Error, Result};

/// Denominator floor for the relative error, so gradients that are
/// analytically zero are compared on an absolute scale.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `(parameter name, max relative error over its entries)`
    pub per_param: Vec<(String, f64)>,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

fn eval<S, F>(state: &S, f: &F) -> Result<f64>
where
    F: for<'a> Fn(&mut Graph<'a>, &'a S) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = f(&mut g, state)?;
    g.value(loss).item()
}

/// Compares analytic gradients of the scalar built by `f` against central
/// differences for every entry of every trainable parameter.
pub fn grad_check<F>(params: &mut ParamStore, f: F, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: for<'a> Fn(&mut Graph<'a>, &'a ParamStore) -> Result<Var>,
{
    grad_check_with(params, |p| p, f, h, tol)
}

/// [`grad_check`] for a value that owns its parameters, such as a model.
/// `store` gives access to the parameters that get perturbed.
pub fn grad_check_with<S, F>(
    state: &mut S,
    store: impl Fn(&mut S) -> &mut ParamStore,
    f: F,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: for<'a> Fn(&mut Graph<'a>, &'a S) -> Result<Var>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::GradCheck(format!("step h must be positive, got {h}")));
    }
    let first = eval(state, &f)?;
    let second = eval(state, &f)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::GradCheck(format!(
            "function is not deterministic ({first} vs {second})"
        )));
    }

    let analytic = {
        let mut g = Graph::new();
        let loss = f(&mut g, state)?;
        g.backward(loss)?;
        g.take_param_grads()
    };
    let params = store(state);
    let mut grads: Vec<Vec<f64>> = params.iter().map(|(_, p)| vec![0.0; p.value.numel()]).collect();
    for (id, g) in analytic.iter() {
        for (a, b) in grads[id.0].iter_mut().zip(g) {
            *a += b;
        }
    }

    let ids: Vec<_> = params.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    let mut per_param = Vec::with_capacity(ids.len());
    let mut max_rel_error: f64 = 0.0;
    for id in ids {
        let mut worst: f64 = 0.0;
        let n = store(state).value(id).numel();
        for k in 0..n {
            let orig = store(state).value(id).data()[k];
            store(state).value_mut(id).data_mut()[k] = orig + h;
            let plus = eval(state, &f);
            store(state).value_mut(id).data_mut()[k] = orig - h;
            let minus = eval(state, &f);
            store(state).value_mut(id).data_mut()[k] = orig;
            let numeric = (plus? - minus?) / (2.0 * h);
            let err = rel_error(grads[id.0][k], numeric);
            worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
        }
        max_rel_error = max_rel_error.max(worst);
        per_param.push((store(state).get(id).name.clone(), worst));
    }
    Ok(GradCheckReport {
        per_param,
        max_rel_error,
        tol,
        passed: max_rel_error < tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn quadratic_form_passes() {
        // f(x) = xᵀ A x with a fixed non-symmetric A.
        let mut s = ParamStore::new();
        let x = s.add("x", Tensor::new(vec![1, 3], vec![0.3, -0.7, 1.1]).unwrap()).unwrap();
        let a = Tensor::new(vec![3, 3], vec![2.0, 0.5, -1.0, 0.1, 1.5, 0.3, -0.4, 0.2, 3.0]).unwrap();
        let report = grad_check(
            &mut s,
            |g, p| {
                let xv = p.bind(g, x);
                let av = g.constant(a.clone());
                let ax = g.matmul(xv, av)?;
                let prod = g.mul(ax, xv)?;
                Ok(g.sum(prod))
            },
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn zero_step_is_rejected() {
        let mut s = ParamStore::new();
        let x = s.add("x", Tensor::scalar(1.0)).unwrap();
        let r = grad_check(&mut s, |g, p| Ok(p.bind(g, x)), 0.0, 1e-6);
        assert!(r.is_err());
    }

    #[test]
    fn nondeterministic_function_is_rejected() {
        use std::cell::Cell;
        let mut s = ParamStore::new();
        let x = s.add("x", Tensor::scalar(1.0)).unwrap();
        let calls = Cell::new(0.0);
        let r = grad_check(
            &mut s,
            |g, p| {
                calls.set(calls.get() + 1.0);
                let xv = p.bind(g, x);
                Ok(g.scale(xv, calls.get()))
            },
            1e-5,
            1e-6,
        );
        assert!(matches!(r, Err(Error::GradCheck(_))));
    }
}
