//! Central finite-difference checks for analytic gradients.

use super::graph::{Graph, Var};
use super::params::{Bound, ParamStore};
use super::tensor::Tensor;
use crate::error::Result;

/// Worst per-tensor disagreement found by a gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` of the worst
    /// input, or 0 when both gradients vanish.
    pub worst_relative_error: f64,
    pub worst_input: String,
}

fn relative_error(a: &[f64], n: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(n));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

fn scalar_of(graph: &Graph, v: Var) -> f64 {
    graph.value(v).data().iter().sum()
}

/// Checks `d f / d inputs[i]` for each input. `f` must build a scalar (or is
/// summed) from the recorded inputs.
pub fn check_inputs<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(scalar_of(&g, out))
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let out = g.sum(out);
    let grads = g.backward(out);

    let mut report = GradReport {
        worst_relative_error: 0.0,
        worst_input: String::new(),
    };
    let mut values = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .map_or_else(|| vec![0.0; inputs[i].len()], |t| t.data().to_vec());
        let mut numeric = vec![0.0; inputs[i].len()];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let x = inputs[i].data()[k];
            values[i].data_mut()[k] = x + h;
            let plus = eval(&values)?;
            values[i].data_mut()[k] = x - h;
            let minus = eval(&values)?;
            values[i].data_mut()[k] = x;
            *slot = (plus - minus) / (2.0 * h);
        }
        let err = relative_error(&analytic, &numeric);
        if err >= report.worst_relative_error {
            report.worst_relative_error = err;
            report.worst_input = format!("input {i}");
        }
    }
    Ok(report)
}

/// Checks the gradient of `f` with respect to every parameter in `store`.
pub fn check_params<F>(store: &ParamStore, h: f64, f: F) -> Result<GradReport>
where
    F: Fn(&mut Graph, &Bound) -> Result<Var>,
{
    let names: Vec<String> = store.names().map(str::to_string).collect();
    let mut g = Graph::new();
    let bound = store.bind(&mut g);
    let out = f(&mut g, &bound)?;
    let mut grads = g.backward(out);
    let analytic = bound.collect(&mut grads, store);

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let b = s.bind(&mut g);
        let out = f(&mut g, &b)?;
        Ok(scalar_of(&g, out))
    };
    let mut work = store.clone();
    let mut report = GradReport {
        worst_relative_error: 0.0,
        worst_input: String::new(),
    };
    for name in &names {
        let len = store.require(name)?.len();
        let mut numeric = vec![0.0; len];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let x = store.require(name)?.data()[k];
            work.get_mut(name).expect("known name").data_mut()[k] = x + h;
            let plus = eval(&work)?;
            work.get_mut(name).expect("known name").data_mut()[k] = x - h;
            let minus = eval(&work)?;
            work.get_mut(name).expect("known name").data_mut()[k] = x;
            *slot = (plus - minus) / (2.0 * h);
        }
        let err = relative_error(analytic[name].data(), &numeric);
        if err >= report.worst_relative_error {
            report.worst_relative_error = err;
            report.worst_input = name.clone();
        }
    }
    Ok(report)
}
