use std::collections::BTreeMap;

use rand::Rng;

use super::graph::{Gradients, Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Uniform Glorot initialization. For a 2-D `[fan_in, fan_out]` shape the
/// bound is `sqrt(6 / (fan_in + fan_out))`; 1-D shapes use `fan_in = 1`,
/// `fan_out = len`. Higher ranks fold the leading dimensions into `fan_in`.
pub fn glorot_init<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let bound = glorot_bound(shape);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("positive shape")
}

pub fn glorot_bound(shape: &[usize]) -> f64 {
    let (fan_in, fan_out) = match shape {
        [n] => (1, *n),
        _ => {
            let fan_out = *shape.last().unwrap();
            (shape.iter().product::<usize>() / fan_out, fan_out)
        }
    };
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Adam moment buffers for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub first: Tensor,
    pub second: Tensor,
}

/// Named parameters with their optimizer state.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    moments: BTreeMap<String, Moments>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        let shape = value.shape().to_vec();
        self.moments.insert(
            name.clone(),
            Moments {
                first: Tensor::zeros(shape.clone()),
                second: Tensor::zeros(shape),
            },
        );
        self.params.insert(name, value.with_requires_grad(true));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Consistency(format!("missing parameter `{name}`")))
    }

    pub fn moments(&self, name: &str) -> Option<&Moments> {
        self.moments.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn total_sum_squares(&self) -> f64 {
        self.params.values().map(Tensor::sum_squares).sum()
    }

    /// Per-parameter L2 norms, formatted for diagnostics.
    pub fn norm_summary(&self) -> String {
        self.params
            .iter()
            .map(|(k, v)| format!("{k}={:.4e}", v.sum_squares().sqrt()))
            .collect::<Vec<_>>()
            .join(", ")
    }

    /// Records every parameter on `graph` as a gradient-tracked leaf.
    pub fn bind(&self, graph: &mut Graph) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(k, v)| (k.clone(), graph.param(v.clone())))
            .collect();
        Bound { vars }
    }

    /// Records every parameter as a constant (no gradient).
    pub fn bind_frozen(&self, graph: &mut Graph) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(k, v)| (k.clone(), graph.constant(v.clone())))
            .collect();
        Bound { vars }
    }

    /// Copies the parameter values of `other` (optimizer state untouched).
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        for (name, value) in &other.params {
            let slot = self
                .params
                .get_mut(name)
                .ok_or_else(|| Error::Consistency(format!("unexpected parameter `{name}`")))?;
            if slot.shape() != value.shape() {
                return Err(Error::ParamShape {
                    name: name.clone(),
                    expected: slot.shape().to_vec(),
                    found: value.shape().to_vec(),
                });
            }
            slot.data_mut().copy_from_slice(value.data());
        }
        Ok(())
    }
}

/// Parameters recorded on one graph.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Consistency(format!("parameter `{name}` not bound")))
    }

    pub fn vars(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Extracts per-parameter gradients. Parameters the loss did not reach
    /// receive zero gradients.
    pub fn collect(&self, grads: &mut Gradients, store: &ParamStore) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .map(|(name, var)| {
                let g = grads
                    .take(*var)
                    .unwrap_or_else(|| Tensor::zeros(store.get(name).map_or(vec![1], |t| t.shape().to_vec())));
                (name.clone(), g)
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }

    /// One bias-corrected Adam update over every parameter in `store`.
    /// `grads` must be keyed exactly like the store.
    pub fn step(&self, store: &mut ParamStore, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        for name in store.params.keys() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::Consistency(format!("no gradient for parameter `{name}`")))?;
            if g.len() != store.params[name].len() {
                return Err(Error::ParamShape {
                    name: name.clone(),
                    expected: store.params[name].shape().to_vec(),
                    found: g.shape().to_vec(),
                });
            }
        }
        if let Some(extra) = grads.keys().find(|k| !store.params.contains_key(*k)) {
            return Err(Error::Consistency(format!("gradient for unknown parameter `{extra}`")));
        }
        store.step += 1;
        let t = store.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, param) in store.params.iter_mut() {
            let g = grads[name].data();
            let mo = store.moments.get_mut(name).expect("moments track params");
            let (m, v) = (mo.first.data_mut(), mo.second.data_mut());
            let p = param.data_mut();
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
