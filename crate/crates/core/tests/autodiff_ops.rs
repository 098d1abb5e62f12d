//! Finite-difference checks of every differentiable graph operation, plus
//! optimizer and tape behaviour.

mod common;

use eventcause::autodiff::{Adam, Graph, ParamStore, Tensor};

#[test]
fn every_operation_matches_finite_differences() {
    let errors = common::op_gradient_errors();
    assert!(errors.len() >= 29);
    for (name, err) in errors {
        assert!(err < 1e-6, "{name}: relative error {err}");
    }
}

#[test]
fn reused_variables_accumulate_gradients() {
    let mut g = Graph::new();
    let x = g.param(Tensor::vector(vec![3.0]));
    let y = g.hadamard(x, x).unwrap();
    let z = g.add(y, x).unwrap();
    let s = g.sum(z);
    let grads = g.backward(s);
    // d/dx (x² + x) = 2x + 1.
    assert_eq!(grads.get(x).unwrap().data(), &[7.0]);
}

#[test]
fn frozen_parameters_receive_no_gradient() {
    let mut store = ParamStore::new();
    store.insert("w", Tensor::vector(vec![1.0, 2.0]));
    let mut g = Graph::new();
    let p = store.bind_frozen(&mut g);
    let w = p.var("w").unwrap();
    let s = g.sum_squares(w);
    let mut grads = g.backward(s);
    assert!(grads.get(w).is_none());
    let collected = p.collect(&mut grads, &store);
    assert_eq!(collected["w"].data(), &[0.0, 0.0]);
}

#[test]
fn shape_errors_are_reported() {
    let mut g = Graph::new();
    let a = g.param(Tensor::zeros(vec![2, 3]));
    let b = g.param(Tensor::zeros(vec![2, 3]));
    assert!(g.matmul(a, b).is_err());
    let tall = g.constant(Tensor::zeros(vec![3, 1]));
    assert!(g.concat_cols(a, tall).is_err());
    assert!(g.gather_rows(a, vec![5]).is_err());
    assert!(g.causal_conv(a, b, 2, 0).is_err());
}

#[test]
fn adam_first_step_matches_hand_computation() {
    let mut store = ParamStore::new();
    store.insert("w", Tensor::vector(vec![1.0, -2.0]));
    let grads = [("w".to_string(), Tensor::vector(vec![0.5, -4.0]))]
        .into_iter()
        .collect();
    let adam = Adam::new(0.1);
    adam.step(&mut store, &grads).unwrap();
    // With bias correction the first step is lr · g / (|g| + ε).
    let expect = |p: f64, g: f64| p - 0.1 * g / (g.abs() + 1e-8);
    let w = store.get("w").unwrap().data();
    assert!((w[0] - expect(1.0, 0.5)).abs() < 1e-15);
    assert!((w[1] - expect(-2.0, -4.0)).abs() < 1e-15);
    assert_eq!(store.step(), 1);
}

#[test]
fn adam_minimizes_a_quadratic() {
    let mut store = ParamStore::new();
    store.insert("w", Tensor::vector(vec![4.0, -3.0, 0.5]));
    let target = [1.0, 2.0, -1.0];
    let adam = Adam::new(0.05);
    for _ in 0..2000 {
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let w = p.var("w").unwrap();
        let t = g.constant(Tensor::vector(target.to_vec()));
        let d = g.sub(w, t).unwrap();
        let loss = g.sum_squares(d);
        let mut grads = g.backward(loss);
        let grads = p.collect(&mut grads, &store);
        adam.step(&mut store, &grads).unwrap();
    }
    for (w, t) in store.get("w").unwrap().data().iter().zip(target) {
        assert!((w - t).abs() < 1e-3, "{w} vs {t}");
    }
}

#[test]
fn adam_rejects_mismatched_gradients() {
    let mut store = ParamStore::new();
    store.insert("w", Tensor::vector(vec![1.0]));
    let adam = Adam::default();
    let missing = std::collections::BTreeMap::new();
    assert!(adam.step(&mut store, &missing).is_err());
    let wrong = [("w".to_string(), Tensor::vector(vec![1.0, 2.0]))]
        .into_iter()
        .collect();
    assert!(adam.step(&mut store, &wrong).is_err());
}
