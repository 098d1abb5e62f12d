use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::gradcheck::check_params;
use crate::autodiff::{bce_scalar, mmd_linear_sq};
use crate::data::{split, SplitMode};
use crate::synth::{generate, SyntheticConfig};

fn mini_config() -> CausalConfig {
    CausalConfig {
        hidden: 4,
        embed_dim: 3,
        dropout: 0.0,
        imbalance: 0.3,
        weight_decay: 1e-3,
        batch_frames: 4,
        ..CausalConfig::default()
    }
}

fn mini_dims() -> Dims {
    Dims {
        locations: 3,
        event_types: 2,
        window: 7,
    }
}

fn mini_batch(frames: usize, seed: u64) -> (Tensor, BatchTargets) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = mini_dims();
    let n = frames * d.locations;
    let x = (0..n * d.window * d.event_types)
        .map(|_| f64::from(rng.random_range(0..6u8)))
        .collect();
    let x = Tensor::new([n * d.window, d.event_types], x).unwrap();
    let targets = BatchTargets {
        outcomes: (0..n).map(|_| f64::from(u8::from(rng.random_bool(0.4)))).collect(),
        treatments: (0..n)
            .map(|_| (0..d.event_types).map(|_| rng.random_bool(0.5)).collect())
            .collect(),
        mask: (0..n).map(|k| k % 5 != 0).collect(),
    };
    (x, targets)
}

#[test]
fn end_to_end_loss_gradient_matches_finite_differences() {
    let model = CausalModel::new(mini_config(), mini_dims()).unwrap();
    let params = model.init_params();
    let (x, targets) = mini_batch(2, 5);
    let report = check_params(&params, 1e-5, |g, p| {
        let fwd = model.forward(g, p, x.clone(), &mut Mode::Eval)?;
        model.loss(g, p, &fwd, &targets)
    })
    .unwrap();
    assert!(report.worst_relative_error < 1e-4, "{report:?}");
}

#[test]
fn per_treatment_balance_gradient_matches_finite_differences() {
    let config = CausalConfig {
        per_treatment_balance: true,
        weight_decay: 0.0,
        ..mini_config()
    };
    let model = CausalModel::new(config, mini_dims()).unwrap();
    let params = model.init_params();
    let (x, targets) = mini_batch(1, 6);
    let report = check_params(&params, 1e-5, |g, p| {
        let fwd = model.forward(g, p, x.clone(), &mut Mode::Eval)?;
        model.ipm_loss(g, &fwd, &targets)
    })
    .unwrap();
    assert!(report.worst_relative_error < 1e-4, "{report:?}");
}

#[test]
fn factual_loss_matches_enumeration() {
    let config = CausalConfig {
        weight_decay: 0.0,
        ..mini_config()
    };
    let model = CausalModel::new(config, mini_dims()).unwrap();
    let params = model.init_params();
    let (x, targets) = mini_batch(2, 7);
    let mut g = Graph::new();
    let p = params.bind_frozen(&mut g);
    let fwd = model.forward(&mut g, &p, x, &mut Mode::Eval).unwrap();
    let loss = model.factual_loss(&mut g, &p, &fwd, &targets).unwrap();

    let mut expected = 0.0;
    for r in 0..targets.outcomes.len() {
        if !targets.mask[r] {
            continue;
        }
        for j in 0..2 {
            let head = if targets.treatments[r][j] {
                fwd.treated[j]
            } else {
                fwd.control[j]
            };
            expected += bce_scalar(g.value(head).data()[r], targets.outcomes[r]);
        }
    }
    assert!((g.value(loss).item() - expected).abs() < 1e-10);
}

#[test]
fn weight_decay_adds_squared_norm() {
    let model = CausalModel::new(mini_config(), mini_dims()).unwrap();
    let params = model.init_params();
    let (x, mut targets) = mini_batch(1, 8);
    targets.mask = vec![false; targets.mask.len()];
    let mut g = Graph::new();
    let p = params.bind_frozen(&mut g);
    let fwd = model.forward(&mut g, &p, x, &mut Mode::Eval).unwrap();
    let loss = model.factual_loss(&mut g, &p, &fwd, &targets).unwrap();
    let expected = 1e-3 * params.total_sum_squares();
    assert!((g.value(loss).item() - expected).abs() < 1e-12);
}

#[test]
fn pooled_ipm_matches_direct_mean_difference_and_scales_with_alpha() {
    let model = CausalModel::new(mini_config(), mini_dims()).unwrap();
    let params = model.init_params();
    let (x, targets) = mini_batch(2, 9);
    let mut g = Graph::new();
    let p = params.bind_frozen(&mut g);
    let fwd = model.forward(&mut g, &p, x.clone(), &mut Mode::Eval).unwrap();
    let loss = model.ipm_loss(&mut g, &fwd, &targets).unwrap();

    let (mut treated, mut control) = (Vec::new(), Vec::new());
    for (j, &z) in fwd.reprs.iter().enumerate() {
        for r in 0..targets.mask.len() {
            if targets.mask[r] {
                let row = g.value(z).row(r).to_vec();
                if targets.treatments[r][j] {
                    treated.push(row)
                } else {
                    control.push(row)
                }
            }
        }
    }
    let direct = 0.3 * mmd_linear_sq(&treated, &control).unwrap();
    assert!((g.value(loss).item() - direct).abs() < 1e-12);

    let zero = CausalModel::new(
        CausalConfig {
            imbalance: 0.0,
            ..mini_config()
        },
        mini_dims(),
    )
    .unwrap();
    let mut g = Graph::new();
    let p = params.bind_frozen(&mut g);
    let fwd = zero.forward(&mut g, &p, x, &mut Mode::Eval).unwrap();
    let loss = zero.ipm_loss(&mut g, &fwd, &targets).unwrap();
    assert_eq!(g.value(loss).item(), 0.0);
}

#[test]
fn zero_embeddings_give_uniform_adjacency() {
    let model = CausalModel::new(mini_config(), mini_dims()).unwrap();
    let mut params = model.init_params();
    for name in ["encoder.adj.source", "encoder.adj.target"] {
        params.get_mut(name).unwrap().data_mut().fill(0.0);
    }
    let mut g = Graph::new();
    let p = params.bind_frozen(&mut g);
    let a = model.encoder().adaptive_adjacency(&mut g, &p).unwrap();
    assert!(g.value(a).data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
}

#[test]
fn identity_propagation_is_relu() {
    let model = CausalModel::new(
        CausalConfig {
            gcn_layers: 1,
            ..mini_config()
        },
        mini_dims(),
    )
    .unwrap();
    let mut params = model.init_params();
    *params.get_mut("encoder.gcn0.w").unwrap() = Tensor::identity(4);
    let mut g = Graph::new();
    let p = params.bind_frozen(&mut g);
    let h = Tensor::new([3, 4], (0..12).map(|v| v as f64 - 6.0).collect()).unwrap();
    let hv = g.constant(h.clone());
    let a = g.constant(Tensor::identity(3));
    let out = model.encoder().encode_spatial(&mut g, &p, hv, a).unwrap();
    let expected: Vec<f64> = h.data().iter().map(|v| v.max(0.0)).collect();
    assert_eq!(g.value(out).data(), expected.as_slice());
}

#[test]
fn spatial_layer_matches_dense_oracle() {
    let model = CausalModel::new(
        CausalConfig {
            gcn_layers: 1,
            ..mini_config()
        },
        mini_dims(),
    )
    .unwrap();
    let params = model.init_params();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
    let a: Vec<f64> = (0..9).map(|_| rng.random_range(0.0..1.0)).collect();
    let w = params.get("encoder.gcn0.w").unwrap().clone();
    let mut g = Graph::new();
    let p = params.bind_frozen(&mut g);
    let hv = g.constant(Tensor::new([3, 4], h.clone()).unwrap());
    let av = g.constant(Tensor::new([3, 3], a.clone()).unwrap());
    let out = model.encoder().encode_spatial(&mut g, &p, hv, av).unwrap();
    for r in 0..3 {
        for c in 0..4 {
            let mut v = 0.0;
            for k in 0..3 {
                for q in 0..4 {
                    v += a[r * 3 + k] * h[k * 4 + q] * w.at(q, c);
                }
            }
            assert!((g.value(out).at(r, c) - v.max(0.0)).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_input_with_zero_biases_encodes_to_zero() {
    let model = CausalModel::new(mini_config(), mini_dims()).unwrap();
    let params = model.init_params();
    let mut g = Graph::new();
    let p = params.bind_frozen(&mut g);
    let x = g.constant(Tensor::zeros([3 * 7, 2]));
    let h = model.encoder().encode_temporal(&mut g, &p, x).unwrap();
    assert_eq!(g.value(h).shape(), &[3, 4]);
    assert!(g.value(h).data().iter().all(|&v| v == 0.0));
}

#[test]
fn confounder_repr_differs_only_in_suffix_and_checks_bounds() {
    let model = CausalModel::new(mini_config(), mini_dims()).unwrap();
    let params = model.init_params();
    let mut g = Graph::new();
    let p = params.bind_frozen(&mut g);
    let h = g.constant(Tensor::full([2, 4], 0.5));
    let z0 = model.confounder_repr(&mut g, &p, h, 0).unwrap();
    let z1 = model.confounder_repr(&mut g, &p, h, 1).unwrap();
    assert_eq!(g.value(z0).shape(), &[2, 8]);
    assert_eq!(&g.value(z0).row(0)[..4], &g.value(z1).row(0)[..4]);
    assert_ne!(&g.value(z0).row(0)[4..], &g.value(z1).row(0)[4..]);
    assert!(matches!(model.confounder_repr(&mut g, &p, h, 2), Err(Error::Bounds(_))));
}

#[test]
fn treatment_embedding_gradient_is_confined_to_its_row() {
    let model = CausalModel::new(mini_config(), mini_dims()).unwrap();
    let params = model.init_params();
    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let h = g.constant(Tensor::full([3, 4], 0.2));
    let z = model.confounder_repr(&mut g, &p, h, 1).unwrap();
    let (y1, _) = model
        .predict_potential_outcomes(&mut g, &p, z, 1, &mut Mode::Eval)
        .unwrap();
    let s = g.sum(y1);
    let grads = g.backward(s);
    let ge = grads.get(p.var(TREATMENT_EMBEDDING).unwrap()).unwrap();
    assert!(ge.row(0).iter().all(|&v| v == 0.0));
    assert!(ge.row(1).iter().any(|&v| v != 0.0));
}

#[test]
fn tied_heads_give_zero_ite_and_outputs_are_probabilities() {
    let model = CausalModel::new(mini_config(), mini_dims()).unwrap();
    let mut params = model.init_params();
    let names: Vec<String> = params
        .names()
        .filter(|n| n.contains(".treated."))
        .map(String::from)
        .collect();
    for name in names {
        let value = params.get(&name).unwrap().clone();
        *params.get_mut(&name.replace(".treated.", ".control.")).unwrap() = value;
    }
    let (x, _) = mini_batch(1, 2);
    let mut g = Graph::new();
    let p = params.bind_frozen(&mut g);
    let fwd = model.forward(&mut g, &p, x, &mut Mode::Eval).unwrap();
    for j in 0..2 {
        assert_eq!(g.value(fwd.treated[j]).data(), g.value(fwd.control[j]).data());
        assert!(g.value(fwd.treated[j]).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

fn tiny_synthetic() -> (Vec<SampleWindow>, crate::data::DatasetSplit) {
    let cfg = SyntheticConfig {
        locations: 3,
        event_types: 2,
        time_steps: 200,
        effects: vec![1.0, 0.0],
        target_type: 1,
        seed: 4,
        ..SyntheticConfig::default()
    };
    let (cube, _) = generate(&cfg).unwrap();
    let samples = crate::data::build_samples(&cube, cfg.window, cfg.lead, cfg.target_type).unwrap();
    let s = split(&samples, crate::data::DEFAULT_RATIOS, 1, SplitMode::Random).unwrap();
    (samples, s)
}

#[test]
fn training_loss_decreases_and_is_deterministic() {
    let (samples, s) = tiny_synthetic();
    let config = CausalConfig {
        hidden: 8,
        max_epochs: 5,
        batch_frames: 16,
        patience: 100,
        seed: 11,
        ..CausalConfig::default()
    };
    let model = CausalModel::new(config, Dims::of(&samples, 3).unwrap()).unwrap();
    let a = train_causal(&model, &samples, &s, &mut ()).unwrap();
    assert_eq!(a.history.len(), 5);
    assert!(a.history[4].train_loss < a.history[0].train_loss, "{:?}", a.history);
    let b = train_causal(&model, &samples, &s, &mut ()).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.params, b.params);
}

#[test]
fn eval_mode_prediction_is_deterministic_and_batch_independent() {
    let (samples, _) = tiny_synthetic();
    let dims = Dims::of(&samples, 3).unwrap();
    let model = CausalModel::new(
        CausalConfig {
            hidden: 8,
            ..CausalConfig::default()
        },
        dims,
    )
    .unwrap();
    let params = model.init_params();
    let a = model.predict(&params, &samples).unwrap();
    let b = model.predict(&params, &samples).unwrap();
    assert_eq!(a, b);
    let single = CausalModel::new(
        CausalConfig {
            hidden: 8,
            batch_frames: 1,
            ..CausalConfig::default()
        },
        dims,
    )
    .unwrap();
    let c = single.predict(&params, &samples).unwrap();
    for (x, y) in a.iter().zip(&c) {
        for j in 0..2 {
            assert!((x.ite(j) - y.ite(j)).abs() < 1e-12);
        }
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = CausalConfig {
        dropout: 1.0,
        ..CausalConfig::default()
    };
    assert!(matches!(CausalModel::new(bad, mini_dims()), Err(Error::Config(_))));
    let bad = CausalConfig {
        imbalance: -1.0,
        ..CausalConfig::default()
    };
    assert!(matches!(CausalModel::new(bad, mini_dims()), Err(Error::Config(_))));
    let short = Dims {
        window: 6,
        ..mini_dims()
    };
    assert!(matches!(
        CausalModel::new(CausalConfig::default(), short),
        Err(Error::Config(_))
    ));
}
