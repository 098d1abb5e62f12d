//! Helpers shared by the integration-test targets: finite-difference checks
//! of every graph operation and brute-force reference implementations.
#![allow(dead_code)]

use std::collections::HashSet;

use eventcause::autodiff::gradcheck::check_inputs;
use eventcause::autodiff::{Graph, Group, Tensor, Var};
use eventcause::data::{EventCube, SampleWindow};
use eventcause::evaluation::{Confusion, MatchPair};
use eventcause::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;

pub fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

/// Values bounded away from zero so ReLU kinks are never crossed.
fn away_from_zero(shape: &[usize], seed: u64) -> Tensor {
    let mut t = random(shape, seed);
    for v in t.data_mut() {
        *v = v.signum() * (v.abs() + 0.2);
    }
    t
}

/// Contracts `v` against fixed random weights so every output element
/// contributes a distinct amount to the scalar being checked.
fn weighted(g: &mut Graph, v: Var) -> Result<Var> {
    let n = g.value(v).len();
    let mut rng = ChaCha8Rng::seed_from_u64(4242 + n as u64);
    let w = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    let m = g.mul_const(v, w)?;
    Ok(g.sum(m))
}

type OpFn = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

fn case(
    name: &'static str,
    inputs: Vec<Tensor>,
    f: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'static,
) -> (&'static str, Vec<Tensor>, OpFn) {
    (name, inputs, Box::new(f))
}

/// Worst relative finite-difference error of every differentiable operation.
pub fn op_gradient_errors() -> Vec<(&'static str, f64)> {
    let a = random(&[3, 4], 1);
    let b = random(&[3, 4], 2);
    let tall = random(&[4, 3], 6);
    let x = random(&[14, 3], 12);
    let w = random(&[6, 4], 13);
    let groups = vec![
        Group::Treated,
        Group::Control,
        Group::Excluded,
        Group::Treated,
        Group::Control,
        Group::Control,
    ];
    let mut cases = vec![
        case("matmul", vec![a.clone(), random(&[4, 2], 3)], |g, v| {
            g.matmul(v[0], v[1])
        }),
        case("add", vec![a.clone(), b.clone()], |g, v| g.add(v[0], v[1])),
        case("sub", vec![a.clone(), b.clone()], |g, v| g.sub(v[0], v[1])),
        case("hadamard", vec![a.clone(), b], |g, v| g.hadamard(v[0], v[1])),
        case("add_row_bias", vec![a.clone(), random(&[4], 4)], |g, v| {
            g.add_row_bias(v[0], v[1])
        }),
        case("mul_const", vec![a.clone()], |g, v| {
            g.mul_const(v[0], (0..12).map(|i| i as f64 - 5.0).collect())
        }),
        case("scale", vec![a.clone()], |g, v| Ok(g.scale(v[0], -2.5))),
        case("sigmoid", vec![a.clone()], |g, v| Ok(g.sigmoid(v[0]))),
        case("tanh", vec![a.clone()], |g, v| Ok(g.tanh(v[0]))),
        case("relu", vec![away_from_zero(&[3, 4], 5)], |g, v| Ok(g.relu(v[0]))),
        case("softmax_rows", vec![a.clone()], |g, v| Ok(g.softmax_rows(v[0]))),
        case("sum", vec![a.clone()], |g, v| Ok(g.sum(v[0]))),
        case("sum_squares", vec![a], |g, v| Ok(g.sum_squares(v[0]))),
        case("gather_rows", vec![tall.clone()], |g, v| {
            g.gather_rows(v[0], vec![3, 0, 0, 2, 3])
        }),
        case("concat_cols", vec![tall.clone(), random(&[4, 2], 7)], |g, v| {
            g.concat_cols(v[0], v[1])
        }),
        case("broadcast_rows", vec![random(&[3], 8)], |g, v| {
            g.broadcast_rows(v[0], 5)
        }),
        case("repeat_rows", vec![tall.clone()], |g, v| g.repeat_rows(v[0], 3)),
        case("vstack", vec![tall.clone(), random(&[2, 3], 9)], |g, v| {
            g.vstack(&[v[0], v[1], v[0]])
        }),
        case("reshape", vec![tall.clone()], |g, v| {
            let r = g.reshape(v[0], vec![2, 6])?;
            let w = g.constant(random(&[6, 2], 10));
            g.matmul(r, w)
        }),
        case("graph_propagate", vec![random(&[2, 2], 11), tall], |g, v| {
            g.graph_propagate(v[0], v[1])
        }),
        case("causal_conv k=3", vec![x.clone(), random(&[9, 2], 14)], |g, v| {
            g.causal_conv(v[0], v[1], 7, 2)
        }),
        case(
            "dilated_causal_conv1d",
            vec![random(&[9], 15), random(&[3], 16)],
            |g, v| g.dilated_causal_conv1d(v[0], v[1], 2),
        ),
        case("bce", vec![random(&[6, 1], 17)], |g, v| {
            let p = g.sigmoid(v[0]);
            g.bce(
                p,
                vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0],
                vec![1.0, 2.0, 0.0, 1.0, 0.5, 1.0],
            )
        }),
        case("mmd_linear_sq", vec![random(&[6, 3], 18)], move |g, v| {
            g.mmd_linear_sq(v[0], groups.clone())
        }),
        // Predictions sit strictly inside or outside their bounds.
        case("range_hinge", vec![Tensor::vector(vec![0.1, 0.5, 0.9, 0.3])], |g, v| {
            g.range_hinge(
                v[0],
                vec![0.2, 0.4, 0.1, 0.0],
                vec![0.6, 0.7, 0.8, 1.0],
                vec![1.0, 1.0, 2.0, 1.0],
            )
        }),
        case("dropout", vec![random(&[5, 4], 19)], |g, v| {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            g.dropout(v[0], 0.4, &mut rng)
        }),
    ];
    for (name, d) in [("causal_conv d=1", 1), ("causal_conv d=2", 2), ("causal_conv d=4", 4)] {
        cases.push(case(name, vec![x.clone(), w.clone()], move |g, v| {
            g.causal_conv(v[0], v[1], 7, d)
        }));
    }
    cases
        .into_iter()
        .map(|(name, inputs, f)| {
            let report = check_inputs(&inputs, FD_STEP, |g, v| {
                let out = f(g, v)?;
                weighted(g, out)
            })
            .unwrap_or_else(|e| panic!("{name}: {e}"));
            (name, report.worst_relative_error)
        })
        .collect()
}

/// Single-channel dilated causal convolution written as an explicit sum.
pub fn direct_dilated_conv(r: &[f64], filter: &[f64], dilation: usize) -> Vec<f64> {
    (0..r.len())
        .map(|s| {
            filter
                .iter()
                .enumerate()
                .filter_map(|(k, f)| s.checked_sub(dilation * k).map(|i| f * r[i]))
                .sum()
        })
        .collect()
}

/// Confusion matrix at threshold 0.5, counted case by case.
pub fn confusion_oracle(probs: &[f64], labels: &[bool]) -> Confusion {
    let mut c = Confusion::default();
    for (&p, &y) in probs.iter().zip(labels) {
        match (p >= 0.5, y) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

/// Treatment flags at (location, t) recomputed from raw window means.
pub fn window_mean_treatments(cube: &EventCube, window: usize, t: usize, location: usize) -> Vec<bool> {
    (0..cube.event_types())
        .map(|j| {
            let sum = |from: usize| {
                (from..from + window)
                    .map(|u| f64::from(cube.count(location, j, u)))
                    .sum::<f64>()
            };
            let cur = sum(t + 1 - window) / window as f64;
            let prev = sum(t + 1 - 2 * window) / window as f64;
            if prev == 0.0 {
                cur > 0.0
            } else {
                cur >= 1.5 * prev
            }
        })
        .collect()
}

/// Greedy matching written from the definition: treated samples in key
/// order each take the nearest unused control of their location, ties going
/// to the smaller key.
pub fn greedy_match_oracle(samples: &[SampleWindow], treatment: usize) -> Vec<MatchPair> {
    let mut treated: Vec<usize> = (0..samples.len())
        .filter(|&i| samples[i].treatments[treatment])
        .collect();
    treated.sort_by_key(|&i| samples[i].key());
    let mut used = HashSet::new();
    let mut pairs = Vec::new();
    for t in treated {
        let mut best: Option<(f64, (usize, usize), usize)> = None;
        for c in 0..samples.len() {
            if samples[c].treatments[treatment] || samples[c].location != samples[t].location || used.contains(&c) {
                continue;
            }
            let d = samples[t]
                .covariates
                .iter()
                .zip(&samples[c].covariates)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let key = samples[c].key();
            if best.is_none_or(|(bd, bk, _)| d < bd || (d == bd && key < bk)) {
                best = Some((d, key, c));
            }
        }
        if let Some((d, _, c)) = best {
            used.insert(c);
            pairs.push(MatchPair {
                treated: t,
                control: c,
                distance: d,
            });
        }
    }
    pairs.sort_by_key(|p| p.treated);
    pairs
}

/// A one-treatment sample with the given covariates.
pub fn sample(location: usize, time: usize, x: Vec<f64>, treated: bool, outcome: bool) -> SampleWindow {
    SampleWindow {
        location,
        time,
        window: x.len(),
        covariates: x,
        treatments: vec![treated],
        outcome,
        lead: 1,
    }
}
