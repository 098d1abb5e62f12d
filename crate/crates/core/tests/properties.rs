//! Randomized properties checked against independent brute-force oracles.

mod common;

use common::{confusion_oracle, direct_dilated_conv, greedy_match_oracle, sample, window_mean_treatments};
use eventcause::autodiff::{bce_loss, dilated_causal_conv1d, mmd_linear_sq, softmax_rows, Graph, Tensor};
use eventcause::data::{derive_treatments, inject_poisson_noise, split, EventCube, SampleWindow, SplitMode};
use eventcause::evaluation::{att_error, bacc, nn_match};
use eventcause::predict::constraint_loss;
use proptest::prelude::*;

fn finite(range: std::ops::Range<f64>, n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(range, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..5, cols in 1usize..6, seed in any::<u64>()) {
        let mut state = seed;
        let data: Vec<f64> = (0..rows * cols)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 60.0
            })
            .collect();
        let out = softmax_rows(&data, cols);
        for row in out.chunks(cols) {
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mmd_and_bce_are_nonnegative(
        t in prop::collection::vec(finite(-5.0..5.0, 3..4), 0..6),
        c in prop::collection::vec(finite(-5.0..5.0, 3..4), 0..6),
        probs in finite(0.0..1.0, 1..20),
    ) {
        prop_assert!(mmd_linear_sq(&t, &c).unwrap() >= 0.0);
        let labels: Vec<f64> = probs.iter().enumerate().map(|(i, _)| (i % 2) as f64).collect();
        let loss = bce_loss(&probs, &labels);
        prop_assert!(loss >= 0.0 && loss.is_finite());
    }

    #[test]
    fn dilated_convolution_matches_direct_sum(
        r in finite(-3.0..3.0, 1..30),
        filter in finite(-2.0..2.0, 1..4),
        dilation in 1usize..5,
    ) {
        let out = dilated_causal_conv1d(&r, &filter, dilation).unwrap();
        for (s, (o, d)) in out.iter().zip(direct_dilated_conv(&r, &filter, dilation)).enumerate() {
            prop_assert!((o - d).abs() <= 1e-12, "s={} {} vs {}", s, o, d);
        }
    }

    #[test]
    fn multichannel_convolution_matches_direct_sum(
        batch in 1usize..3,
        seq in 1usize..9,
        c_in in 1usize..4,
        c_out in 1usize..4,
        kernel in 1usize..4,
        dilation in 1usize..4,
        seed in any::<u64>(),
    ) {
        let mut state = seed | 1;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state % 2001) as f64 / 1000.0 - 1.0
        };
        let x: Vec<f64> = (0..batch * seq * c_in).map(|_| next()).collect();
        let w: Vec<f64> = (0..kernel * c_in * c_out).map(|_| next()).collect();
        let mut g = Graph::new();
        let xv = g.constant(Tensor::new(vec![batch * seq, c_in], x.clone()).unwrap());
        let wv = g.constant(Tensor::new(vec![kernel * c_in, c_out], w.clone()).unwrap());
        let y = g.causal_conv(xv, wv, seq, dilation).unwrap();
        let y = g.value(y).data().to_vec();
        // Tap k reads `s - d·k`; the weight row block for tap k is `k·c_in..`.
        for b in 0..batch {
            for s in 0..seq {
                for o in 0..c_out {
                    let mut direct = 0.0;
                    for k in 0..kernel {
                        let Some(src) = s.checked_sub(dilation * k) else { continue };
                        for i in 0..c_in {
                            direct += x[(b * seq + src) * c_in + i] * w[(k * c_in + i) * c_out + o];
                        }
                    }
                    prop_assert!((y[(b * seq + s) * c_out + o] - direct).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn bacc_matches_brute_force_and_ignores_order(
        pairs in prop::collection::vec((0.0f64..1.0, any::<bool>()), 1..40),
        rotate in 0usize..40,
    ) {
        let probs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let labels: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        let c = confusion_oracle(&probs, &labels);
        let b = bacc(&probs, &labels).unwrap();
        prop_assert_eq!(b.confusion, c);
        if c.tp + c.fn_ > 0 && c.tn + c.fp > 0 {
            let expect = (c.tp as f64 / (c.tp + c.fn_) as f64 + c.tn as f64 / (c.tn + c.fp) as f64) / 2.0;
            prop_assert!((b.value - expect).abs() < 1e-15);
            prop_assert!(b.warning.is_none());
        } else {
            prop_assert!(b.warning.is_some());
        }
        let k = rotate % probs.len();
        let (mut p2, mut l2) = (probs.clone(), labels.clone());
        p2.rotate_left(k);
        l2.rotate_left(k);
        prop_assert_eq!(bacc(&p2, &l2).unwrap().value, b.value);
    }

    #[test]
    fn constraint_is_zero_exactly_inside_bounds(
        triples in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 1..50),
    ) {
        for (y, a, b) in triples {
            let (l, u) = if a <= b { (a, b) } else { (b, a) };
            let loss = constraint_loss(&[y], &[l], &[u]);
            if (l..=u).contains(&y) {
                prop_assert_eq!(loss, 0.0);
            } else {
                prop_assert!(loss > 0.0);
            }
        }
    }
}

fn location_samples() -> impl Strategy<Value = Vec<SampleWindow>> {
    // Up to 3 locations with at most 6 samples each; small integer covariates
    // make distance ties common.
    prop::collection::vec(
        (
            0usize..3,
            prop::collection::vec(0u8..4, 2),
            any::<bool>(),
            any::<bool>(),
        ),
        1..18,
    )
    .prop_map(|rows| {
        let mut per_loc = [0usize; 3];
        rows.into_iter()
            .filter_map(|(loc, x, t, y)| {
                per_loc[loc] += 1;
                (per_loc[loc] <= 6).then(|| sample(loc, per_loc[loc], x.into_iter().map(f64::from).collect(), t, y))
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn nn_match_equals_brute_force(samples in location_samples()) {
        let idx: Vec<usize> = (0..samples.len()).collect();
        let mut got = nn_match(&samples, &idx, 0, false).unwrap().pairs;
        got.sort_by_key(|p| p.treated);
        prop_assert_eq!(got, greedy_match_oracle(&samples, 0));
    }

    #[test]
    fn matching_and_att_error_ignore_input_order(samples in location_samples(), seed in any::<u64>()) {
        let idx: Vec<usize> = (0..samples.len()).collect();
        let effects: Vec<f64> = (0..samples.len()).map(|i| ((i * 7 + 3) % 11) as f64 / 10.0 - 0.5).collect();
        let base = nn_match(&samples, &idx, 0, false).unwrap();
        // Permute samples (and effects with them), then map indices back.
        let mut order: Vec<usize> = idx.clone();
        let mut s = seed;
        for i in (1..order.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let permuted: Vec<SampleWindow> = order.iter().map(|&i| samples[i].clone()).collect();
        let perm_effects: Vec<f64> = order.iter().map(|&i| effects[i]).collect();
        let m2 = nn_match(&permuted, &idx, 0, false).unwrap();
        let mut a: Vec<(usize, usize)> = base.pairs.iter().map(|p| (p.treated, p.control)).collect();
        let mut b: Vec<(usize, usize)> = m2.pairs.iter().map(|p| (order[p.treated], order[p.control])).collect();
        a.sort();
        b.sort();
        prop_assert_eq!(a, b);
        if !base.pairs.is_empty() {
            let e1 = att_error(&samples, &base, &effects).unwrap();
            let e2 = att_error(&permuted, &m2, &perm_effects).unwrap();
            prop_assert!((e1 - e2).abs() < 1e-12);
        }
    }

    #[test]
    fn treatments_match_window_mean_oracle(
        m in 1usize..3,
        e in 1usize..4,
        window in 1usize..5,
        extra in 0usize..6,
        seed in any::<u64>(),
    ) {
        let t_max = 2 * window + extra;
        let mut cube = EventCube::zeros(m, e, t_max);
        let mut s = seed | 1;
        for i in 0..m {
            for j in 0..e {
                for t in 0..t_max {
                    s ^= s << 13;
                    s ^= s >> 7;
                    s ^= s << 17;
                    cube.set(i, j, t, (s % 5) as u32);
                }
            }
        }
        for t in (2 * window - 1)..t_max {
            for i in 0..m {
                let got = derive_treatments(&cube, window, t, i).unwrap();
                prop_assert_eq!(got, window_mean_treatments(&cube, window, t, i), "i={} t={}", i, t);
            }
        }
    }

    #[test]
    fn split_is_a_seeded_partition(n in 3usize..200, seed in any::<u64>(), chrono in any::<bool>()) {
        let samples: Vec<SampleWindow> = (0..n).map(|k| sample(k % 3, k / 3, vec![0.0], false, false)).collect();
        let mode = if chrono { SplitMode::Chronological } else { SplitMode::Random };
        let a = split(&samples, [0.7, 0.15, 0.15], seed, mode).unwrap();
        let b = split(&samples, [0.7, 0.15, 0.15], seed, mode).unwrap();
        prop_assert_eq!(&a, &b);
        let mut all: Vec<usize> = a.train.iter().chain(&a.validation).chain(&a.test).copied().collect();
        all.sort();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn poisson_noise_is_nonnegative_and_copy_on_perturb(
        xs in prop::collection::vec(0u8..20, 1..30),
        rate in 0.0f64..10.0,
        seed in any::<u64>(),
    ) {
        let samples = vec![sample(0, 0, xs.iter().map(|&v| f64::from(v)).collect(), false, false)];
        let before = samples.clone();
        let noisy = inject_poisson_noise(&samples, rate, seed).unwrap();
        prop_assert_eq!(&samples, &before);
        for (n, o) in noisy[0].covariates.iter().zip(&samples[0].covariates) {
            prop_assert!(*n >= *o && n.fract() == 0.0);
        }
    }
}
