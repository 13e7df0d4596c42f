//! Property tests for the library's cross-cutting invariants.

use proptest::prelude::*;
use rand::Rng as _;

use abmil::data::{Bag, Split};
use abmil::eval::roc_auc;
use abmil::model::{attention_pool, ModelConfig, ParamSet};
use abmil::rng::substream;
use abmil::train::{accum_grad, full_bag_grad};
use abmil::verify::{rel_l2_diff, roc_auc_pairwise};
use abmil::{LeafKind, Tape, Tensor};

fn model_config(dim: usize) -> ModelConfig {
    ModelConfig {
        input_dim: dim,
        hidden: vec![5, 3],
        attention_dim: 2,
        bn_enabled: false,
    }
}

fn bag_from(rows: &[Vec<f64>], label: u8) -> Bag {
    let mut labels = vec![0u8; rows.len()];
    if label == 1 {
        labels[0] = 1;
    }
    Bag {
        instances: Tensor::from_rows(rows).unwrap(),
        instance_labels: labels,
        label,
        split: Split::Train,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    // Chunked accumulation reproduces the full-bag gradient for every
    // chunk size when batch normalization is off.
    #[test]
    fn accumulation_matches_full_bag(
        seed in 0u64..10_000,
        n in 1usize..=16,
        chunk in 1usize..=16,
        label in 0u8..=1,
    ) {
        let chunk = chunk.min(n);
        let dim = 3;
        let mut rng = substream(seed, "prop-bag", 0);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let bag = bag_from(&rows, label);
        let params = ParamSet::init(&model_config(dim), &mut substream(seed, "init", 0));

        let (full, _) = full_bag_grad(&mut params.clone(), &bag).unwrap();
        let (acc, _) = accum_grad(&mut params.clone(), &bag, chunk).unwrap();
        prop_assert!(rel_l2_diff(&full.theta, &acc.theta) < 1e-10);
        prop_assert!(rel_l2_diff(&full.phi, &acc.phi) < 1e-10);
    }

    // Attention weights form a distribution and commute with instance
    // permutations; the bag score is permutation invariant.
    #[test]
    fn attention_is_normalized_and_permutation_equivariant(
        seed in 0u64..10_000,
        n in 1usize..12,
    ) {
        let dim = 3;
        let mut rng = substream(seed, "prop-z", 0);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect())
            .collect();
        let params = ParamSet::init(&model_config(dim), &mut substream(seed, "init", 0));
        let z = abmil::encode_infer(&params, &Tensor::from_rows(&rows).unwrap()).unwrap();
        let fwd = attention_pool(&params.pooler, &z).unwrap();

        let sum: f64 = fwd.attention.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(fwd.attention.iter().all(|&a| a >= 0.0));

        let mut perm: Vec<usize> = (0..n).collect();
        perm.reverse();
        let permuted: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
        let zp = abmil::encode_infer(&params, &Tensor::from_rows(&permuted).unwrap()).unwrap();
        let fwd_p = attention_pool(&params.pooler, &zp).unwrap();
        prop_assert!((fwd.bag_score - fwd_p.bag_score).abs() < 1e-12);
        for (j, &i) in perm.iter().enumerate() {
            prop_assert!((fwd.attention[i] - fwd_p.attention[j]).abs() < 1e-12);
        }
    }

    // Midrank AUC equals the O(n^2) pairwise count bit for bit, with and
    // without ties.
    #[test]
    fn auc_equals_pairwise_oracle(
        seed in 0u64..100_000,
        n in 2usize..=200,
        quantize in proptest::bool::ANY,
    ) {
        let mut rng = substream(seed, "prop-auc", 0);
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                let s: f64 = rng.gen_range(0.0..1.0);
                if quantize { (s * 6.0).round() / 6.0 } else { s }
            })
            .collect();
        let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2) as u8).collect();
        labels[0] = 0;
        labels[n - 1] = 1;
        let fast = roc_auc(&scores, &labels).unwrap();
        let slow = roc_auc_pairwise(&scores, &labels).unwrap();
        prop_assert_eq!(fast.to_bits(), slow.to_bits());
    }

    // Swapping a differentiable input for a constant with the same value
    // never changes the forward result and only removes that leaf from
    // the gradient map.
    #[test]
    fn constant_injection_is_inert(
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        w in -3.0f64..3.0,
    ) {
        let run = |kind: LeafKind| {
            let mut tape = Tape::new();
            let wv = tape.parameter(Tensor::new(vec![2], vec![w, -w]).unwrap());
            let x = tape.leaf(Tensor::new(vec![2], vec![a, b]).unwrap(), kind);
            let p = tape.mul(wv, x).unwrap();
            let s = tape.sum_all(p);
            let y = tape.sigmoid(s);
            let loss = tape.sum_all(y);
            let grads = tape.backward(loss).unwrap();
            (
                tape.value(loss).item(),
                grads[&wv].data().to_vec(),
                grads.contains_key(&x),
            )
        };
        let (f1, gw1, x_present) = run(LeafKind::DifferentiableInput);
        let (f2, gw2, x_absent) = run(LeafKind::Constant);
        prop_assert_eq!(f1.to_bits(), f2.to_bits());
        prop_assert_eq!(gw1, gw2);
        prop_assert!(x_present);
        prop_assert!(!x_absent);
    }
}
