use faer::Mat;
use proptest::prelude::*;

use llmimage::algebra::{
    alr, alr_inverse, clr, log_softmax, lstsq_residual, numerical_rank, softmax, ClrVector, LogitVector,
};
use llmimage::extraction::{fingerprint, unbias_fast, unbias_stable_log};
use llmimage::mock::{api_query, MockModel, MockModelSpec};
use llmimage::BiasSpec;

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn logits(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-30.0f64..30.0, 2..max_len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn softmax_inverts_clr(l in logits(300)) {
        let p = softmax(&LogitVector::new(l).unwrap());
        let y = clr(&p).unwrap();
        let back = softmax(&LogitVector::new(y.into_inner()).unwrap());
        prop_assert!(linf(back.as_slice(), p.as_slice()) < 1e-9);
    }

    #[test]
    fn clr_of_softmax_centers_logits(l in logits(300)) {
        let mean = l.iter().sum::<f64>() / l.len() as f64;
        let y = clr(&softmax(&LogitVector::new(l.clone()).unwrap())).unwrap();
        let centered: Vec<f64> = l.iter().map(|x| x - mean).collect();
        prop_assert!(linf(y.as_slice(), &centered) < 1e-8);
        prop_assert!(y.as_slice().iter().sum::<f64>().abs() < 1e-6);
    }

    #[test]
    fn alr_roundtrip(l in logits(300)) {
        let p = softmax(&LogitVector::new(l).unwrap());
        let back = alr_inverse(&alr(&p).unwrap()).unwrap();
        prop_assert!(linf(back.as_slice(), p.as_slice()) < 1e-9);
    }

    #[test]
    fn product_rank_is_capped_by_inner_dimension(
        d in 1usize..8,
        v in 10usize..40,
        m in 10usize..30,
        seed in any::<u64>(),
    ) {
        let mut g = llmimage::mock::rng::SplitMix64::new(seed);
        let w = Mat::from_fn(v, d, |_, _| g.gaussian());
        let h = Mat::from_fn(d, m, |_, _| g.gaussian());
        let (r, _) = numerical_rank((&w * &h).as_ref(), 1e-6).unwrap();
        prop_assert_eq!(r, d);
    }

    #[test]
    fn residual_ignores_column_order(seed in any::<u64>(), shift in 1usize..9) {
        let mut g = llmimage::mock::rng::SplitMix64::new(seed);
        let l = Mat::from_fn(30, 10, |_, _| g.gaussian());
        let l = Mat::from_fn(30, 10, |i, j| l[(i, j)] - (0..30).map(|r| l[(r, j)]).sum::<f64>() / 30.0);
        let target = ClrVector::centered(g.gaussians(30, 1.0)).unwrap();
        let permuted = Mat::from_fn(30, 10, |i, j| l[(i, (j + shift) % 10)]);
        let a = lstsq_residual(l.as_ref(), &target).unwrap();
        let b = lstsq_residual(permuted.as_ref(), &target).unwrap();
        prop_assert!((a - b).abs() < 1e-10 * a.max(1.0));
    }

    #[test]
    fn unbiasing_inverts_biasing(
        l in logits(60),
        beta in 0.0f64..20.0,
        picks in prop::collection::btree_set(0usize..60, 1..5),
    ) {
        let v = l.len();
        let set: Vec<usize> = picks.into_iter().filter(|&i| i < v).collect();
        prop_assume!(!set.is_empty() && set.len() < v);
        let p = softmax(&LogitVector::new(l.clone()).unwrap());
        let mut biased = l.clone();
        for &i in &set {
            biased[i] += beta;
        }
        let lp_biased = log_softmax(&biased);
        let pairs: Vec<(u32, f64)> = set.iter().map(|&i| (i as u32, lp_biased[i].exp())).collect();
        // The closed form cancels catastrophically once the biased set holds
        // nearly all the mass; check it where it is well conditioned.
        let mass: f64 = set.iter().map(|&i| p.as_slice()[i]).sum();
        if mass <= 0.5 && beta <= 10.0 {
            for (t, q) in unbias_fast(&pairs, beta).unwrap() {
                let want = p.as_slice()[t as usize];
                prop_assert!((q - want).abs() <= 1e-9 * want);
            }
        }
        let lp = log_softmax(&l);
        let reference = (0..v).find(|i| !set.contains(i)).unwrap();
        for &i in &set {
            let got = unbias_stable_log(lp_biased[i], lp_biased[reference], lp[reference], beta);
            prop_assert!((got - lp[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn fingerprint_is_invariant_to_other_biases(
        seed in 0u64..1000,
        biases in prop::collection::btree_map(0u32..200, -100.0f64..100.0, 0..5),
    ) {
        let model = MockModel::new(MockModelSpec { v: 200, d: 8, seed, ..MockModelSpec::default() }).unwrap();
        let base = api_query(&model, "fp", &BiasSpec::new(), 5, 0).unwrap();
        let reference = (base.pairs[0].0, base.pairs[1].0);
        let mut bias = BiasSpec::new();
        for (t, b) in biases {
            if t != reference.0 && t != reference.1 {
                bias = bias.with(t, b);
            }
        }
        let r = api_query(&model, "fp", &bias, 5, 0).unwrap();
        prop_assume!(r.logprob(reference.0).is_some() && r.logprob(reference.1).is_some());
        let want = fingerprint(&base, reference).unwrap();
        prop_assert!((fingerprint(&r, reference).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn bias_is_additive_on_logits(seed in 0u64..1000, token in 0u32..50, beta in -50.0f64..50.0) {
        let model = MockModel::new(MockModelSpec { v: 50, d: 4, seed, k_max: 50, ..MockModelSpec::default() }).unwrap();
        let r = api_query(&model, "b", &BiasSpec::new().with(token, beta), 50, 0).unwrap();
        let mut l = model.full_logits("b", 0).unwrap().into_inner();
        l[token as usize] += beta;
        let want = log_softmax(&l);
        for (t, lp) in &r.pairs {
            prop_assert!((lp - want[*t as usize].min(0.0)).abs() < 1e-12);
        }
        prop_assert!(r.pairs.windows(2).all(|w| w[0].1 >= w[1].1));
    }

    #[test]
    fn appending_columns_never_lowers_rank(seed in 0u64..500, extra in 1usize..6) {
        let model = MockModel::new(MockModelSpec { v: 60, d: 6, seed, ..MockModelSpec::default() }).unwrap();
        let col = |i: usize| clr(&model.oracle_distribution(&format!("c{i}"), 0).unwrap()).unwrap().into_inner();
        let cols: Vec<Vec<f64>> = (0..4 + extra).map(col).collect();
        let rank_of = |n: usize| numerical_rank(Mat::from_fn(60, n, |i, j| cols[j][i]).as_ref(), 1e-6).unwrap().0;
        let ranks: Vec<usize> = (1..=cols.len()).map(rank_of).collect();
        prop_assert!(ranks.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(ranks.iter().all(|&r| r <= 6));
    }
}
