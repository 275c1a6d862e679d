mod common;

use geolan_core::formats::EmbeddingDump;
use geolan_core::geoloss::{anneal, kt_attn_loss};
use geolan_core::geometry::{grain_decompose, RepresentationField};
use geolan_core::metrics::{cohens_d, cone_concentration, isoscore, kl_divergence};
use geolan_core::model::forward;
use geolan_core::numcore::{svd, sym_eigh, Rng, Tape, Tensor};
use geolan_core::verify::random_attention;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |v| Tensor::matrix(rows, cols, v).unwrap())
}

fn sample(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, n)
}

fn rotation(d: usize, seed: u64) -> Tensor {
    let mut rng = Rng::new(seed);
    svd(&common::gaussian(d, d, &mut rng)).unwrap().u
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn eigh_reconstructs(a in matrix(5, 5)) {
        let s = a.add(&a.transpose()).unwrap();
        let e = sym_eigh(&s).unwrap();
        let mut lam = Tensor::zeros(&[5, 5]);
        for i in 0..5 {
            lam.set(i, i, e.values[i]);
        }
        let back = e.vectors.matmul(&lam).unwrap().matmul(&e.vectors.transpose()).unwrap();
        prop_assert!(common::max_abs_diff(&back, &s) < 1e-9);
        prop_assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn svd_reconstructs(a in matrix(6, 4)) {
        let s = svd(&a).unwrap();
        let mut sig = Tensor::zeros(&[6, 4]);
        for i in 0..4 {
            sig.set(i, i, s.sigma[i]);
        }
        let back = s.u.matmul(&sig).unwrap().matmul(&s.v.transpose()).unwrap();
        prop_assert!(common::max_abs_diff(&back, &a) < 1e-9);
        prop_assert!(s.sigma.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn forward_is_deterministic(seed in 0u64..1000, toks in prop::collection::vec(0usize..32, 1..12)) {
        let p = common::micro_params(seed);
        let a = forward(&p, &toks).unwrap();
        let b = forward(&p, &toks).unwrap();
        prop_assert_eq!(a.logits, b.logits);
    }

    #[test]
    fn cone_is_monotone_in_k(x in matrix(12, 6)) {
        let mut prev = 0.0;
        for k in 1..=6 {
            let c = cone_concentration(&x, k).unwrap();
            prop_assert!(c + 1e-12 >= prev && c <= 1.0 + 1e-12);
            prev = c;
        }
    }

    #[test]
    fn isoscore_is_rotation_invariant(x in matrix(15, 4), seed in 0u64..100) {
        let q = rotation(4, seed);
        let y = x.matmul(&q).unwrap();
        let (a, b) = (isoscore(&x).unwrap(), isoscore(&y).unwrap());
        prop_assert!((a - b).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn kl_is_nonnegative(p in prop::collection::vec(0.01f64..1.0, 6), q in prop::collection::vec(0.01f64..1.0, 6)) {
        let (sp, sq): (f64, f64) = (p.iter().sum(), q.iter().sum());
        let p: Vec<f64> = p.iter().map(|x| x / sp).collect();
        let q: Vec<f64> = q.iter().map(|x| x / sq).collect();
        prop_assert!(kl_divergence(&p, &q).unwrap() >= 0.0);
    }

    #[test]
    fn cohens_d_symmetries(a in sample(5), b in sample(6), shift in -5.0f64..5.0, scale in 0.1f64..10.0) {
        if let Ok(d) = cohens_d(&a, &b) {
            prop_assert!((cohens_d(&b, &a).unwrap() + d).abs() < 1e-9);
            let sa: Vec<f64> = a.iter().map(|x| x * scale + shift).collect();
            let sb: Vec<f64> = b.iter().map(|x| x * scale + shift).collect();
            prop_assert!((cohens_d(&sa, &sb).unwrap() - d).abs() < 1e-8 * d.abs().max(1.0));
        }
    }

    #[test]
    fn anneal_is_monotone_and_capped(target in 0.0f64..1.0, ramp in 1u64..1000, t in 0u64..3000) {
        let a = anneal(t, target, ramp);
        prop_assert!(a <= target && a >= 0.0);
        prop_assert!(anneal(t + 1, target, ramp) >= a);
        prop_assert_eq!(anneal(ramp + t, target, ramp), target);
    }

    #[test]
    fn grains_partition_tokens(n in 1usize..20, seed in 0u64..500) {
        let mut rng = Rng::new(seed);
        let layers: Vec<Tensor> = (0..3).map(|_| common::gaussian(n, 2, &mut rng)).collect();
        let field = RepresentationField::from_layers(&layers, 0.3).unwrap();
        let g = grain_decompose(&field).unwrap();
        prop_assert!(g.n_grains >= 1 && g.n_grains <= n);
        prop_assert_eq!(g.grain_of.len(), n);
        prop_assert!(g.grain_of.iter().all(|&k| k < g.n_grains));
        for k in 0..g.n_grains {
            prop_assert!(g.grain_of.contains(&k));
        }
    }

    #[test]
    fn dump_round_trips(layers in 1u32..4, tokens in 1u32..6, dim in 1u32..5, seed in 0u64..1000) {
        let mut rng = Rng::new(seed);
        let n = (layers * tokens * dim) as usize;
        let data: Vec<f32> = rng.normal_vec(n, 1.0).iter().map(|&x| x as f32).collect();
        let d = EmbeddingDump::new(layers, tokens, dim, data).unwrap();
        let bytes = d.to_bytes();
        let back = EmbeddingDump::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(back, d);
    }

    #[test]
    fn attention_loss_is_nonnegative(n in 2usize..8, seed in 0u64..1000, causal in any::<bool>()) {
        let mut rng = Rng::new(seed);
        let heads: Vec<Tensor> = (0..2).map(|_| random_attention(n, causal, &mut rng).unwrap()).collect();
        let mut tape = Tape::new();
        let vars: Vec<_> = heads.iter().map(|h| tape.constant(h.clone())).collect();
        let l = kt_attn_loss(&mut tape, &vars, n).unwrap();
        prop_assert!(tape.scalar(l) >= 0.0);
    }
}
