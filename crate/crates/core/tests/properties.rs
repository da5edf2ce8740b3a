use attnlite::attention::{forward, init_weights, load_attention, save_attention};
use attnlite::checkpoint::Checkpoint;
use attnlite::cost::{flops_exact_forward, flops_closed_form, param_count};
use attnlite::oracles::{embed_efficient_in_optimized, embed_efficient_in_super, embed_optimized_in_standard};
use attnlite::ops::{Counting, Eager};
use attnlite::{AttentionConfig, Matrix, Rng, VariantKind};
use proptest::prelude::*;

fn head_split() -> impl Strategy<Value = (usize, usize)> {
    (1usize..9, 1usize..5).prop_map(|(dk, h)| (dk * h, h))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>(), scale in 0.1f64..50.0) {
        let m = Matrix::normal(rows, cols, &mut Rng::new(seed)).scale(scale);
        let s = m.softmax_rows();
        for r in 0..rows {
            let total: f64 = (0..cols).map(|c| s.get(r, c)).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!((0..cols).all(|c| s.get(r, c) >= 0.0));
        }
    }

    #[test]
    fn masked_softmax_is_lower_triangular(n in 1usize..7, seed in any::<u64>()) {
        let m = Matrix::normal(n, n, &mut Rng::new(seed)).apply_causal_mask().unwrap().softmax_rows();
        for r in 0..n {
            for c in r + 1..n {
                prop_assert_eq!(m.get(r, c), 0.0);
            }
        }
    }

    #[test]
    fn param_count_matches_materialised_weights((d, h) in head_split(), ell in 1usize..40, bias in any::<bool>()) {
        for v in VariantKind::ALL {
            let cfg = AttentionConfig::new(v, d, h, Some(ell)).unwrap().bias(bias);
            let w = init_weights(&cfg, &mut Rng::new(0));
            prop_assert_eq!(param_count(&cfg).unwrap(), w.param_count() as u64);
        }
    }

    #[test]
    fn closed_form_flops_ratio_is_bounded((d, h) in head_split(), ell in 1usize..300) {
        let s = AttentionConfig::new(VariantKind::Standard, d, h, Some(ell)).unwrap();
        let e = s.with_variant(VariantKind::Efficient).unwrap();
        let o = s.with_variant(VariantKind::Optimized).unwrap();
        let (fs, fe, fo) = (flops_closed_form(&s).unwrap(), flops_closed_form(&e).unwrap(), flops_closed_form(&o).unwrap());
        prop_assert!(fe < fo && fo < fs);
        prop_assert!((fs as f64) / (fe as f64) < 15.0 / 9.0);
    }

    #[test]
    fn exact_count_matches_instrumented_run((d, h) in head_split(), ell in 1usize..10, causal in any::<bool>()) {
        for v in VariantKind::ALL {
            let cfg = AttentionConfig::new(v, d, h, Some(ell)).unwrap().causal(causal);
            let mut rng = Rng::new(1);
            let w = init_weights(&cfg, &mut rng);
            let x = Matrix::normal(ell, d, &mut rng);
            let mut ops = Counting::new(Eager);
            attnlite::attention::attend(&mut ops, &x, &x, &x, &w, &cfg).unwrap();
            prop_assert_eq!(ops.flops, flops_exact_forward(&cfg).unwrap());
        }
    }

    #[test]
    fn embeddings_hold_on_random_shapes((d, h) in head_split(), ell in 1usize..8, causal in any::<bool>(), seed in any::<u64>()) {
        let eff = AttentionConfig::new(VariantKind::Efficient, d, h, Some(ell)).unwrap().causal(causal);
        let opt = eff.with_variant(VariantKind::Optimized).unwrap();
        let std_c = eff.with_variant(VariantKind::Standard).unwrap();
        let sup = eff.with_variant(VariantKind::Super).unwrap();
        let mut rng = Rng::new(seed);
        let x = Matrix::normal(ell, d, &mut rng);
        let w = init_weights(&eff, &mut rng);
        let base = forward(&x, &x, &x, &w, &eff).unwrap();
        let w_opt = embed_efficient_in_optimized(&w, &eff).unwrap();
        let w_std = embed_optimized_in_standard(&w_opt, &opt).unwrap();
        let w_sup = embed_efficient_in_super(&w, &eff).unwrap();
        prop_assert!(base.max_abs_diff(&forward(&x, &x, &x, &w_opt, &opt).unwrap()) <= 1e-10);
        prop_assert!(base.max_abs_diff(&forward(&x, &x, &x, &w_std, &std_c).unwrap()) <= 1e-10);
        prop_assert!(base.max_abs_diff(&forward(&x, &x, &x, &w_sup, &sup).unwrap()) <= 1e-12);
    }

    #[test]
    fn attention_checkpoints_round_trip((d, h) in head_split(), ell in 1usize..8, causal in any::<bool>(), bias in any::<bool>(), seed in any::<u64>()) {
        for v in VariantKind::ALL {
            let cfg = AttentionConfig::new(v, d, h, Some(ell)).unwrap().causal(causal).bias(bias);
            let w = init_weights(&cfg, &mut Rng::new(seed));
            let mut bytes = Vec::new();
            save_attention(&cfg, seed, &w).unwrap().write_to(&mut bytes).unwrap();
            let back = load_attention(&Checkpoint::read_from(&bytes[..]).unwrap()).unwrap();
            prop_assert_eq!(back.config, cfg);
            prop_assert_eq!(back.seed, seed);
            prop_assert_eq!(back.weights, w);
        }
    }
}

#[test]
fn checkpoint_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("layer.ckpt");
    let cfg = AttentionConfig::new(VariantKind::Super, 8, 2, Some(4)).unwrap().causal(true);
    let w = init_weights(&cfg, &mut Rng::new(12));
    save_attention(&cfg, 12, &w).unwrap().save(&path).unwrap();
    let back = load_attention(&Checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(back.weights, w);
}
