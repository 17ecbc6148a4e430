mod common;

use gends::corpus::{substitute_types, tokenize, Vocabulary};
use gends::evaluation::{bleu1, entity_metrics, mean_std};
use gends::features::prepare_message;
use gends::model::dist::{dynamic_entity_dist, dynamic_entity_dist_scalar, mix};
use gends::model::{Model, ModelConfig, Variant};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn positive(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-6f64..10.0, n)
}

fn argsort(p: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..p.len()).collect();
    idx.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    idx
}

fn words() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e"]).prop_map(String::from), 0..12)
}

proptest! {
    #[test]
    fn enquirer_distribution_is_normalized(
        (r, f, u) in (1usize..20).prop_flat_map(|n| (positive(n..n + 1), positive(n..n + 1), positive(n..n + 1)))
    ) {
        let p = dynamic_entity_dist(&r, &f, &u).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn scalar_update_never_changes_the_candidate_ranking(
        (r, u) in (1usize..20).prop_flat_map(|n| (positive(n..n + 1), positive(n..n + 1))),
        f in 1e-6f64..1e3,
    ) {
        let with = dynamic_entity_dist_scalar(&r, f, &u).unwrap();
        let without = dynamic_entity_dist_scalar(&r, 1.0, &u).unwrap();
        for (a, b) in with.iter().zip(&without) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        prop_assert_eq!(argsort(&with), argsort(&without));
    }

    #[test]
    fn gated_mixture_is_normalized(
        pc in positive(1..30),
        pe in positive(0..10),
        gate in 0.0f64..=1.0,
    ) {
        let norm = |v: Vec<f64>| { let s: f64 = v.iter().sum(); v.into_iter().map(|x| x / s).collect::<Vec<_>>() };
        let pc = norm(pc);
        let pe = if pe.is_empty() { pe } else { norm(pe) };
        let m = mix(&pc, &pe, gate);
        prop_assert_eq!(m.len(), pc.len() + pe.len());
        prop_assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn metrics_agree_with_brute_force(hyp in words(), reference in words()) {
        prop_assert_eq!(bleu1(&hyp, &reference), common::oracle_bleu1(&hyp, &reference));
        prop_assert_eq!(entity_metrics(&hyp, &reference), common::oracle_entity_metrics(&hyp, &reference));
        let (p, r) = entity_metrics(&hyp, &reference);
        prop_assert!((0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&r));
    }

    #[test]
    fn std_is_zero_for_constant_samples(x in -5.0f64..5.0, n in 1usize..10) {
        let (m, s) = mean_std(&vec![x; n]);
        prop_assert!((m - x).abs() < 1e-12);
        prop_assert!(s < 1e-12);
    }

    #[test]
    fn tokens_are_lowercase_and_space_free(s in "\\PC{0,40}") {
        for t in tokenize(&s) {
            prop_assert!(!t.is_empty());
            prop_assert!(!t.chars().any(char::is_whitespace));
            prop_assert_eq!(t.to_lowercase(), t.clone());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn model_mixture_sums_to_one(seed in 0u64..1000, variant in prop::sample::select(Variant::ALL.to_vec())) {
        let (kb, ds) = common::corpus(seed % 4);
        let vocab = Vocabulary::build(&ds, &kb, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cfg = ModelConfig::with_dims(6, variant);
        cfg.init_scale = 1.0;
        let model = Model::new(cfg, vocab.common_len(), &mut rng);
        let pair = &ds.pairs[rng.gen_range(0..ds.len())];
        let prepared = prepare_message(&pair.message_tokens, &pair.message_spans, &kb, &vocab).unwrap();
        for mass in common::mixture_masses(&model, &prepared, 6, |_, n| rng.gen_range(0..n)) {
            prop_assert!((mass - 1.0).abs() < 1e-9, "mass {}", mass);
        }
    }

    #[test]
    fn type_substitution_restores_the_original(seed in 0u64..50) {
        let (kb, ds) = common::corpus(seed % 3);
        let pair = &ds.pairs[(seed as usize * 7) % ds.len()];
        let typed = substitute_types(&pair.response_tokens, &pair.response_spans, &kb).unwrap();
        prop_assert_eq!(typed.restore(), pair.response_tokens.clone());
        prop_assert_eq!(typed.tokens.len(), typed.alignment.len());
    }
}
