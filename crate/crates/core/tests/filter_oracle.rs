//! Corpus filters against independent recounts and sorting oracles.

use mmtlab_core::corpus::{
    build_whitelist, select_top_k, subs_h_filter, subs_h_score, subs_lm_filter, CharLm, LmFilterConfig, Origin,
    RawPair, ScoredPair,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const VOCAB: [&str; 10] = [".", "...", "?", "!", "..", ",", "hi", "ok", "?!", "a"];

/// Counts terminal marks with a plain match, then applies the score formula.
fn recount(src: &[&str], tgt: &[&str]) -> f64 {
    let count = |s: &[&str]| s.iter().filter(|t| matches!(**t, "." | "..." | "?" | "!")).count() as f64;
    let (a, b) = (count(src), count(tgt));
    -(a - b).abs() - (a - 1.0).max(0.0) - (b - 1.0).max(0.0)
}

#[test]
fn subs_h_matches_recount_on_10k_sequences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10_000 {
        let seq = |rng: &mut ChaCha8Rng| -> Vec<&str> {
            (0..rng.gen_range(0..12)).map(|_| VOCAB[rng.gen_range(0..VOCAB.len())]).collect()
        };
        let (s, t) = (seq(&mut rng), seq(&mut rng));
        assert_eq!(subs_h_score(&s, &t), recount(&s, &t), "{s:?} / {t:?}");
    }
}

fn scored(scores: &[i32]) -> Vec<ScoredPair> {
    scores
        .iter()
        .enumerate()
        .map(|(i, &s)| ScoredPair {
            pair: RawPair::new(i as u64 * 7 % 101, "a", "b", Origin::Subtitles).unwrap(),
            score: s as f64 / 4.0,
        })
        .collect()
}

fn line(rng: &mut ChaCha8Rng) -> String {
    let words = ["ein", "hund", "läuft", "der", "mann", ".", "?", "!!", "katze", "x7", "…"];
    (0..rng.gen_range(1..9)).map(|_| words[rng.gen_range(0..words.len())]).collect::<Vec<_>>().join(" ")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn top_k_matches_full_sort(scores in prop::collection::vec(-8i32..8, 1..60), k_frac in 0.0f64..1.0) {
        let all = scored(&scores);
        let k = 1 + ((all.len() - 1) as f64 * k_frac) as usize;
        let mut oracle = all.clone();
        oracle.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap().then(a.pair.id.cmp(&b.pair.id)));
        let want: Vec<u64> = oracle[..k].iter().map(|s| s.pair.id).collect();
        let got: Vec<u64> = select_top_k(all, k).unwrap().iter().map(|p| p.id).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn subs_h_filter_scores_every_pair(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs: Vec<RawPair> = (0..30).map(|i| RawPair::new(i, line(&mut rng), line(&mut rng), Origin::Subtitles).unwrap()).collect();
        let out = subs_h_filter(&pairs);
        prop_assert_eq!(out.len(), pairs.len());
        for (s, p) in out.iter().zip(&pairs) {
            let (a, b): (Vec<&str>, Vec<&str>) = (p.source.split_whitespace().collect(), p.target.split_whitespace().collect());
            prop_assert_eq!(s.score, recount(&a, &b));
            prop_assert!(s.score <= 0.0);
        }
    }

    #[test]
    fn lm_filter_is_idempotent(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let in_domain: Vec<String> = (0..20).map(|_| line(&mut rng)).collect();
        let lm = CharLm::train(&in_domain, 4, 0.01).unwrap();
        let wl = build_whitelist(&in_domain);
        let pairs: Vec<RawPair> = (0..60).map(|i| RawPair::new(i, line(&mut rng), line(&mut rng), Origin::Subtitles).unwrap()).collect();
        let cfg = LmFilterConfig::default();
        if let Ok((first, _)) = subs_lm_filter(&pairs, &lm, &wl, &cfg) {
            let kept: Vec<RawPair> = first.iter().map(|s| s.pair.clone()).collect();
            let (second, report) = subs_lm_filter(&kept, &lm, &wl, &cfg).unwrap();
            prop_assert_eq!(report.kept, kept.len());
            prop_assert_eq!(second, first);
        }
    }

    #[test]
    fn char_lm_distributions_sum_to_one(seed in any::<u64>(), order in 1usize..7, ctx in "[a-zü .?]{0,10}") {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lines: Vec<String> = (0..10).map(|_| line(&mut rng)).collect();
        let lm = CharLm::train(&lines, order, 0.05).unwrap();
        let total: f64 = lm.outcomes().map(|o| lm.prob(&ctx, o)).sum::<f64>() + lm.unknown_prob(&ctx);
        prop_assert!((total - 1.0).abs() < 1e-12, "{}", total);
    }
}
