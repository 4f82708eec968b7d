//! Subword merges against a from-scratch brute-force learner, plus
//! segmentation round trips.

use std::collections::BTreeMap;

use mmtlab_core::bpe::{balance_counts, detokenize, word_counts, BpeModel};
use mmtlab_core::corpus::preprocess;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Recounts every pair from the symbol strings each round and merges by
/// rebuilding each word.
fn brute_force(counts: &BTreeMap<String, f64>, target: usize) -> Vec<(String, String)> {
    let mut words: Vec<(Vec<String>, f64)> = Vec::new();
    for (w, &c) in counts {
        let mut piece = String::new();
        let mut pieces = Vec::new();
        for ch in w.chars() {
            if ch == '-' {
                if !piece.is_empty() {
                    pieces.push(std::mem::take(&mut piece));
                }
                pieces.push("-".to_string());
            } else {
                piece.push(ch);
            }
        }
        if !piece.is_empty() {
            pieces.push(piece);
        }
        for p in pieces {
            let mut syms: Vec<String> = p.chars().map(|c| c.to_string()).collect();
            let last = syms.pop().unwrap();
            syms.push(last + "</w>");
            words.push((syms, c));
        }
    }
    let mut merges = Vec::new();
    while merges.len() < target {
        let mut freq: Vec<((String, String), f64)> = Vec::new();
        for (syms, c) in &words {
            for i in 0..syms.len().saturating_sub(1) {
                let key = (syms[i].clone(), syms[i + 1].clone());
                match freq.iter_mut().find(|(k, _)| *k == key) {
                    Some((_, f)) => *f += c,
                    None => freq.push((key, *c)),
                }
            }
        }
        let max = freq.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
        if freq.is_empty() || max < 2.0 {
            break;
        }
        let best = freq
            .iter()
            .filter(|(_, f)| *f >= max * (1.0 - 1e-9))
            .map(|(k, _)| k.clone())
            .min()
            .unwrap();
        for (syms, _) in words.iter_mut() {
            let mut out = Vec::new();
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == best.0 && syms[i + 1] == best.1 {
                    out.push(format!("{}{}", best.0, best.1));
                    i += 2;
                } else {
                    out.push(syms[i].clone());
                    i += 1;
                }
            }
            *syms = out;
        }
        merges.push(best);
    }
    merges
}

const FIFTY_WORDS: &str = "the man rides a bike down the street while another man walks \
    his dog near the river and the dog barks at the bikes on the street a woman \
    in a red dress watches the dogs and men from the window of her e-mail office \
    the children laugh and play";

#[test]
fn fifty_word_corpus_matches_oracle() {
    let words: Vec<&str> = FIFTY_WORDS.split_whitespace().collect();
    assert_eq!(words.len(), 50);
    let counts = word_counts(&[FIFTY_WORDS]);
    for target in [0, 1, 5, 20, 200] {
        let m = BpeModel::learn(&counts, target).unwrap();
        assert_eq!(m.merges(), brute_force(&counts, target).as_slice(), "target {target}");
    }
}

fn random_word(rng: &mut impl Rng) -> String {
    let alphabet: Vec<char> = "aabcdeeéiklmnorstuü'".chars().collect();
    let len = rng.gen_range(1..8);
    let mut w: String = (0..len).map(|_| *alphabet.choose(rng).unwrap()).collect();
    if rng.gen_bool(0.1) {
        w.push('-');
        w.extend((0..rng.gen_range(1..5)).map(|_| *alphabet.choose(rng).unwrap()));
    }
    w
}

fn random_lines(seed: u64, n: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lexicon: Vec<String> = (0..300).map(|_| random_word(&mut rng)).collect();
    (0..n)
        .map(|_| {
            let k = rng.gen_range(1..15);
            let mut toks: Vec<String> = (0..k).map(|_| lexicon.choose(&mut rng).unwrap().clone()).collect();
            if rng.gen_bool(0.2) {
                toks.insert(0, "<TO_DE>".into());
            }
            toks.join(" ")
        })
        .collect()
}

#[test]
fn roundtrip_ten_thousand_lines() {
    let lines = random_lines(7, 10_000);
    let m = BpeModel::learn(&word_counts(&lines[..2000]), 500).unwrap();
    for line in &lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        let units = m.apply(&toks);
        assert_eq!(detokenize(&units).unwrap(), toks, "{line}");
        for u in &units {
            let bare = u.strip_suffix("@@").unwrap_or(u);
            assert!(!bare.contains('-') || bare == "-", "unit `{u}` crosses a hyphen");
        }
    }
}

#[test]
fn balanced_totals_are_equal() {
    let en = word_counts(&random_lines(1, 300));
    let de = word_counts(&random_lines(2, 40));
    let b = balance_counts(&[en, de]).unwrap();
    let t = b.totals();
    assert!((t[0] - t[1]).abs() <= 1e-6 * t[0].max(t[1]), "{t:?}");
}

#[test]
fn duplicating_a_language_keeps_merges() {
    let en = word_counts(&random_lines(3, 400));
    let de_lines = random_lines(4, 100);
    let de = word_counts(&de_lines);
    let de_twice = word_counts(&[de_lines.clone(), de_lines].concat());
    let once = BpeModel::learn(&balance_counts(&[en.clone(), de]).unwrap().combined(), 150).unwrap();
    let twice = BpeModel::learn(&balance_counts(&[en, de_twice]).unwrap().combined(), 150).unwrap();
    assert_eq!(once.merges().len(), 150);
    assert_eq!(once, twice);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_corpora_match_oracle(seed in any::<u64>(), target in 0usize..40) {
        let lines = random_lines(seed, 12);
        let counts = word_counts(&lines);
        let m = BpeModel::learn(&counts, target).unwrap();
        let oracle = brute_force(&counts, target);
        prop_assert_eq!(m.merges(), oracle.as_slice());
    }

    #[test]
    fn preprocessed_text_roundtrips(text in "\\PC{0,80}", seed in any::<u64>()) {
        let toks = preprocess(&text);
        let m = BpeModel::learn(&word_counts(&random_lines(seed, 50)), 100).unwrap();
        let units = m.apply(&toks);
        prop_assert_eq!(detokenize(&units).unwrap(), toks);
    }

    #[test]
    fn model_file_roundtrips(seed in any::<u64>()) {
        let m = BpeModel::learn(&word_counts(&random_lines(seed, 30)), 60).unwrap();
        prop_assert_eq!(BpeModel::from_text(&m.to_text()).unwrap(), m);
    }
}
