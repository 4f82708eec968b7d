//! BLEU and chrF against values computed by a separate reference script.

use mmtlab_core::metrics::{bleu, chrf};
use proptest::prelude::*;

const TOL: f64 = 1e-4;

const PAIRS: [(&str, &str); 5] = [
    ("a man is riding a bicycle down the street .", "a man rides a bicycle down the street ."),
    ("two dogs are playing in the snow .", "two dogs are playing in the deep snow ."),
    ("ein mann fährt ein fahrrad .", "ein mann fährt ein fahrrad auf der straße ."),
    ("The Girl in the RED dress smiles", "the girl in the red dress is smiling"),
    (
        "children play football on the green grass near the lake",
        "children are playing football on green grass near a lake",
    ),
];

/// (BLEU, smoothed BLEU, chrF β=1) per pair.
const GOLDEN: [(f64, f64, f64); 5] = [
    (58.1430736968, 63.1555237179, 73.8389212850),
    (67.5291821813, 70.9023091167, 82.5314409076),
    (48.2356079769, 51.0029457494, 74.0661041396),
    (70.1396726800, 72.8954518363, 79.4367628256),
    (0.0, 29.9822138934, 63.0008104258),
];
const CORPUS: (f64, f64, f64) = (53.8545554492, 55.1577810578, 73.1203678031);

fn close(name: &str, got: f64, want: f64) {
    assert!((got - want).abs() < TOL, "{name}: got {got}, want {want}");
}

#[test]
fn per_pair_goldens() {
    for (i, ((h, r), (b, bs, c))) in PAIRS.iter().zip(GOLDEN).enumerate() {
        close(&format!("bleu {i}"), bleu(&[h], &[r], false).unwrap(), b);
        close(&format!("smoothed bleu {i}"), bleu(&[h], &[r], true).unwrap(), bs);
        close(&format!("chrf {i}"), chrf(&[h], &[r], 1.0).unwrap(), c);
    }
}

#[test]
fn corpus_goldens() {
    let hyps: Vec<&str> = PAIRS.iter().map(|p| p.0).collect();
    let refs: Vec<&str> = PAIRS.iter().map(|p| p.1).collect();
    close("bleu", bleu(&hyps, &refs, false).unwrap(), CORPUS.0);
    close("smoothed bleu", bleu(&hyps, &refs, true).unwrap(), CORPUS.1);
    close("chrf", chrf(&hyps, &refs, 1.0).unwrap(), CORPUS.2);
}

#[test]
fn identity_is_exactly_100() {
    let refs: Vec<&str> = PAIRS.iter().map(|p| p.1).collect();
    assert_eq!(format!("{:.2}", bleu(&refs, &refs, false).unwrap()), "100.00");
    assert_eq!(format!("{:.2}", chrf(&refs, &refs, 1.0).unwrap()), "100.00");
}

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec("[a-e]{1,3}", 1..12).prop_map(|w| w.join(" "))
}

proptest! {
    #[test]
    fn identity_any_text(lines in prop::collection::vec(sentence(), 1..6)) {
        prop_assert_eq!(bleu(&lines, &lines, false).unwrap(), 100.0);
        prop_assert_eq!(chrf(&lines, &lines, 1.0).unwrap(), 100.0);
    }

    #[test]
    fn order_invariant(pairs in prop::collection::vec((sentence(), sentence()), 2..6), rot in 0usize..5) {
        let (h, r): (Vec<String>, Vec<String>) = pairs.iter().cloned().unzip();
        let k = rot % pairs.len();
        let mut h2 = h.clone();
        let mut r2 = r.clone();
        h2.rotate_left(k);
        r2.rotate_left(k);
        prop_assert_eq!(bleu(&h, &r, false).unwrap(), bleu(&h2, &r2, false).unwrap());
        prop_assert_eq!(chrf(&h, &r, 1.0).unwrap(), chrf(&h2, &r2, 1.0).unwrap());
    }

    #[test]
    fn bounded(pairs in prop::collection::vec((sentence(), sentence()), 1..6)) {
        let (h, r): (Vec<String>, Vec<String>) = pairs.into_iter().unzip();
        for v in [bleu(&h, &r, false).unwrap(), bleu(&h, &r, true).unwrap(), chrf(&h, &r, 1.0).unwrap()] {
            prop_assert!((0.0..=100.0 + 1e-9).contains(&v));
        }
    }
}
