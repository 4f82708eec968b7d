//! Corpus-level BLEU and chrF on tokenized, lowercased text.

use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

const BLEU_ORDER: usize = 4;
const CHRF_ORDER: usize = 6;

fn check_corpus<H: AsRef<str>, R: AsRef<str>>(metric: &str, hyps: &[H], refs: &[R]) -> Result<()> {
    if hyps.is_empty() {
        return Err(Error::Metric(format!("{metric}: empty corpus")));
    }
    if hyps.len() != refs.len() {
        return Err(Error::Metric(format!(
            "{metric}: {} hypotheses but {} references",
            hyps.len(),
            refs.len()
        )));
    }
    Ok(())
}

fn ngram_counts<T: Hash + Eq + Clone>(items: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if items.len() >= n {
        for w in items.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// (clipped matches, hypothesis n-grams, reference n-grams)
fn overlap<T: Hash + Eq + Clone>(hyp: &[T], reference: &[T], n: usize) -> (usize, usize, usize) {
    let h = ngram_counts(hyp, n);
    let r = ngram_counts(reference, n);
    let matches = h.iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum();
    (matches, hyp.len().saturating_sub(n - 1), reference.len().saturating_sub(n - 1))
}

/// Sufficient statistics of corpus BLEU.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BleuStats {
    pub matches: [usize; BLEU_ORDER],
    pub hyp_ngrams: [usize; BLEU_ORDER],
    pub ref_ngrams: [usize; BLEU_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn collect<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R]) -> Result<Self> {
        check_corpus("BLEU", hyps, refs)?;
        let mut s = BleuStats::default();
        for (h, r) in hyps.iter().zip(refs) {
            let h: Vec<String> = h.as_ref().split_whitespace().map(str::to_lowercase).collect();
            let r: Vec<String> = r.as_ref().split_whitespace().map(str::to_lowercase).collect();
            s.hyp_len += h.len();
            s.ref_len += r.len();
            for n in 1..=BLEU_ORDER {
                let (m, th, tr) = overlap(&h, &r, n);
                s.matches[n - 1] += m;
                s.hyp_ngrams[n - 1] += th;
                s.ref_ngrams[n - 1] += tr;
            }
        }
        Ok(s)
    }

    /// BLEU in percent. Orders for which neither side has any n-gram are
    /// left out of the geometric mean; `smooth` adds one to the numerator
    /// and denominator of every included order.
    pub fn score(&self, smooth: bool) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        let mut orders = 0;
        for n in 0..BLEU_ORDER {
            if self.hyp_ngrams[n] == 0 && self.ref_ngrams[n] == 0 {
                continue;
            }
            let (m, t) = if smooth {
                (self.matches[n] + 1, self.hyp_ngrams[n] + 1)
            } else {
                (self.matches[n], self.hyp_ngrams[n])
            };
            if m == 0 {
                return 0.0;
            }
            log_sum += (m as f64 / t as f64).ln();
            orders += 1;
        }
        let bp = (1.0 - self.ref_len as f64 / self.hyp_len as f64).min(0.0).exp();
        100.0 * bp * (log_sum / orders as f64).exp()
    }
}

/// Corpus BLEU (1–4-grams, uncased, single reference) in percent.
pub fn bleu<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R], smooth: bool) -> Result<f64> {
    Ok(BleuStats::collect(hyps, refs)?.score(smooth))
}

/// Corpus chrF in percent: character 1–6-grams with whitespace removed,
/// matches summed over the corpus, precision and recall averaged over the
/// orders where both sides have n-grams, then combined as F_β.
pub fn chrf<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R], beta: f64) -> Result<f64> {
    check_corpus("chrF", hyps, refs)?;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Metric(format!("chrF: beta must be positive, got {beta}")));
    }
    let mut m = [0usize; CHRF_ORDER];
    let mut th = [0usize; CHRF_ORDER];
    let mut tr = [0usize; CHRF_ORDER];
    for (h, r) in hyps.iter().zip(refs) {
        let h: Vec<char> = h.as_ref().to_lowercase().chars().filter(|c| !c.is_whitespace()).collect();
        let r: Vec<char> = r.as_ref().to_lowercase().chars().filter(|c| !c.is_whitespace()).collect();
        for n in 1..=CHRF_ORDER {
            let (a, b, c) = overlap(&h, &r, n);
            m[n - 1] += a;
            th[n - 1] += b;
            tr[n - 1] += c;
        }
    }
    let (mut p, mut r, mut orders) = (0.0, 0.0, 0usize);
    for n in 0..CHRF_ORDER {
        if th[n] == 0 || tr[n] == 0 {
            continue;
        }
        p += m[n] as f64 / th[n] as f64;
        r += m[n] as f64 / tr[n] as f64;
        orders += 1;
    }
    if orders == 0 {
        return Ok(0.0);
    }
    let (p, r) = (p / orders as f64, r / orders as f64);
    if p == 0.0 && r == 0.0 {
        return Ok(0.0);
    }
    let b2 = beta * beta;
    Ok(100.0 * (1.0 + b2) * p * r / (b2 * p + r))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_exactly_100() {
        let x = ["a small dog runs .", "two men", "ok"];
        assert_eq!(bleu(&x, &x, false).unwrap(), 100.0);
        assert_eq!(chrf(&x, &x, 1.0).unwrap(), 100.0);
    }

    #[test]
    fn clipped_unigram_precision() {
        let s = BleuStats::collect(&["the the the the"], &["the cat sat down"]).unwrap();
        assert_eq!((s.matches[0], s.hyp_ngrams[0]), (1, 4));
    }

    #[test]
    fn no_four_gram_match_gives_zero() {
        assert_eq!(bleu(&["a b c d e"], &["a b c x d e"], false).unwrap(), 0.0);
        assert!(bleu(&["a b c d e"], &["a b c x d e"], true).unwrap() > 0.0);
    }

    #[test]
    fn chrf_hand_value() {
        let v = chrf(&["abcd"], &["abce"], 1.0).unwrap();
        assert!((v - 47.916_666_666_666_664).abs() < 1e-9);
    }

    #[test]
    fn disjoint_and_errors() {
        assert_eq!(chrf(&["abc"], &["xyz"], 1.0).unwrap(), 0.0);
        assert!(bleu::<&str, &str>(&[], &[], false).is_err());
        assert!(chrf(&["a"], &["a", "b"], 1.0).is_err());
    }

    #[test]
    fn bleu_is_uncased() {
        assert_eq!(bleu(&["The Cat sat on the mat"], &["the cat sat on THE mat"], false).unwrap(), 100.0);
    }
}
