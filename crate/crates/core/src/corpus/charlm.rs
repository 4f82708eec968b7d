use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};

/// Scores a sentence by in-domain likelihood; higher is better.
pub trait SentenceScorer: Sync {
    fn score(&self, sentence: &str) -> f64;
}

const BOS: u32 = 0;
const EOS: u32 = 1;
const UNK: u32 = 2;

/// Character n-gram language model with add-k smoothing over a closed
/// alphabet (training characters plus end-of-sentence and unknown).
#[derive(Clone, Debug)]
pub struct CharLm {
    order: usize,
    k: f64,
    alphabet: BTreeMap<char, u32>,
    /// context → (total count, next-symbol counts)
    counts: HashMap<Vec<u32>, (u64, HashMap<u32, u64>)>,
}

impl CharLm {
    pub const DEFAULT_ORDER: usize = 6;
    pub const DEFAULT_K: f64 = 0.01;

    pub fn train<S: AsRef<str>>(lines: &[S], order: usize, k: f64) -> Result<Self> {
        if order == 0 {
            return Err(Error::invalid("CharLm::train", "order must be at least 1"));
        }
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::invalid("CharLm::train", format!("smoothing constant {k} must be positive")));
        }
        let mut alphabet = BTreeMap::new();
        for c in lines.iter().flat_map(|l| l.as_ref().chars()) {
            alphabet.entry(c).or_insert(0);
        }
        for (i, v) in alphabet.values_mut().enumerate() {
            *v = i as u32 + 3;
        }
        let mut lm = CharLm {
            order,
            k,
            alphabet,
            counts: HashMap::new(),
        };
        for l in lines {
            let syms = lm.symbols(l.as_ref());
            for (ctx, next) in lm.events(&syms) {
                let e = lm.counts.entry(ctx).or_default();
                e.0 += 1;
                *e.1.entry(next).or_insert(0) += 1;
            }
        }
        Ok(lm)
    }

    /// Predictable symbols: alphabet characters, EOS and UNK.
    pub fn alphabet_size(&self) -> usize {
        self.alphabet.len() + 2
    }

    fn symbols(&self, s: &str) -> Vec<u32> {
        s.chars().map(|c| self.alphabet.get(&c).copied().unwrap_or(UNK)).collect()
    }

    fn events(&self, syms: &[u32]) -> Vec<(Vec<u32>, u32)> {
        let n = self.order - 1;
        let mut padded = vec![BOS; n];
        padded.extend_from_slice(syms);
        padded.push(EOS);
        (n..padded.len()).map(|i| (padded[i - n..i].to_vec(), padded[i])).collect()
    }

    fn prob_sym(&self, ctx: &[u32], next: u32) -> f64 {
        let v = self.alphabet_size() as f64;
        let (total, c) = match self.counts.get(ctx) {
            Some((t, m)) => (*t as f64, m.get(&next).copied().unwrap_or(0) as f64),
            None => (0.0, 0.0),
        };
        (c + self.k) / (total + self.k * v)
    }

    /// `P(next | context)`; `None` as `next` is end of sentence. Only the
    /// last `order - 1` context characters matter; shorter contexts are
    /// padded with sentence-start symbols.
    pub fn prob(&self, context: &str, next: Option<char>) -> f64 {
        let syms = self.symbols(context);
        let n = self.order - 1;
        let mut ctx = vec![BOS; n.saturating_sub(syms.len())];
        ctx.extend_from_slice(&syms[syms.len().saturating_sub(n)..]);
        let next = next.map_or(EOS, |c| self.alphabet.get(&c).copied().unwrap_or(UNK));
        self.prob_sym(&ctx, next)
    }

    /// All predictable symbols: `Some(c)` for alphabet characters, `None`
    /// for end of sentence. The unknown symbol is not listed.
    pub fn outcomes(&self) -> impl Iterator<Item = Option<char>> + '_ {
        self.alphabet.keys().copied().map(Some).chain(std::iter::once(None))
    }

    /// Probability mass given to characters outside the alphabet.
    pub fn unknown_prob(&self, context: &str) -> f64 {
        let syms = self.symbols(context);
        let n = self.order - 1;
        let mut ctx = vec![BOS; n.saturating_sub(syms.len())];
        ctx.extend_from_slice(&syms[syms.len().saturating_sub(n)..]);
        self.prob_sym(&ctx, UNK)
    }

    /// Mean per-symbol natural-log probability, end of sentence included.
    pub fn mean_log_prob(&self, sentence: &str) -> f64 {
        let syms = self.symbols(sentence);
        let events = self.events(&syms);
        let total: f64 = events.iter().map(|(c, n)| self.prob_sym(c, *n).ln()).sum();
        total / events.len() as f64
    }
}

impl SentenceScorer for CharLm {
    fn score(&self, sentence: &str) -> f64 {
        self.mean_log_prob(sentence)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distributions_sum_to_one() {
        let lm = CharLm::train(&["a dog runs", "two dogs"], 3, 0.01).unwrap();
        for ctx in ["", "a", "do", "zz", "s r"] {
            let s: f64 = lm.outcomes().map(|o| lm.prob(ctx, o)).sum::<f64>() + lm.unknown_prob(ctx);
            assert!((s - 1.0).abs() < 1e-12, "{ctx}: {s}");
        }
    }

    #[test]
    fn in_domain_beats_noise() {
        let lm = CharLm::train(&["a dog runs in the park", "a man rides a bike"], 6, 0.01).unwrap();
        assert!(lm.score("a dog runs in the park") > lm.score("qzx kwv pjjf hh gqqz"));
    }

    #[test]
    fn rejects_bad_settings() {
        assert!(CharLm::train(&["a"], 0, 0.01).is_err());
        assert!(CharLm::train(&["a"], 3, 0.0).is_err());
    }
}
