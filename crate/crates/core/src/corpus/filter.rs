use std::collections::{BTreeSet, HashSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::charlm::SentenceScorer;
use super::{RawPair, ScoredPair};
use crate::error::{Error, Result};
use crate::vocab;

pub const TERMINAL_PUNCTUATION: [&str; 4] = [".", "...", "?", "!"];

fn terminal_count<S: AsRef<str>>(tokens: &[S]) -> i64 {
    tokens.iter().filter(|t| TERMINAL_PUNCTUATION.contains(&t.as_ref())).count() as i64
}

/// `−|c_s − c_t| − max(0, c_s − 1) − max(0, c_t − 1)` where `c` counts
/// tokens that are exactly one of `. ... ? !`.
pub fn subs_h_score<S: AsRef<str>, T: AsRef<str>>(src: &[S], tgt: &[T]) -> f64 {
    let (cs, ct) = (terminal_count(src), terminal_count(tgt));
    (-(cs - ct).abs() - (cs - 1).max(0) - (ct - 1).max(0)) as f64
}

/// Scores every pair with [`subs_h_score`] on whitespace tokens.
pub fn subs_h_filter(pairs: &[RawPair]) -> Vec<ScoredPair> {
    pairs
        .par_iter()
        .map(|p| {
            let s: Vec<&str> = p.source.split_whitespace().collect();
            let t: Vec<&str> = p.target.split_whitespace().collect();
            ScoredPair {
                pair: p.clone(),
                score: subs_h_score(&s, &t),
            }
        })
        .collect()
}

/// The `k` highest-scoring pairs, ordered by score (descending) then id.
pub fn select_top_k(mut scored: Vec<ScoredPair>, k: usize) -> Result<Vec<RawPair>> {
    if k == 0 {
        return Err(Error::Corpus("k must be at least 1".into()));
    }
    if k > scored.len() {
        return Err(Error::Corpus(format!("k = {k} exceeds the {} available pairs", scored.len())));
    }
    if let Some(bad) = scored.iter().find(|s| !s.score.is_finite()) {
        return Err(Error::Corpus(format!("pair {} has non-finite score {}", bad.pair.id, bad.score)));
    }
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.pair.id.cmp(&b.pair.id)));
    scored.truncate(k);
    Ok(scored.into_iter().map(|s| s.pair).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmFilterConfig {
    pub max_tokens: usize,
    pub max_length_ratio: f64,
    /// Largest tolerated fraction of non-alphabetic characters per side.
    pub max_non_alpha: f64,
}

impl Default for LmFilterConfig {
    fn default() -> Self {
        LmFilterConfig {
            max_tokens: 100,
            max_length_ratio: 2.0,
            max_non_alpha: 0.5,
        }
    }
}

/// Pairs dropped by each stage of [`subs_lm_filter`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub input: usize,
    pub length: usize,
    pub noise: usize,
    pub whitelist: usize,
    pub duplicate: usize,
    pub kept: usize,
}

impl fmt::Display for FilterReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "stage\tdropped\tremaining")?;
        let mut left = self.input;
        writeln!(f, "input\t0\t{left}")?;
        for (name, n) in [
            ("length", self.length),
            ("noise", self.noise),
            ("whitelist", self.whitelist),
            ("duplicate", self.duplicate),
        ] {
            left -= n;
            writeln!(f, "{name}\t{n}\t{left}")?;
        }
        Ok(())
    }
}

/// Tokens that count for filtering; tags and other reserved tokens do not.
fn content(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace().filter(|t| !vocab::is_special(t))
}

fn length_ok(p: &RawPair, cfg: &LmFilterConfig) -> bool {
    let (s, t) = (content(&p.source).count(), content(&p.target).count());
    if s == 0 || t == 0 || s > cfg.max_tokens || t > cfg.max_tokens {
        return false;
    }
    let (lo, hi) = (s.min(t) as f64, s.max(t) as f64);
    hi / lo <= cfg.max_length_ratio
}

fn noisy(text: &str, cfg: &LmFilterConfig) -> bool {
    if text.chars().any(char::is_control) {
        return true;
    }
    let visible: Vec<char> = content(text).flat_map(str::chars).collect();
    if visible.is_empty() {
        return true;
    }
    let non_alpha = visible.iter().filter(|c| !c.is_alphabetic()).count();
    non_alpha as f64 / visible.len() as f64 > cfg.max_non_alpha
}

/// Characters of an in-domain corpus (whitespace excluded).
pub fn build_whitelist<S: AsRef<str>>(lines: &[S]) -> BTreeSet<char> {
    lines
        .iter()
        .flat_map(|l| l.as_ref().chars())
        .filter(|c| !c.is_whitespace())
        .collect()
}

/// Length/ratio filter, noise filter, character whitelist, exact
/// deduplication, then scoring of the target side by `lm`. Survivors keep
/// their input order. Reserved tokens such as language tags are ignored by
/// the first three stages.
pub fn subs_lm_filter(
    pairs: &[RawPair],
    lm: &dyn SentenceScorer,
    whitelist: &BTreeSet<char>,
    cfg: &LmFilterConfig,
) -> Result<(Vec<ScoredPair>, FilterReport)> {
    let mut report = FilterReport {
        input: pairs.len(),
        ..FilterReport::default()
    };
    let mut seen: HashSet<(&str, &str)> = HashSet::new();
    let mut kept: Vec<&RawPair> = Vec::new();
    for p in pairs {
        if !length_ok(p, cfg) {
            report.length += 1;
        } else if noisy(&p.source, cfg) || noisy(&p.target, cfg) {
            report.noise += 1;
        } else if content(&p.source)
            .chain(content(&p.target))
            .flat_map(str::chars)
            .any(|c| !whitelist.contains(&c))
        {
            report.whitelist += 1;
        } else if !seen.insert((p.source.as_str(), p.target.as_str())) {
            report.duplicate += 1;
        } else {
            kept.push(p);
        }
    }
    report.kept = kept.len();
    if kept.is_empty() {
        return Err(Error::Corpus(format!("no pairs survive filtering\n{report}")));
    }
    let scored = kept
        .par_iter()
        .map(|p| ScoredPair {
            pair: (*p).clone(),
            score: lm.score(&p.target),
        })
        .collect();
    Ok((scored, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CharLm, Origin};

    fn pair(id: u64, s: &str, t: &str) -> RawPair {
        RawPair {
            id,
            source: s.into(),
            target: t.into(),
            origin: Origin::Subtitles,
        }
    }

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn subs_h_examples() {
        assert_eq!(subs_h_score(&toks("hello ."), &toks("hallo .")), 0.0);
        assert_eq!(subs_h_score(&toks("wait ... what ?"), &toks("was ?")), -2.0);
        assert_eq!(subs_h_score(&toks("no marks"), &toks("keine")), 0.0);
    }

    #[test]
    fn top_k_examples() {
        let scored: Vec<ScoredPair> = [5.0, 1.0, 3.0]
            .iter()
            .enumerate()
            .map(|(i, &s)| ScoredPair {
                pair: pair(i as u64, "a", "b"),
                score: s,
            })
            .collect();
        let top = select_top_k(scored.clone(), 2).unwrap();
        assert_eq!(top.iter().map(|p| p.id).collect::<Vec<_>>(), vec![0, 2]);
        assert!(select_top_k(scored.clone(), 0).is_err());
        assert!(select_top_k(scored, 4).is_err());
    }

    #[test]
    fn lm_filter_stages() {
        let lm = CharLm::train(&["a dog runs", "the cat"], 6, 0.01).unwrap();
        let wl = build_whitelist(&["a dog runs", "the cat", "ein hund"]);
        let pairs = vec![
            pair(0, "a dog", "ein hund"),
            pair(1, "a dog", "ein hund"),
            pair(2, "a dog", "ein hünd"),
            pair(3, "a", "ein hund a dog runs"),
            pair(4, ". .", "ein hund"),
        ];
        let (scored, report) = subs_lm_filter(&pairs, &lm, &wl, &LmFilterConfig::default()).unwrap();
        assert_eq!(scored.len(), 1);
        assert_eq!(scored[0].pair.id, 0);
        assert_eq!(
            report,
            FilterReport {
                input: 5,
                length: 1,
                noise: 1,
                whitelist: 1,
                duplicate: 1,
                kept: 1
            }
        );
        let again: Vec<RawPair> = scored.into_iter().map(|s| s.pair).collect();
        let (_, r2) = subs_lm_filter(&again, &lm, &wl, &LmFilterConfig::default()).unwrap();
        assert_eq!(r2.kept, again.len());
    }

    #[test]
    fn empty_survivors_is_error() {
        let lm = CharLm::train(&["a"], 2, 0.01).unwrap();
        let wl = build_whitelist(&["a"]);
        assert!(subs_lm_filter(&[pair(0, "zz", "zz")], &lm, &wl, &LmFilterConfig::default()).is_err());
    }
}
