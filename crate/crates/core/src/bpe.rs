//! Byte-pair encoding shared across languages, learned from per-language
//! word counts rescaled to equal totals. Hyphens always form their own
//! unit. Non-final units of a word carry the `@@` continuation marker.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::vocab::is_special;

pub const MARKER: &str = "@@";
const END_OF_WORD: &str = "</w>";
const FORMAT_VERSION: u32 = 1;
/// Pair frequencies this close (relatively) count as tied.
const TIE_TOLERANCE: f64 = 1e-9;

/// Word counts of one language, after rescaling.
#[derive(Clone, Debug, PartialEq)]
pub struct BalancedCounts {
    pub per_lang: Vec<BTreeMap<String, f64>>,
}

impl BalancedCounts {
    /// Sum of the per-language weights of every word.
    pub fn combined(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for lang in &self.per_lang {
            for (w, c) in lang {
                *out.entry(w.clone()).or_insert(0.0) += c;
            }
        }
        out
    }

    pub fn totals(&self) -> Vec<f64> {
        self.per_lang.iter().map(|m| m.values().sum()).collect()
    }
}

/// Scales every language's counts by `max_total / lang_total`.
pub fn balance_counts(per_lang: &[BTreeMap<String, f64>]) -> Result<BalancedCounts> {
    if per_lang.is_empty() {
        return Err(Error::Bpe("no languages to balance".into()));
    }
    let totals: Vec<f64> = per_lang.iter().map(|m| m.values().sum()).collect();
    for (i, (m, &t)) in per_lang.iter().zip(&totals).enumerate() {
        if m.values().any(|&c| !(c >= 0.0 && c.is_finite())) {
            return Err(Error::Bpe(format!("language {i} has a negative or non-finite count")));
        }
        if t <= 0.0 {
            return Err(Error::Bpe(format!("language {i} has no words")));
        }
    }
    let max = totals.iter().copied().fold(0.0, f64::max);
    Ok(BalancedCounts {
        per_lang: per_lang
            .iter()
            .zip(&totals)
            .map(|(m, &t)| m.iter().map(|(w, &c)| (w.clone(), c * max / t)).collect())
            .collect(),
    })
}

/// Counts whitespace tokens of `lines`, skipping reserved tokens.
pub fn word_counts<S: AsRef<str>>(lines: &[S]) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for tok in lines.iter().flat_map(|l| l.as_ref().split_whitespace()) {
        if !is_special(tok) {
            *out.entry(tok.to_string()).or_insert(0.0) += 1.0;
        }
    }
    out
}

/// `e-mail` → `e`, `-`, `mail`.
fn hyphen_segments(word: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, c) in word.char_indices() {
        if c == '-' {
            if i > start {
                out.push(&word[start..i]);
            }
            out.push(&word[i..i + 1]);
            start = i + 1;
        }
    }
    if start < word.len() {
        out.push(&word[start..]);
    }
    out
}

fn initial_symbols(segment: &str) -> Vec<String> {
    let mut syms: Vec<String> = segment.chars().map(String::from).collect();
    if let Some(last) = syms.last_mut() {
        last.push_str(END_OF_WORD);
    }
    syms
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    target_size: usize,
    ranks: HashMap<(String, String), usize>,
}

impl BpeModel {
    pub fn new(merges: Vec<(String, String)>, target_size: usize) -> Result<Self> {
        let mut ranks = HashMap::with_capacity(merges.len());
        for (i, m) in merges.iter().enumerate() {
            if ranks.insert(m.clone(), i).is_some() {
                return Err(Error::Bpe(format!("duplicate merge `{} {}`", m.0, m.1)));
            }
        }
        Ok(BpeModel {
            merges,
            target_size,
            ranks,
        })
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn target_size(&self) -> usize {
        self.target_size
    }

    /// Learns up to `target_size` merges, always taking the most frequent
    /// adjacent pair (lexicographically smallest among ties) and stopping
    /// early when no pair has weight 2 or more.
    pub fn learn(counts: &BTreeMap<String, f64>, target_size: usize) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::Bpe("cannot learn from empty counts".into()));
        }
        let mut seg_counts: BTreeMap<&str, f64> = BTreeMap::new();
        for (word, &c) in counts {
            if is_special(word) {
                continue;
            }
            for seg in hyphen_segments(word) {
                *seg_counts.entry(seg).or_insert(0.0) += c;
            }
        }
        let mut table = SymbolTable::default();
        let mut words: Vec<(Vec<u32>, f64)> = seg_counts
            .iter()
            .map(|(seg, &c)| (initial_symbols(seg).iter().map(|s| table.intern(s)).collect(), c))
            .collect();

        let mut merges = Vec::new();
        while merges.len() < target_size {
            let mut stats: HashMap<(u32, u32), f64> = HashMap::new();
            for (syms, c) in &words {
                for w in syms.windows(2) {
                    *stats.entry((w[0], w[1])).or_insert(0.0) += c;
                }
            }
            let Some(max) = stats.values().copied().reduce(f64::max) else {
                break;
            };
            if max < 2.0 {
                break;
            }
            let floor = max * (1.0 - TIE_TOLERANCE);
            let best = stats
                .iter()
                .filter(|(_, &f)| f >= floor)
                .map(|(&p, _)| p)
                .min_by(|a, b| (table.name(a.0), table.name(a.1)).cmp(&(table.name(b.0), table.name(b.1))))
                .expect("max exists");
            let joined = format!("{}{}", table.name(best.0), table.name(best.1));
            let new_id = table.intern(&joined);
            for (syms, _) in words.iter_mut() {
                merge_pair(syms, best, new_id);
            }
            merges.push((table.name(best.0).to_string(), table.name(best.1).to_string()));
        }
        BpeModel::new(merges, target_size)
    }

    fn segment(&self, segment: &str) -> Vec<String> {
        let mut syms = initial_symbols(segment);
        loop {
            let best = syms
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())).copied())
                .min();
            let Some(rank) = best else { break };
            let (a, b) = &self.merges[rank];
            let mut out = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && &syms[i] == a && &syms[i + 1] == b {
                    out.push(format!("{a}{b}"));
                    i += 2;
                } else {
                    out.push(std::mem::take(&mut syms[i]));
                    i += 1;
                }
            }
            syms = out;
        }
        if let Some(last) = syms.last_mut() {
            last.truncate(last.len() - END_OF_WORD.len());
        }
        syms
    }

    /// Segments one token. Reserved tokens pass through unchanged.
    pub fn apply_word(&self, word: &str) -> Vec<String> {
        if is_special(word) {
            return vec![word.to_string()];
        }
        let mut units: Vec<String> = hyphen_segments(word).into_iter().flat_map(|s| self.segment(s)).collect();
        let n = units.len();
        for u in &mut units[..n.saturating_sub(1)] {
            u.push_str(MARKER);
        }
        units
    }

    pub fn apply<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<String> {
        tokens.iter().flat_map(|t| self.apply_word(t.as_ref())).collect()
    }

    /// `#bpe version=1 marker=@@ target_size=N` followed by one merge per line.
    pub fn to_text(&self) -> String {
        let mut s = format!("#bpe version={FORMAT_VERSION} marker={MARKER} target_size={}\n", self.target_size);
        for (a, b) in &self.merges {
            let _ = writeln!(s, "{a} {b}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Bpe("empty model file".into()))?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("#bpe") {
            return Err(Error::Bpe("missing `#bpe` header".into()));
        }
        let mut target_size = None;
        for f in fields {
            match f.split_once('=') {
                Some(("version", v)) if v == FORMAT_VERSION.to_string() => {}
                Some(("version", v)) => return Err(Error::Bpe(format!("unsupported model version {v}"))),
                Some(("marker", m)) if m == MARKER => {}
                Some(("marker", m)) => return Err(Error::Bpe(format!("unsupported marker `{m}`"))),
                Some(("target_size", n)) => {
                    target_size = Some(n.parse().map_err(|_| Error::Bpe(format!("bad target_size `{n}`")))?)
                }
                _ => return Err(Error::Bpe(format!("unexpected header field `{f}`"))),
            }
        }
        let target_size = target_size.ok_or_else(|| Error::Bpe("header lacks target_size".into()))?;
        let mut merges = Vec::new();
        for (i, line) in lines.enumerate() {
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => merges.push((a.to_string(), b.to_string())),
                _ => return Err(Error::Bpe(format!("line {}: expected two symbols, got `{line}`", i + 2))),
            }
        }
        BpeModel::new(merges, target_size)
    }
}

fn merge_pair(syms: &mut Vec<u32>, pair: (u32, u32), new_id: u32) {
    if syms.len() < 2 {
        return;
    }
    let mut out = Vec::with_capacity(syms.len());
    let mut i = 0;
    while i < syms.len() {
        if i + 1 < syms.len() && syms[i] == pair.0 && syms[i + 1] == pair.1 {
            out.push(new_id);
            i += 2;
        } else {
            out.push(syms[i]);
            i += 1;
        }
    }
    *syms = out;
}

#[derive(Default)]
struct SymbolTable {
    names: Vec<String>,
    ids: HashMap<String, u32>,
}

impl SymbolTable {
    fn intern(&mut self, s: &str) -> u32 {
        if let Some(&id) = self.ids.get(s) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(s.to_string());
        self.ids.insert(s.to_string(), id);
        id
    }

    fn name(&self, id: u32) -> &str {
        &self.names[id as usize]
    }
}

/// Joins `@@`-marked units back into tokens.
pub fn detokenize<S: AsRef<str>>(units: &[S]) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut open = false;
    for u in units {
        let u = u.as_ref();
        match u.strip_suffix(MARKER) {
            Some(stem) => {
                cur.push_str(stem);
                open = true;
            }
            None => {
                cur.push_str(u);
                out.push(std::mem::take(&mut cur));
                open = false;
            }
        }
    }
    if open {
        return Err(Error::Bpe(format!("dangling continuation marker after `{cur}`")));
    }
    Ok(out)
}
