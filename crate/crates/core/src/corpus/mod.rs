//! Corpus preprocessing, the punctuation-heuristic and language-model
//! corpus filters, target-language/domain tagging and caption
//! concatenation.

mod charlm;
mod filter;
mod preprocess;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use charlm::{CharLm, SentenceScorer};
pub use filter::{
    build_whitelist, select_top_k, subs_h_filter, subs_h_score, subs_lm_filter, FilterReport, LmFilterConfig,
    TERMINAL_PUNCTUATION,
};
pub use preprocess::{fix_entities, normalize_punctuation, preprocess, preprocess_bytes, repair_mojibake, tokenize};

use crate::error::{Error, Result};
use crate::vocab;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Multi30k,
    MscocoSynthetic,
    Subtitles,
}

impl Origin {
    pub fn domain(self) -> Domain {
        match self {
            Origin::Multi30k => Domain::Caption,
            Origin::MscocoSynthetic => Domain::Synthetic,
            Origin::Subtitles => Domain::Subtitles,
        }
    }
}

/// A sentence pair of (preprocessed, space-separated) text.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RawPair {
    pub id: u64,
    pub source: String,
    pub target: String,
    pub origin: Origin,
}

impl RawPair {
    pub fn new(id: u64, source: impl Into<String>, target: impl Into<String>, origin: Origin) -> Result<Self> {
        let (source, target) = (source.into(), target.into());
        if source.trim().is_empty() || target.trim().is_empty() {
            return Err(Error::Corpus(format!("pair {id} has an empty side")));
        }
        Ok(RawPair {
            id,
            source,
            target,
            origin,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredPair {
    pub pair: RawPair,
    pub score: f64,
}

/// Tab-separated `id\tscore` lines.
pub fn write_scores(scored: &[ScoredPair], mut w: impl Write) -> Result<()> {
    for s in scored {
        writeln!(w, "{}\t{}", s.pair.id, s.score)?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lang {
    De,
    Fr,
}

impl Lang {
    pub fn tag(self) -> &'static str {
        match self {
            Lang::De => vocab::TO_DE,
            Lang::Fr => vocab::TO_FR,
        }
    }
}

impl FromStr for Lang {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "de" => Ok(Lang::De),
            "fr" => Ok(Lang::Fr),
            _ => Err(Error::Corpus(format!("unknown target language `{s}` (expected de or fr)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Caption,
    Synthetic,
    Subtitles,
}

impl Domain {
    pub fn tag(self) -> &'static str {
        match self {
            Domain::Caption => vocab::DOM_CAP,
            Domain::Synthetic => vocab::DOM_SYN,
            Domain::Subtitles => vocab::DOM_SUB,
        }
    }
}

impl FromStr for Domain {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "caption" => Ok(Domain::Caption),
            "synthetic" => Ok(Domain::Synthetic),
            "subtitles" => Ok(Domain::Subtitles),
            _ => Err(Error::Corpus(format!(
                "unknown domain `{s}` (expected caption, synthetic or subtitles)"
            ))),
        }
    }
}

impl fmt::Display for Lang {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Lang::De => "de",
            Lang::Fr => "fr",
        })
    }
}

/// `[<TO_XX>, <DOM_YY>, tokens…]`
pub fn tag<S: AsRef<str>>(tokens: &[S], lang: Lang, domain: Domain) -> Vec<String> {
    [lang.tag(), domain.tag()]
        .into_iter()
        .map(str::to_string)
        .chain(tokens.iter().map(|t| t.as_ref().to_string()))
        .collect()
}

/// `src <sep> cap_1 <sep> cap_2 …`
pub fn concat_captions<S: AsRef<str>, C: AsRef<str>>(src: &[S], captions: &[Vec<C>]) -> Vec<String> {
    let mut out: Vec<String> = src.iter().map(|t| t.as_ref().to_string()).collect();
    for cap in captions {
        out.push(vocab::SEP.to_string());
        out.extend(cap.iter().map(|t| t.as_ref().to_string()));
    }
    out
}
