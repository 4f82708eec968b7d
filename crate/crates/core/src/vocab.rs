use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const SEP: &str = "<sep>";
pub const TO_DE: &str = "<TO_DE>";
pub const TO_FR: &str = "<TO_FR>";
pub const DOM_CAP: &str = "<DOM_CAP>";
pub const DOM_SYN: &str = "<DOM_SYN>";
pub const DOM_SUB: &str = "<DOM_SUB>";

/// Reserved tokens, in id order.
pub const SPECIALS: [&str; 10] = [PAD, UNK, BOS, EOS, SEP, TO_DE, TO_FR, DOM_CAP, DOM_SYN, DOM_SUB];

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const BOS_ID: usize = 2;
pub const EOS_ID: usize = 3;
pub const SEP_ID: usize = 4;

pub fn is_special(token: &str) -> bool {
    SPECIALS.contains(&token)
}

/// Bidirectional token/id map; the reserved specials always occupy the
/// first ids and regular tokens follow in sorted order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn build<'t>(tokens: impl IntoIterator<Item = &'t str>) -> Self {
        let regular: BTreeSet<&str> = tokens.into_iter().filter(|t| !is_special(t)).collect();
        let all = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(regular.into_iter().map(str::to_string))
            .collect();
        Self::from_tokens(all).expect("specials are unique and leading")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens.iter().zip(SPECIALS).any(|(a, b)| a != b) {
            return Err(Error::Vocabulary("reserved tokens missing or out of order".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Vocabulary(format!("duplicate token `{t}`")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or the unknown-token id.
    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id_or_unk(t.as_ref())).collect()
    }

    /// Tokens for `ids`, dropping pad/bos/eos.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&i| i != PAD_ID && i != BOS_ID && i != EOS_ID)
            .map(|&i| self.token(i).unwrap_or(UNK).to_string())
            .collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = Error;
    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Vocab::from_tokens(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_come_first_and_tokens_are_sorted() {
        let v = Vocab::build(["zebra", "apple", "apple", TO_DE]);
        assert_eq!(v.id(PAD), Some(PAD_ID));
        assert_eq!(v.id(EOS), Some(EOS_ID));
        assert_eq!(v.id("apple"), Some(SPECIALS.len()));
        assert_eq!(v.id("zebra"), Some(SPECIALS.len() + 1));
        assert_eq!(v.len(), SPECIALS.len() + 2);
        assert_eq!(v.id_or_unk("missing"), UNK_ID);
    }

    #[test]
    fn rejects_reordered_specials() {
        let mut t: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        t.swap(0, 1);
        assert!(Vocab::from_tokens(t).is_err());
    }
}
