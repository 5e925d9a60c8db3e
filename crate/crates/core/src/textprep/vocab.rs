use std::collections::HashMap;

use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

pub const PAD_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;
pub const UNK_ID: usize = 3;

const RESERVED: [&str; 4] = [PAD, BOS, EOS, UNK];

/// Token ↔ index map with the reserved entries at indices 0..4.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl Vocabulary {
    pub const RESERVED: usize = RESERVED.len();

    /// Reserved entries, then the given tokens in order. Duplicates and
    /// reserved names among `tokens` are skipped.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Self {
            tokens: Vec::new(),
            lookup: HashMap::new(),
        };
        for t in RESERVED.iter().map(|s| s.to_string()).chain(tokens.into_iter().map(Into::into)) {
            if !v.lookup.contains_key(&t) {
                v.lookup.insert(t.clone(), v.tokens.len());
                v.tokens.push(t);
            }
        }
        v
    }

    /// Frequency-ranked vocabulary capped at `cap` entries including the
    /// reserved ones; frequency ties are ordered lexicographically.
    pub fn build<S: AsRef<str>>(corpus: &[Vec<S>], cap: usize) -> Result<Self> {
        if cap < Self::RESERVED {
            return Err(Error::Config(format!(
                "vocabulary cap {cap} is smaller than the {} reserved entries",
                Self::RESERVED
            )));
        }
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for sent in corpus {
            for t in sent {
                let t = t.as_ref();
                if !RESERVED.contains(&t) {
                    *freq.entry(t).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(&str, usize)> = freq.into_iter().collect();
        ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        ranked.truncate(cap - Self::RESERVED);
        Ok(Self::from_tokens(ranked.into_iter().map(|(t, _)| t)))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Index of `token`, falling back to the unknown entry.
    pub fn index(&self, token: &str) -> usize {
        self.lookup.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.lookup.get(token).copied()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.index(t.as_ref())).collect()
    }

    /// Encodes and appends the end-of-sentence marker.
    pub fn encode_with_eos<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        let mut ids = self.encode(tokens);
        ids.push(EOS_ID);
        ids
    }

    /// Maps indices back to tokens, dropping reserved markers other than unknown.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&i| i != PAD_ID && i != BOS_ID && i != EOS_ID)
            .map(|&i| self.token(i).unwrap_or(UNK).to_string())
            .collect()
    }

    /// One token per line in index order.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let tokens: Vec<&str> = text.lines().collect();
        for (i, r) in RESERVED.iter().enumerate() {
            if tokens.get(i) != Some(r) {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected reserved entry {r}"),
                });
            }
        }
        let v = Self::from_tokens(tokens[Self::RESERVED..].iter().copied());
        if v.len() != tokens.len() {
            return Err(Error::Parse {
                line: 0,
                msg: "vocabulary file contains duplicate tokens".into(),
            });
        }
        Ok(v)
    }
}
