//! Token vocabulary with reserved ids and a frequency cutoff.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const BOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";

pub const DEFAULT_MIN_COUNT: usize = 10;

/// Maps tokens to dense ids. Ids 0..3 are reserved for PAD/UNK/BOS/EOS;
/// all other tokens appeared strictly more than `min_count` times in the
/// corpus the vocabulary was built from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    lookup: HashMap<String, usize>,
    pub min_count: usize,
}

impl Vocabulary {
    /// Build from a token stream. Non-reserved ids are assigned by
    /// descending frequency, ties broken lexicographically.
    pub fn build<'a, I, S>(sentences: I, min_count: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut any = false;
        for sentence in sentences {
            any = true;
            for token in sentence {
                *counts.entry(token.as_ref().to_string()).or_insert(0) += 1;
            }
        }
        if !any {
            return Err(Error::EmptyCorpus);
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c > min_count && !is_reserved(t))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));

        let mut tokens = vec![
            PAD_TOKEN.to_string(),
            UNK_TOKEN.to_string(),
            BOS_TOKEN.to_string(),
            EOS_TOKEN.to_string(),
        ];
        tokens.extend(kept.into_iter().map(|(t, _)| t));
        Ok(Self::from_tokens(tokens, min_count))
    }

    fn from_tokens(tokens: Vec<String>, min_count: usize) -> Self {
        let lookup = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, lookup, min_count }
    }

    /// Rebuild the lookup table after deserialization.
    pub fn rebuild_lookup(&mut self) {
        self.lookup = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Token id, UNK for out-of-vocabulary tokens.
    pub fn id(&self, token: &str) -> usize {
        self.lookup.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }
}

fn is_reserved(token: &str) -> bool {
    matches!(token, PAD_TOKEN | UNK_TOKEN | BOS_TOKEN | EOS_TOKEN)
}
