// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PLUS: usize = 10;
pub const EQUALS: usize = 11;
pub const POSSESSIVE: usize = 12;
pub const IS: usize = 13;
pub const BOS: usize = 14;
pub const EOS: usize = 15;
pub const PAD: usize = 16;
const FIXED: [&str; 17] = [
    "0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "+", "=", "'s", " is", "<bos>", "<eos>", "<pad>",
];
const ENTITY_MARK: &str = "<e>";
const RELATION_MARK: &str = "<r>";

/// Which vocabulary items exist; the table itself is derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct VocabSpec {
    pub n_entities: usize,
    pub n_relations: usize,
    /// Write prompt entities/relations as a marker token followed by the
    /// symbol token, so every entity and relation span is two tokens long.
    #[serde(default)]
    pub multi_token: bool,
}

/// Dense token table: digits `0..=9` at ids 0–9, operators, structural
/// tokens and markers, then entities `E000…` and relations `R00…`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    spec: VocabSpec,
    tokens: Vec<String>,
    compact: HashMap<String, usize>,
    longest: usize,
    entity_base: usize,
    relation_base: usize,
}

fn width(n: usize, min: usize) -> usize {
    n.saturating_sub(1).to_string().len().max(min)
}

impl Vocab {
    pub fn new(spec: VocabSpec) -> Self {
        let mut tokens: Vec<String> = FIXED.iter().map(|s| s.to_string()).collect();
        if spec.multi_token {
            tokens.push(ENTITY_MARK.into());
            tokens.push(RELATION_MARK.into());
        }
        let entity_base = tokens.len();
        let ew = width(spec.n_entities, 3);
        tokens.extend((0..spec.n_entities).map(|k| format!("E{k:0ew$}")));
        let relation_base = tokens.len();
        let rw = width(spec.n_relations, 2);
        tokens.extend((0..spec.n_relations).map(|k| format!("R{k:0rw$}")));
        let compact: HashMap<String, usize> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.split_whitespace().collect::<String>(), i))
            .collect();
        let longest = compact.keys().map(String::len).max().unwrap_or(1);
        Self {
            spec,
            tokens,
            compact,
            longest,
            entity_base,
            relation_base,
        }
    }

    /// Digits, operators and structural tokens only.
    pub fn arithmetic() -> Self {
        Self::new(VocabSpec::default())
    }

    pub fn spec(&self) -> VocabSpec {
        self.spec
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: usize) -> Result<&str> {
        self.tokens
            .get(id)
            .map(String::as_str)
            .ok_or_else(|| Error::Vocab(format!("unknown token id {id}")))
    }

    pub fn id(&self, atom: &str) -> Result<usize> {
        self.compact
            .get(&atom.split_whitespace().collect::<String>())
            .copied()
            .ok_or_else(|| Error::Vocab(format!("unknown atom `{atom}`")))
    }

    pub fn digit(d: u32) -> usize {
        debug_assert!(d < 10);
        d as usize
    }

    pub fn entity(&self, k: usize) -> Result<usize> {
        if k >= self.spec.n_entities {
            return Err(Error::Vocab(format!("entity {k} outside {} entities", self.spec.n_entities)));
        }
        Ok(self.entity_base + k)
    }

    pub fn relation(&self, k: usize) -> Result<usize> {
        if k >= self.spec.n_relations {
            return Err(Error::Vocab(format!(
                "relation {k} outside {} relations",
                self.spec.n_relations
            )));
        }
        Ok(self.relation_base + k)
    }

    /// Entity index of a token id, if it is an entity token.
    pub fn entity_index(&self, id: usize) -> Option<usize> {
        (self.entity_base..self.relation_base)
            .contains(&id)
            .then(|| id - self.entity_base)
    }

    pub fn entity_marker(&self) -> Option<usize> {
        self.spec.multi_token.then_some(FIXED.len())
    }

    pub fn relation_marker(&self) -> Option<usize> {
        self.spec.multi_token.then_some(FIXED.len() + 1)
    }

    /// Greedy longest-match tokenization; whitespace only separates atoms.
    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>> {
        let s: String = text.split_whitespace().collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < s.len() {
            let hit = (1..=self.longest.min(s.len() - i))
                .rev()
                .filter(|&n| s.is_char_boundary(i + n))
                .find_map(|n| self.compact.get(&s[i..i + n]).map(|&id| (id, n)));
            match hit {
                Some((id, n)) => {
                    out.push(id);
                    i += n;
                }
                None => {
                    return Err(Error::Vocab(format!("unknown atom at `{}`", &s[i..])));
                }
            }
        }
        Ok(out)
    }

    /// Surface text; a space follows every possessive.
    pub fn detokenize(&self, ids: &[usize]) -> Result<String> {
        let mut out = String::new();
        for (k, &id) in ids.iter().enumerate() {
            if k > 0 && ids[k - 1] == POSSESSIVE {
                out.push(' ');
            }
            out.push_str(self.token(id)?);
        }
        Ok(out)
    }

    /// SHA-256 of the token table, used to match datasets to models.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        crate::model::hex(&h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_layout() {
        let v = Vocab::arithmetic();
        for d in 0..10 {
            assert_eq!(v.id(&d.to_string()).unwrap(), d);
        }
        assert_eq!(v.id("+").unwrap(), PLUS);
        assert_eq!(v.id(" is").unwrap(), IS);
        assert_eq!(v.len(), 17);
    }

    #[test]
    fn entity_tokens_and_markers() {
        let v = Vocab::new(VocabSpec {
            n_entities: 1200,
            n_relations: 3,
            multi_token: true,
        });
        let e = v.entity(7).unwrap();
        assert_eq!(v.token(e).unwrap(), "E0007");
        assert_eq!(v.entity_index(e), Some(7));
        assert_eq!(v.entity_index(v.relation(0).unwrap()), None);
        assert_eq!(v.tokenize("<e>E0007's <r>R01 is").unwrap().len(), 6);
        assert!(v.entity(1200).is_err());
    }
}
