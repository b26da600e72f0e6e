use std::collections::HashMap;

use sha2::{Digest, Sha256};

use super::{AspectInstance, TextInstance};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
const PAD: &str = "<pad>";
const UNK: &str = "<unk>";

/// Token ↔ id map. Ids are assigned in first-seen order after the two specials.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    index: HashMap<String, usize>,
    tokens: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_tokens(Vec::<String>::new())
    }
}

impl Vocabulary {
    /// Build from a token list that excludes the specials.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Self {
            index: HashMap::new(),
            tokens: Vec::new(),
        };
        v.insert(PAD.to_string());
        v.insert(UNK.to_string());
        for t in tokens {
            v.insert(t.into());
        }
        v
    }

    /// Build from every word of every instance, in order of appearance.
    pub fn build<'a>(corpora: impl IntoIterator<Item = &'a [TextInstance]>) -> Self {
        let mut v = Self::default();
        for corpus in corpora {
            for inst in corpus {
                for w in &inst.words {
                    v.insert(w.clone());
                }
            }
        }
        v
    }

    fn insert(&mut self, token: String) -> usize {
        if let Some(&id) = self.index.get(&token) {
            return id;
        }
        let id = self.tokens.len();
        self.index.insert(token.clone(), id);
        self.tokens.push(token);
        id
    }

    /// Tokens in id order, specials included.
    pub fn from_id_list(tokens: Vec<String>) -> Option<Self> {
        if tokens.len() < 2 || tokens[PAD_ID] != PAD || tokens[UNK_ID] != UNK {
            return None;
        }
        let index: HashMap<String, usize> = tokens.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        if index.len() != tokens.len() {
            return None;
        }
        Some(Self { index, tokens })
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Number of ids, specials included.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// True when only the specials are present.
    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn is_special(id: usize) -> bool {
        id == PAD_ID || id == UNK_ID
    }

    /// Hex SHA-256 over the id-ordered token list.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn encode(&self, inst: &TextInstance) -> AspectInstance {
        AspectInstance {
            tokens: inst.words.iter().map(|w| self.id(w)).collect(),
            aspect_start: inst.aspect_start,
            aspect_end: inst.aspect_end,
            label: inst.label,
            raw_text: inst.raw_text.clone(),
        }
    }

    pub fn encode_all(&self, insts: &[TextInstance]) -> Vec<AspectInstance> {
        insts.iter().map(|i| self.encode(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_and_unknowns() {
        let v = Vocabulary::from_tokens(["food", "is", "food"]);
        assert_eq!(v.len(), 4);
        assert_eq!(v.id("food"), 2);
        assert_eq!(v.id("missing"), UNK_ID);
        assert_eq!(v.token(PAD_ID), Some(PAD));
        assert!(Vocabulary::default().is_empty());
    }

    #[test]
    fn id_list_roundtrip_and_digest() {
        let v = Vocabulary::from_tokens(["a", "b"]);
        let w = Vocabulary::from_id_list(v.tokens().to_vec()).unwrap();
        assert_eq!(v, w);
        assert_eq!(v.digest(), w.digest());
        assert_ne!(v.digest(), Vocabulary::from_tokens(["b", "a"]).digest());
        assert!(Vocabulary::from_id_list(vec!["x".into()]).is_none());
    }
}
