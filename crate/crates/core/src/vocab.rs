//! Tokens, sentences and the shared vocabulary.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const BOS: TokenId = 0;
pub const EOS: TokenId = 1;
pub const UNK: TokenId = 2;

const RESERVED: [&str; 3] = ["<s>", "</s>", "<unk>"];

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub id: TokenId,
    pub surface: String,
}

/// An ordered list of tokens. Never holds BOS or EOS; the decoder adds those.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn new(tokens: Vec<Token>) -> Self {
        Sentence { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn ids(&self) -> Vec<TokenId> {
        self.tokens.iter().map(|t| t.id).collect()
    }

    /// Space-joined surface forms.
    pub fn text(&self) -> String {
        let words: Vec<&str> = self.tokens.iter().map(|t| t.surface.as_str()).collect();
        words.join(" ")
    }

    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.surface.as_str())
    }
}

impl fmt::Display for Sentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text())
    }
}

/// Result of tokenizing free text: the sentence plus any words that fell back to UNK.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tokenized {
    pub sentence: Sentence,
    pub unknown: Vec<String>,
}

/// Bidirectional surface/id map. Ids 0..3 are BOS, EOS and UNK.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    by_surface: HashMap<String, TokenId>,
    surfaces: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let surfaces: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let by_surface = surfaces
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as TokenId))
            .collect();
        Vocabulary {
            by_surface,
            surfaces,
        }
    }

    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = Vocabulary::new();
        for w in words {
            vocab.insert(w.as_ref());
        }
        vocab
    }

    /// Reads a vocabulary file: one surface per line, ids assigned after the reserved entries.
    /// Blank lines are skipped; repeated surfaces keep their first id.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(Error::at(path))?;
        Ok(Vocabulary::from_words(
            text.lines().map(str::trim).filter(|l| !l.is_empty()),
        ))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for s in &self.surfaces[RESERVED.len()..] {
            out.push_str(s);
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    /// Returns the id for `surface`, adding it if absent.
    pub fn insert(&mut self, surface: &str) -> TokenId {
        if let Some(&id) = self.by_surface.get(surface) {
            return id;
        }
        let id = self.surfaces.len() as TokenId;
        self.surfaces.push(surface.to_string());
        self.by_surface.insert(surface.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, surface: &str) -> Option<TokenId> {
        self.by_surface.get(surface).copied()
    }

    pub fn surface(&self, id: TokenId) -> Option<&str> {
        self.surfaces.get(id as usize).map(String::as_str)
    }

    pub fn token(&self, id: TokenId) -> Token {
        let surface = self.surface(id).unwrap_or(RESERVED[UNK as usize]);
        Token {
            id,
            surface: surface.to_string(),
        }
    }

    /// Whitespace tokenization; unknown words map to UNK and are reported.
    pub fn tokenize(&self, text: &str) -> Tokenized {
        let mut unknown = Vec::new();
        let tokens = text
            .split_whitespace()
            .map(|w| match self.id(w) {
                Some(id) if id != BOS && id != EOS => Token {
                    id,
                    surface: w.to_string(),
                },
                _ => {
                    unknown.push(w.to_string());
                    // Keep the original word so metrics still see it.
                    Token {
                        id: UNK,
                        surface: w.to_string(),
                    }
                }
            })
            .collect();
        Tokenized {
            sentence: Sentence::new(tokens),
            unknown,
        }
    }

    /// Tokenizes and rejects empty input.
    pub fn sentence(&self, text: &str) -> Result<Sentence> {
        let s = self.tokenize(text).sentence;
        if s.is_empty() {
            return Err(Error::input("empty sentence"));
        }
        Ok(s)
    }

    pub fn sentence_from_ids(&self, ids: &[TokenId]) -> Sentence {
        Sentence::new(ids.iter().map(|&id| self.token(id)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids() {
        let v = Vocabulary::new();
        assert_eq!(v.len(), 3);
        assert_eq!(v.id("<s>"), Some(BOS));
        assert_eq!(v.id("</s>"), Some(EOS));
        assert_eq!(v.id("<unk>"), Some(UNK));
    }

    #[test]
    fn ids_follow_line_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        std::fs::write(&path, "hund\ndog\n\ncat\ndog\n").unwrap();
        let v = Vocabulary::load(&path).unwrap();
        assert_eq!(v.id("hund"), Some(3));
        assert_eq!(v.id("dog"), Some(4));
        assert_eq!(v.id("cat"), Some(5));
        assert_eq!(v.len(), 6);

        let out = dir.path().join("out.txt");
        v.save(&out).unwrap();
        assert_eq!(Vocabulary::load(&out).unwrap(), v);
    }

    #[test]
    fn oov_maps_to_unk() {
        let v = Vocabulary::from_words(["a", "b"]);
        let t = v.tokenize("a zzz b </s>");
        assert_eq!(t.sentence.ids(), vec![3, UNK, 4, UNK]);
        assert_eq!(t.unknown, vec!["zzz".to_string(), "</s>".to_string()]);
        assert!(v.sentence("   ").is_err());
    }
}
