//! Closed vocabulary, tokenization and prompt templates.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};

/// Reserved token standing in for the empty prompt.
pub const NULL_TOKEN: &str = "<null>";

const WORDS: &[&str] = &[
    NULL_TOKEN, "[V]", "[W]", ",",
    "a", "an", "photo", "of", "style", "and", "near", "in", "at", "with", "the",
    "person", "woman", "man", "child", "waving",
    "red", "blue", "green", "yellow", "purple", "orange", "white", "black", "pink", "brown",
    "tree", "mountain", "house", "sun", "moon", "cloud", "lake", "flower",
    "day", "night", "sunset",
    "pattern", "stripes", "checks", "dots", "fabric", "fashion", "plaid",
    "landscape", "portrait", "field", "sky", "scene", "picture", "painting", "art",
];

/// Template for identifier-bound reference images.
pub const STYLEREF_TEMPLATE: &str = "a photo of [V] style";
/// Template for the second identifier used for backgrounds.
pub const BACKGROUND_TEMPLATE: &str = "a photo of [W] style";
/// Template for auxiliary images.
pub const AUX_TEMPLATE: &str = "a photo of style";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Identifier {
    V,
    W,
}

impl Identifier {
    pub fn token(self) -> &'static str {
        match self {
            Identifier::V => "[V]",
            Identifier::W => "[W]",
        }
    }
}

/// The fixed word list. Token ids are indices into it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::standard()
    }
}

impl Vocabulary {
    pub fn standard() -> Self {
        Self { words: WORDS.iter().map(|w| w.to_string()).collect() }
    }

    pub fn from_words(words: Vec<String>) -> Self {
        Self { words }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.words.iter().position(|w| w == word)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn null_id(&self) -> usize {
        self.id(NULL_TOKEN).expect("vocabulary has a null token")
    }

    /// Splits `text` into canonical words: lowercase, commas split off,
    /// identifiers canonicalized to `[V]`/`[W]`.
    fn canonical_words(text: &str) -> Vec<String> {
        let spaced = text.replace(',', " , ");
        spaced
            .split_whitespace()
            .map(|w| {
                let lower = w.to_lowercase();
                match lower.as_str() {
                    "[v]" => "[V]".to_string(),
                    "[w]" => "[W]".to_string(),
                    _ => lower,
                }
            })
            .collect()
    }

    pub fn tokenize(&self, text: &str) -> Result<PromptSpec> {
        let words = Self::canonical_words(text);
        let mut tokens = Vec::with_capacity(words.len());
        let mut identifiers = Vec::new();
        for w in &words {
            if w == NULL_TOKEN {
                return Err(invalid!("`{}` is reserved and cannot appear in a prompt", NULL_TOKEN));
            }
            let id = self.id(w).ok_or_else(|| Error::Vocabulary { word: w.clone() })?;
            let ident = match w.as_str() {
                "[V]" => Some(Identifier::V),
                "[W]" => Some(Identifier::W),
                _ => None,
            };
            if let Some(ident) = ident {
                if identifiers.contains(&ident) {
                    return Err(invalid!("identifier {} appears more than once", w));
                }
                identifiers.push(ident);
            }
            tokens.push(id);
        }
        identifiers.sort();
        let text = self.detokenize(&tokens)?;
        Ok(PromptSpec { text, tokens, identifiers })
    }

    /// Joins words with single spaces, attaching commas to the preceding word.
    pub fn detokenize(&self, tokens: &[usize]) -> Result<String> {
        let mut out = String::new();
        for &t in tokens {
            let w = self.word(t).ok_or_else(|| invalid!("token id {} out of range", t))?;
            if !out.is_empty() && w != "," {
                out.push(' ');
            }
            out.push_str(w);
        }
        Ok(out)
    }
}

/// Tokenizes with the standard vocabulary.
pub fn tokenize(text: &str) -> Result<PromptSpec> {
    Vocabulary::standard().tokenize(text)
}

/// A tokenized prompt.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptSpec {
    text: String,
    tokens: Vec<usize>,
    identifiers: Vec<Identifier>,
}

impl PromptSpec {
    /// Normalized text; equals `detokenize(tokens)`.
    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn identifier_tokens(&self) -> &[Identifier] {
        &self.identifiers
    }

    pub fn is_null(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn has_identifier(&self) -> bool {
        !self.identifiers.is_empty()
    }

    /// Whether the bare `style` word is present.
    pub fn mentions_style(&self) -> bool {
        let vocab = Vocabulary::standard();
        let id = vocab.id("style");
        self.tokens.iter().any(|&t| Some(t) == id)
    }

    /// Position of the first occurrence of `word`.
    pub fn position_of(&self, word: &str) -> Option<usize> {
        let id = Vocabulary::standard().id(word)?;
        self.tokens.iter().position(|&t| t == id)
    }

    /// Token ids fed to the text encoder: the reserved null sequence for an
    /// empty prompt.
    pub fn encoder_tokens(&self) -> Vec<usize> {
        if self.tokens.is_empty() {
            alloc::vec![Vocabulary::standard().null_id()]
        } else {
            self.tokens.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn styleref_template() {
        let p = tokenize(STYLEREF_TEMPLATE).unwrap();
        assert_eq!(p.tokens().len(), 5);
        assert_eq!(p.identifier_tokens(), &[Identifier::V]);
        assert_eq!(p.text(), "a photo of [V] style");
    }

    #[test]
    fn empty_prompt_is_null_sequence() {
        let p = tokenize("").unwrap();
        assert!(p.tokens().is_empty());
        assert!(p.is_null());
        assert_eq!(p.encoder_tokens(), alloc::vec![Vocabulary::standard().null_id()]);
    }

    #[test]
    fn combined_identifiers() {
        let p = tokenize("a photo of [V] style, [W] style").unwrap();
        assert_eq!(p.identifier_tokens(), &[Identifier::V, Identifier::W]);
        assert_eq!(p.text(), "a photo of [V] style, [W] style");
    }

    #[test]
    fn normalizes_case_and_whitespace() {
        let p = tokenize("  A   Photo of [v]  STYLE ").unwrap();
        assert_eq!(p.text(), "a photo of [V] style");
    }

    #[test]
    fn unknown_word_is_named() {
        match tokenize("a photo of a dragon") {
            Err(Error::Vocabulary { word }) => assert_eq!(word, "dragon"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn repeated_identifier_rejected() {
        assert!(tokenize("[V] style [V]").is_err());
        assert!(tokenize("a <null>").is_err());
    }

    #[test]
    fn vocabulary_is_closed_and_unique() {
        let v = Vocabulary::standard();
        for (i, w) in v.words().iter().enumerate() {
            assert_eq!(v.id(w), Some(i));
        }
        assert!(v.len() >= 50 && v.len() <= 64);
    }

    proptest! {
        #[test]
        fn detokenize_roundtrip(ids in proptest::collection::vec(1usize..56, 0..12)) {
            let v = Vocabulary::standard();
            // Drop duplicate identifiers, which are not valid prompts.
            let mut seen = (false, false);
            let ids: Vec<usize> = ids.into_iter().filter(|&i| match i {
                1 => !core::mem::replace(&mut seen.0, true),
                2 => !core::mem::replace(&mut seen.1, true),
                _ => true,
            }).collect();
            let text = v.detokenize(&ids).unwrap();
            let p = v.tokenize(&text).unwrap();
            prop_assert_eq!(p.tokens(), &ids[..]);
            prop_assert_eq!(p.text(), text.as_str());
        }
    }
}
