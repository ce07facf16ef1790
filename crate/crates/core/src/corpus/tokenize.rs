//! Word-level tokenizer with recoverable byte offsets.
//!
//! Text is split on whitespace; every punctuation or symbol character is its
//! own token. Surfaces are lowercased and NFC-normalized, while the offsets
//! always point back into the original (unnormalized) text.

use serde::{Deserialize, Serialize};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    /// Byte offset of the first character in the source text.
    pub char_start: usize,
    /// Byte offset one past the last character (exclusive).
    pub char_end: usize,
}

impl Token {
    pub fn len(&self) -> usize {
        self.char_end - self.char_start
    }

    pub fn is_empty(&self) -> bool {
        self.char_end == self.char_start
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Class {
    Space,
    Word,
    Punct,
}

fn classify(c: char) -> Class {
    if c.is_whitespace() {
        Class::Space
    } else if c.is_alphanumeric() || is_combining_mark(c) {
        Class::Word
    } else {
        Class::Punct
    }
}

/// Lowercase + NFC, the normalization applied to every token surface.
pub fn normalize_surface(raw: &str) -> String {
    raw.to_lowercase().nfc().collect()
}

pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut word_start: Option<usize> = None;

    let flush = |tokens: &mut Vec<Token>, start: usize, end: usize| {
        tokens.push(Token {
            surface: normalize_surface(&text[start..end]),
            char_start: start,
            char_end: end,
        });
    };

    for (idx, c) in text.char_indices() {
        match classify(c) {
            Class::Word => {
                if word_start.is_none() {
                    word_start = Some(idx);
                }
            }
            Class::Space => {
                if let Some(start) = word_start.take() {
                    flush(&mut tokens, start, idx);
                }
            }
            Class::Punct => {
                if let Some(start) = word_start.take() {
                    flush(&mut tokens, start, idx);
                }
                flush(&mut tokens, idx, idx + c.len_utf8());
            }
        }
    }
    if let Some(start) = word_start {
        flush(&mut tokens, start, text.len());
    }
    tokens
}

/// Tokenize and keep only the surfaces.
pub fn surfaces(text: &str) -> Vec<String> {
    tokenize(text).into_iter().map(|t| t.surface).collect()
}
