//! Whitespace and punctuation splitting tokenizer.
//!
//! Offsets are counted in Unicode scalar values (`char`s), not bytes, so they
//! match what most other languages report for string indices. Maximal runs of
//! alphanumeric characters form one token, every other non-whitespace
//! character is a token of its own, and whitespace only separates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A token with its `[char_start, char_end)` offsets into the source text.
///
/// Special marker tokens (`[CLS]`, `[task]`, ...) do not come from any source
/// text and carry the offsets `(0, 0)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub char_start: usize,
    pub char_end: usize,
    pub is_special: bool,
}

impl Token {
    pub fn special(text: &str) -> Self {
        Token {
            text: text.to_string(),
            char_start: 0,
            char_end: 0,
            is_special: true,
        }
    }

    fn content(text: String, char_start: usize, char_end: usize) -> Self {
        Token {
            text,
            char_start,
            char_end,
            is_special: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<Token>,
    pub source_text: String,
}

/// Raised when a character span does not start and end on token boundaries.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AlignmentError {
    #[error("character span {start}..{end} is empty or inverted")]
    EmptySpan { start: usize, end: usize },
    #[error("span start {0} does not fall on a token start")]
    StartMisaligned(usize),
    #[error("span end {0} does not fall on a token end")]
    EndMisaligned(usize),
    #[error("token span {start}..={end} is outside the {len} available tokens")]
    TokenOutOfRange { start: usize, end: usize, len: usize },
}

pub fn tokenize(text: &str) -> TokenSequence {
    let mut tokens = Vec::new();
    // (char index, byte index) where the current alphanumeric run began.
    let mut run: Option<(usize, usize)> = None;
    let mut char_count = 0;

    for (ci, (bi, ch)) in text.char_indices().enumerate() {
        char_count = ci + 1;
        if ch.is_alphanumeric() {
            run.get_or_insert((ci, bi));
            continue;
        }
        if let Some((cs, bs)) = run.take() {
            tokens.push(Token::content(text[bs..bi].to_string(), cs, ci));
        }
        if !ch.is_whitespace() {
            tokens.push(Token::content(ch.to_string(), ci, ci + 1));
        }
    }
    if let Some((cs, bs)) = run {
        tokens.push(Token::content(text[bs..].to_string(), cs, char_count));
    }

    TokenSequence {
        tokens,
        source_text: text.to_string(),
    }
}

/// The canonical spelling of a phrase: its tokens joined by single spaces.
pub fn canonical_form(text: &str) -> String {
    let seq = tokenize(text);
    let mut out = String::with_capacity(text.len());
    for (i, tok) in seq.tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&tok.text);
    }
    out
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.text.as_str())
    }

    /// Maps an aligned character range to the inclusive token range covering it.
    pub fn token_span_of_char_span(
        &self,
        char_start: usize,
        char_end: usize,
    ) -> Result<(usize, usize), AlignmentError> {
        if char_start >= char_end {
            return Err(AlignmentError::EmptySpan {
                start: char_start,
                end: char_end,
            });
        }
        let content: Vec<(usize, &Token)> = self
            .tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| !t.is_special)
            .collect();
        let start = content
            .binary_search_by_key(&char_start, |(_, t)| t.char_start)
            .map_err(|_| AlignmentError::StartMisaligned(char_start))?;
        let end = content
            .binary_search_by_key(&char_end, |(_, t)| t.char_end)
            .map_err(|_| AlignmentError::EndMisaligned(char_end))?;
        Ok((content[start].0, content[end].0))
    }

    /// Inverse of [`token_span_of_char_span`](Self::token_span_of_char_span).
    pub fn char_span_of_token_span(
        &self,
        tok_start: usize,
        tok_end: usize,
    ) -> Result<(usize, usize), AlignmentError> {
        let out_of_range = || AlignmentError::TokenOutOfRange {
            start: tok_start,
            end: tok_end,
            len: self.tokens.len(),
        };
        if tok_start > tok_end || tok_end >= self.tokens.len() {
            return Err(out_of_range());
        }
        let (first, last) = (&self.tokens[tok_start], &self.tokens[tok_end]);
        if first.is_special || last.is_special {
            return Err(out_of_range());
        }
        Ok((first.char_start, last.char_end))
    }

    /// The source text covered by an inclusive token range.
    pub fn text_of_tokens(&self, tok_start: usize, tok_end: usize) -> Result<&str, AlignmentError> {
        let (cs, ce) = self.char_span_of_token_span(tok_start, tok_end)?;
        Ok(char_slice(&self.source_text, cs, ce))
    }
}

/// Slices `text` by char offsets, clamping to the end of the string.
pub fn char_slice(text: &str, char_start: usize, char_end: usize) -> &str {
    let byte_at = |c: usize| {
        text.char_indices()
            .nth(c)
            .map(|(b, _)| b)
            .unwrap_or(text.len())
    };
    let (bs, be) = (byte_at(char_start), byte_at(char_end));
    &text[bs..be.max(bs)]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn offsets(seq: &TokenSequence) -> Vec<(usize, usize)> {
        seq.tokens.iter().map(|t| (t.char_start, t.char_end)).collect()
    }

    #[test]
    fn splits_words_and_punctuation() {
        let seq = tokenize("john works.");
        assert_eq!(seq.texts().collect::<Vec<_>>(), ["john", "works", "."]);
        assert_eq!(offsets(&seq), [(0, 4), (5, 10), (10, 11)]);
    }

    #[test]
    fn empty_text_has_no_tokens() {
        assert!(tokenize("").is_empty());
        assert!(tokenize(" \t\n").is_empty());
    }

    #[test]
    fn offsets_count_chars_not_bytes() {
        let seq = tokenize("héllo, wörld");
        assert_eq!(seq.texts().collect::<Vec<_>>(), ["héllo", ",", "wörld"]);
        assert_eq!(offsets(&seq), [(0, 5), (5, 6), (7, 12)]);
        assert_eq!(seq.text_of_tokens(2, 2).unwrap(), "wörld");
    }

    #[test]
    fn unicode_whitespace_separates() {
        let seq = tokenize("a\u{3000}b\u{a0}c");
        assert_eq!(seq.texts().collect::<Vec<_>>(), ["a", "b", "c"]);
    }

    #[test]
    fn aligned_spans_map_to_tokens() {
        let seq = tokenize("john works");
        assert_eq!(seq.token_span_of_char_span(5, 10), Ok((1, 1)));
        assert_eq!(seq.token_span_of_char_span(0, 10), Ok((0, 1)));
        assert_eq!(seq.char_span_of_token_span(0, 1), Ok((0, 10)));
    }

    #[test]
    fn misaligned_spans_name_the_boundary() {
        let seq = tokenize("john works");
        assert_eq!(
            seq.token_span_of_char_span(1, 3),
            Err(AlignmentError::StartMisaligned(1))
        );
        assert_eq!(
            seq.token_span_of_char_span(0, 3),
            Err(AlignmentError::EndMisaligned(3))
        );
        assert!(matches!(
            seq.token_span_of_char_span(4, 4),
            Err(AlignmentError::EmptySpan { .. })
        ));
        assert!(seq.char_span_of_token_span(1, 2).is_err());
    }

    #[test]
    fn canonical_form_collapses_spacing() {
        assert_eq!(canonical_form("  enterprise   establishing "), "enterprise establishing");
        assert_eq!(canonical_form("e-mail"), "e - mail");
    }
}
