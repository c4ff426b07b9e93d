// SPDX-License-Identifier: MIT OR Apache-2.0

//! Pluggable tokenization.
//!
//! [`WordTokenizer`] splits text into maximal alphanumeric runs and single
//! punctuation characters. Pieces missing from the vocabulary fall back to
//! `<0xNN>` byte tokens when the vocabulary has them, otherwise to `<unk>`.
//! Each token's span absorbs the whitespace in front of it, so the spans of a
//! sequence tile the whole input.

use std::collections::HashMap;
use std::ops::Range;

use crate::error::{Error, Result};

pub const UNK_TOKEN: &str = "<unk>";

/// Token ids plus the byte span each token covers in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub token_ids: Vec<u32>,
    pub char_offsets: Vec<Range<usize>>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

pub trait Tokenizer: Send + Sync {
    fn encode(&self, text: &str) -> Result<TokenSequence>;

    /// Surface form of a single token, without surrounding whitespace.
    fn decode_token(&self, id: u32) -> String;

    fn vocab_size(&self) -> usize;

    /// Vocabulary id for an exact token string.
    fn token_id(&self, token: &str) -> Option<u32>;
}

/// Tokenize a subject-first prompt and locate the subject's token range.
///
/// The returned range is the shortest prefix of tokens whose spans cover
/// `subject_char_span`.
pub fn tokenize_with_subject(
    tokenizer: &dyn Tokenizer,
    text: &str,
    subject_char_span: Range<usize>,
) -> Result<(TokenSequence, Range<usize>)> {
    if text.is_empty() {
        return Err(Error::Tokenize("empty text".into()));
    }
    if subject_char_span.start != 0 {
        return Err(Error::Tokenize(format!(
            "subject span {subject_char_span:?} is not a prefix of the text"
        )));
    }
    if subject_char_span.is_empty() || subject_char_span.end > text.len() {
        return Err(Error::Tokenize(format!(
            "subject span {subject_char_span:?} is empty or outside the text"
        )));
    }
    let tokens = tokenizer.encode(text)?;
    let last = tokens
        .char_offsets
        .iter()
        .position(|r| r.end >= subject_char_span.end)
        .ok_or_else(|| Error::Tokenize("subject span not covered by tokens".into()))?;
    Ok((tokens, 0..last + 1))
}

/// Whitespace-with-punctuation splitter over a fixed vocabulary.
#[derive(Debug, Clone)]
pub struct WordTokenizer {
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    unk: Option<u32>,
    bytes: Option<Vec<u32>>,
}

impl WordTokenizer {
    pub fn new(vocab: Vec<String>) -> Self {
        let index: HashMap<String, u32> = vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        let unk = index.get(UNK_TOKEN).copied();
        let bytes = (0..=255u8)
            .map(|b| index.get(&byte_token(b)).copied())
            .collect::<Option<Vec<u32>>>();
        WordTokenizer {
            vocab,
            index,
            unk,
            bytes,
        }
    }

    fn push_piece(
        &self,
        text: &str,
        span_start: usize,
        piece: Range<usize>,
        out: &mut TokenSequence,
    ) -> Result<()> {
        let word = &text[piece.clone()];
        if let Some(&id) = self.index.get(word) {
            out.token_ids.push(id);
            out.char_offsets.push(span_start..piece.end);
            return Ok(());
        }
        if let Some(bytes) = &self.bytes {
            for (k, b) in word.bytes().enumerate() {
                let at = piece.start + k;
                let start = if k == 0 { span_start } else { at };
                out.token_ids.push(bytes[b as usize]);
                out.char_offsets.push(start..at + 1);
            }
            return Ok(());
        }
        match self.unk {
            Some(id) => {
                out.token_ids.push(id);
                out.char_offsets.push(span_start..piece.end);
                Ok(())
            }
            None => Err(Error::Tokenize(format!(
                "`{word}` is not in the vocabulary and no fallback token exists"
            ))),
        }
    }
}

fn byte_token(b: u8) -> String {
    format!("<0x{b:02X}>")
}

/// Split into (byte range) pieces: alphanumeric runs and single punctuation.
fn pieces(text: &str) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut run: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            run.get_or_insert(i);
            continue;
        }
        if let Some(s) = run.take() {
            out.push(s..i);
        }
        if !c.is_whitespace() {
            out.push(i..i + c.len_utf8());
        }
    }
    if let Some(s) = run {
        out.push(s..text.len());
    }
    out
}

impl Tokenizer for WordTokenizer {
    fn encode(&self, text: &str) -> Result<TokenSequence> {
        let mut out = TokenSequence {
            token_ids: Vec::new(),
            char_offsets: Vec::new(),
        };
        let mut cursor = 0;
        for piece in pieces(text) {
            let end = piece.end;
            self.push_piece(text, cursor, piece, &mut out)?;
            cursor = end;
        }
        match out.char_offsets.last_mut() {
            Some(last) => last.end = text.len(),
            None => return Err(Error::Tokenize("text contains no tokens".into())),
        }
        Ok(out)
    }

    fn decode_token(&self, id: u32) -> String {
        let Some(tok) = self.vocab.get(id as usize) else {
            return UNK_TOKEN.to_string();
        };
        if let Some(hex) = tok.strip_prefix("<0x").and_then(|t| t.strip_suffix('>')) {
            if let Ok(b) = u8::from_str_radix(hex, 16) {
                if b.is_ascii_graphic() {
                    return (b as char).to_string();
                }
            }
        }
        tok.trim().to_string()
    }

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn token_id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }
}
