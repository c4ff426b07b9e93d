// SPDX-License-Identifier: MIT OR Apache-2.0

//! Encyclopedia sentences for the generic language-modeling split.

use std::ops::Range;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const MIN_WORDS: usize = 5;
pub const MAX_WORDS: usize = 10;
pub const MAX_CAPITALIZED: usize = 3;

/// One page: its title and sentences in page order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub title: String,
    pub sentences: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSentence {
    pub page_title: String,
    /// Capped sentence without its final word.
    pub text: String,
    pub next_token_gold: String,
    /// Leading words taken from the title.
    pub subject_char_span: Range<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rejection {
    NotTitleStart,
    TooShort,
    TooManyCapitalized,
    EntityContinuation,
    NoContext,
}

impl Rejection {
    pub fn as_str(self) -> &'static str {
        match self {
            Rejection::NotTitleStart => "not_title_start",
            Rejection::TooShort => "too_short",
            Rejection::TooManyCapitalized => "too_many_capitalized",
            Rejection::EntityContinuation => "entity_continuation",
            Rejection::NoContext => "no_context",
        }
    }
}

/// Title without a trailing parenthetical: "John Doyle (Irish artist)" -> "John Doyle".
pub fn bare_title(title: &str) -> &str {
    match title.find(" (") {
        Some(i) if title.ends_with(')') => &title[..i],
        _ => title.trim(),
    }
}

fn core_word(w: &str) -> &str {
    w.trim_matches(|c: char| !c.is_alphanumeric())
}

fn words_with_spans(text: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                out.push((s, &text[s..i]));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, &text[s..]));
    }
    out
}

/// Apply the selection rules to one sentence.
pub fn select_sentence(title: &str, sentence: &str) -> std::result::Result<CorpusSentence, Rejection> {
    let title_words: Vec<&str> = bare_title(title).split_whitespace().map(core_word).collect();
    let words = words_with_spans(sentence.trim());
    let sentence = sentence.trim();
    if words.len() < MIN_WORDS {
        return Err(Rejection::TooShort);
    }
    let mut subject_words = 0;
    for (_, w) in &words {
        let c = core_word(w);
        if c.is_empty() || !title_words.contains(&c) {
            break;
        }
        subject_words += 1;
        if c.len() != w.len() {
            break;
        }
    }
    if subject_words == 0 {
        return Err(Rejection::NotTitleStart);
    }
    let capped = &words[..words.len().min(MAX_WORDS)];
    let capitalized = capped
        .iter()
        .filter(|(_, w)| w.chars().next().is_some_and(char::is_uppercase))
        .count();
    if capitalized > MAX_CAPITALIZED {
        return Err(Rejection::TooManyCapitalized);
    }
    let (last_at, last) = capped[capped.len() - 1];
    if last.chars().next().is_some_and(|c| c.is_uppercase() || c.is_ascii_digit()) {
        return Err(Rejection::EntityContinuation);
    }
    let gold = core_word(last);
    if gold.is_empty() || subject_words >= capped.len() - 1 {
        return Err(Rejection::NoContext);
    }
    let text = sentence[..last_at].trim_end().to_string();
    let (subj_at, subj_word) = words[subject_words - 1];
    let subj_core = core_word(subj_word);
    let subj_end = subj_at + subj_word.find(subj_core).unwrap_or(0) + subj_core.len();
    Ok(CorpusSentence {
        page_title: title.to_string(),
        text,
        next_token_gold: gold.to_string(),
        subject_char_span: 0..subj_end,
    })
}

/// Split running text into sentences at `.`, `!` or `?` followed by whitespace.
pub fn split_sentences(text: &str) -> Vec<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"[.!?]\s+").expect("static regex"));
    let mut out = Vec::new();
    let mut last = 0;
    for m in re.find_iter(text) {
        let s = text[last..m.start() + 1].trim();
        if !s.is_empty() {
            out.push(s.to_string());
        }
        last = m.end();
    }
    let tail = text[last..].trim();
    if !tail.is_empty() {
        out.push(tail.to_string());
    }
    out
}

#[derive(Deserialize)]
struct RawPage {
    title: String,
    text: String,
}

/// Pages as JSON lines with `title` and `text` fields, split into sentences.
pub fn import_pages_jsonl(input: &str) -> Result<Vec<CorpusEntry>> {
    let mut out = Vec::new();
    for line in input.lines().filter(|l| !l.trim().is_empty()) {
        let p: RawPage = serde_json::from_str(line)?;
        let sentences = p
            .text
            .lines()
            .flat_map(split_sentences)
            .collect();
        out.push(CorpusEntry {
            title: p.title,
            sentences,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOYLE: &str = "John Doyle (Irish artist)";

    #[test]
    fn title_prefixed_examples() {
        assert_eq!(select_sentence(DOYLE, "Early life and family"), Err(Rejection::TooShort));
        assert_eq!(
            select_sentence(DOYLE, "Doyle won a gold medal in 1805."),
            Err(Rejection::EntityContinuation)
        );
        let s = select_sentence(
            DOYLE,
            "Doyle continued to exhibit miniatures until 1835, but by then he was experiencing greater success.",
        )
        .unwrap();
        assert_eq!(s.text, "Doyle continued to exhibit miniatures until 1835, but by");
        assert_eq!(s.next_token_gold, "then");
        assert_eq!(&s.text[s.subject_char_span.clone()], "Doyle");
    }

    #[test]
    fn capitalized_and_title_rules() {
        assert_eq!(
            select_sentence("Nara", "Nara Saw The Big Red Dog again"),
            Err(Rejection::TooManyCapitalized)
        );
        assert_eq!(select_sentence(DOYLE, "He later moved to the city."), Err(Rejection::NotTitleStart));
        let s = select_sentence("Nara (singer)", "Nara also enjoyed success in singles.").unwrap();
        assert_eq!((s.text.as_str(), s.next_token_gold.as_str()), ("Nara also enjoyed success in", "singles"));
        let s = select_sentence("John Doyle", "John Doyle, a painter, lived here.").unwrap();
        assert_eq!(&s.text[s.subject_char_span.clone()], "John Doyle");
    }

    #[test]
    fn twelve_words_are_capped() {
        let s = select_sentence("Benjamin", "Benjamin later joined a number of other clubs in the north west").unwrap();
        assert_eq!(s.text.split_whitespace().count(), 9);
        assert_eq!(s.next_token_gold, "the");
    }

    #[test]
    fn sentence_splitting() {
        assert_eq!(split_sentences("A b. C d!  E"), vec!["A b.", "C d!", "E"]);
        let pages = import_pages_jsonl(r#"{"title":"T","text":"One two. Three\nFour."}"#).unwrap();
        assert_eq!(pages[0].sentences, vec!["One two.", "Three", "Four."]);
    }
}
