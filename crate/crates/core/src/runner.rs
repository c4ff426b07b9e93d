// SPDX-License-Identifier: MIT OR Apache-2.0

//! Next-token prediction front ends used by the diagnostics and builders.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forward_with_capture, Tokenizer, WeightBundle, WordTokenizer};

/// One ranked next-token candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub token_text: String,
    pub token_id: u32,
    /// 1-based.
    pub rank: usize,
    pub probability: f64,
}

/// Anything that can rank next tokens for a prompt.
pub trait LanguageModel: Send + Sync {
    fn top_k(&self, prompt: &str, k: usize) -> Result<Vec<Prediction>>;
}

/// Rank `(id, text, probability)` candidates: probability descending, then id.
pub fn rank_predictions(mut cands: Vec<(u32, String, f64)>, k: usize) -> Vec<Prediction> {
    cands.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
    cands
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, (token_id, token_text, probability))| Prediction {
            token_text,
            token_id,
            rank: i + 1,
            probability,
        })
        .collect()
}

/// Runs the transformer engine through a tokenizer.
#[derive(Clone)]
pub struct TransformerRunner {
    pub weights: Arc<WeightBundle>,
    pub tokenizer: Arc<dyn Tokenizer>,
}

impl TransformerRunner {
    /// Pair a bundle with a word tokenizer over its own vocabulary.
    pub fn from_bundle(weights: WeightBundle) -> Self {
        let tokenizer = Arc::new(WordTokenizer::new(weights.vocab.clone()));
        TransformerRunner {
            weights: Arc::new(weights),
            tokenizer,
        }
    }
}

impl LanguageModel for TransformerRunner {
    fn top_k(&self, prompt: &str, k: usize) -> Result<Vec<Prediction>> {
        let seq = self.tokenizer.encode(prompt)?;
        let trace = forward_with_capture(&self.weights, &seq)?;
        let probs = trace.next_token_probs();
        let cands = probs
            .iter()
            .enumerate()
            .map(|(i, &p)| (i as u32, self.tokenizer.decode_token(i as u32), p))
            .collect();
        Ok(rank_predictions(cands, k))
    }
}

/// How a [`ScriptedModel`] rule matches a prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Match {
    Exact(String),
    Prefix(String),
    Contains(String),
}

impl Match {
    fn hits(&self, prompt: &str) -> bool {
        match self {
            Match::Exact(s) => prompt == s,
            Match::Prefix(s) => prompt.starts_with(s.as_str()),
            Match::Contains(s) => prompt.contains(s.as_str()),
        }
    }
}

/// Deterministic rule-table model. The first matching rule places its tokens
/// at the top in order; remaining slots are filled from a filler list rotated
/// by a hash of the prompt, giving prompt-dependent but reproducible tails.
#[derive(Debug, Clone)]
pub struct ScriptedModel {
    rules: Vec<(Match, Vec<String>)>,
    filler: Vec<String>,
}

impl ScriptedModel {
    pub fn new(filler: Vec<String>) -> Self {
        ScriptedModel {
            rules: Vec::new(),
            filler,
        }
    }

    pub fn rule(mut self, m: Match, tokens: &[&str]) -> Self {
        self.rules.push((m, tokens.iter().map(|s| s.to_string()).collect()));
        self
    }

    pub fn push_rule(&mut self, m: Match, tokens: Vec<String>) {
        self.rules.push((m, tokens));
    }
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl LanguageModel for ScriptedModel {
    fn top_k(&self, prompt: &str, k: usize) -> Result<Vec<Prediction>> {
        let mut tokens: Vec<String> = self
            .rules
            .iter()
            .find(|(m, _)| m.hits(prompt))
            .map(|(_, t)| t.clone())
            .unwrap_or_default();
        if !self.filler.is_empty() {
            let start = (fnv1a(prompt) % self.filler.len() as u64) as usize;
            for i in 0..self.filler.len() {
                let f = &self.filler[(start + i) % self.filler.len()];
                if !tokens.contains(f) {
                    tokens.push(f.clone());
                }
            }
        }
        if tokens.is_empty() {
            return Err(Error::InvalidInput("scripted model has no tokens".into()));
        }
        // Geometric probabilities, normalized over the listed tokens.
        let weights: Vec<f64> = (0..tokens.len()).map(|i| 0.5f64.powi(i as i32 + 1)).collect();
        let total: f64 = weights.iter().sum();
        Ok(tokens
            .into_iter()
            .zip(weights)
            .take(k)
            .enumerate()
            .map(|(i, (t, w))| Prediction {
                token_text: t,
                token_id: i as u32,
                rank: i + 1,
                probability: w / total,
            })
            .collect())
    }
}
