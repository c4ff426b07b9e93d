// SPDX-License-Identifier: MIT OR Apache-2.0

//! Audits of externally supplied (query, prediction) datasets: bias scans,
//! popularity buckets, total-effect flags, negated queries and the rank
//! correlation between normalized TE and prompt bias.

use std::collections::BTreeMap;
use std::ops::Range;
use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{lexical_overlap, name_bias_applies, substitutions, BiasKind, BiasProber};
use crate::error::{Error, Result};
use crate::model::{Tokenizer, WeightBundle};
use crate::runner::LanguageModel;
use crate::scenario::ScenarioSample;
use crate::tracing::{effect_probabilities, TraceTarget};

/// Normalized TE below which the subject perturbation counts as weak.
pub const LOW_TE_THRESHOLD: f64 = 0.4;

/// Noised runs averaged per row.
pub const AUDIT_NOISE_RUNS: usize = 10;

/// One audited row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub prompt: String,
    pub subject: String,
    pub subject_char_span: Option<Range<usize>>,
    pub prediction: String,
    pub relation_id: Option<String>,
    pub popularity: Option<u64>,
    pub traced_token: Option<u32>,
}

impl From<&ScenarioSample> for AuditRow {
    fn from(s: &ScenarioSample) -> Self {
        AuditRow {
            prompt: s.prompt.clone(),
            subject: s.subject.clone(),
            subject_char_span: Some(s.subject_char_span.clone()),
            prediction: s.prediction.clone(),
            relation_id: s.relation_id.clone(),
            popularity: s.popularity,
            traced_token: Some(s.traced_token),
        }
    }
}

#[derive(Deserialize)]
struct CfTarget {
    str: String,
}

#[derive(Deserialize)]
struct CfRewrite {
    prompt: String,
    subject: String,
    #[serde(default)]
    relation_id: Option<String>,
    target_true: CfTarget,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CfRecord {
    Nested {
        requested_rewrite: CfRewrite,
        #[serde(default)]
        popularity: Option<u64>,
    },
    Flat {
        prompt: String,
        subject: String,
        #[serde(alias = "gold")]
        attribute: String,
        #[serde(default)]
        relation_id: Option<String>,
        #[serde(default)]
        popularity: Option<u64>,
    },
}

fn fill_subject(prompt: &str, subject: &str) -> (String, Option<Range<usize>>) {
    if let Some(at) = prompt.find("{}") {
        let filled = prompt.replacen("{}", subject, 1);
        return (filled, Some(at..at + subject.len()));
    }
    let span = prompt.find(subject).map(|at| at..at + subject.len());
    (prompt.to_string(), span)
}

/// Rows from a JSON array of CounterFact-style records. Both the nested
/// `requested_rewrite` shape (prompt with a `{}` slot) and a flat
/// `prompt`/`subject`/`attribute` shape are accepted. The true attribute is
/// the audited prediction.
pub fn import_counterfact(text: &str) -> Result<Vec<AuditRow>> {
    let records: Vec<CfRecord> = serde_json::from_str(text)?;
    Ok(records
        .into_iter()
        .map(|r| {
            let (prompt, subject, attribute, relation_id, popularity) = match r {
                CfRecord::Nested { requested_rewrite: w, popularity } => {
                    (w.prompt, w.subject, w.target_true.str, w.relation_id, popularity)
                }
                CfRecord::Flat { prompt, subject, attribute, relation_id, popularity } => {
                    (prompt, subject, attribute, relation_id, popularity)
                }
            };
            let (prompt, span) = fill_subject(&prompt, &subject);
            AuditRow {
                prompt,
                subject,
                subject_char_span: span,
                prediction: attribute.trim().to_string(),
                relation_id,
                popularity,
                traced_token: None,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasFlag {
    pub row: usize,
    pub kinds: Vec<BiasKind>,
    pub evidence: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BiasCounts {
    pub per_kind: BTreeMap<BiasKind, usize>,
    /// Keyed by the `+`-joined kinds of each flagged row, e.g. `name+prompt`.
    pub per_combination: BTreeMap<String, usize>,
    pub flagged: Vec<BiasFlag>,
    /// Per-row prompt-bias verdicts; `None` where it could not be probed.
    pub prompt_bias: Vec<Option<bool>>,
    pub skipped_missing_span: usize,
    /// Rows whose relation has no generic subject stand-ins.
    pub prompt_bias_unavailable: usize,
}

/// Run every applicable bias filter on each row.
pub fn audit_bias(rows: &[AuditRow], model: &dyn LanguageModel, topk: usize) -> Result<BiasCounts> {
    let prober = BiasProber::new(model, topk);
    let per_row: Vec<Result<Option<(Vec<BiasKind>, Vec<String>, Option<bool>)>>> = rows
        .par_iter()
        .map(|row| {
            let Some(span) = row.subject_char_span.clone().filter(|s| s.end <= row.prompt.len() && !s.is_empty()) else {
                return Ok(None);
            };
            let mut kinds = Vec::new();
            let mut evidence = Vec::new();
            if lexical_overlap(&row.subject, &row.prediction) {
                kinds.push(BiasKind::Lexical);
                evidence.push(format!("lexical: \"{}\" ~ \"{}\"", row.prediction, row.subject));
            }
            let rel = row.relation_id.as_deref().unwrap_or("");
            if name_bias_applies(rel) {
                if let Some(e) = prober.name_bias(&row.subject, &row.prediction)? {
                    kinds.push(BiasKind::Name);
                    evidence.push(e);
                }
            }
            let prompt_flag = if substitutions(rel).is_ok() {
                let hit = prober.prompt_bias(rel, &row.prompt, span, &row.prediction)?;
                if let Some(e) = &hit {
                    kinds.push(BiasKind::Prompt);
                    evidence.push(e.clone());
                }
                Some(hit.is_some())
            } else {
                None
            };
            Ok(Some((kinds, evidence, prompt_flag)))
        })
        .collect();
    let mut out = BiasCounts::default();
    for (i, r) in per_row.into_iter().enumerate() {
        let Some((kinds, evidence, prompt_flag)) = r? else {
            out.skipped_missing_span += 1;
            out.prompt_bias.push(None);
            continue;
        };
        if prompt_flag.is_none() {
            out.prompt_bias_unavailable += 1;
        }
        out.prompt_bias.push(prompt_flag);
        if kinds.is_empty() {
            continue;
        }
        for k in &kinds {
            *out.per_kind.entry(*k).or_insert(0) += 1;
        }
        let key = kinds.iter().map(|k| k.as_str()).collect::<Vec<_>>().join("+");
        *out.per_combination.entry(key).or_insert(0) += 1;
        out.flagged.push(BiasFlag { row: i, kinds, evidence });
    }
    Ok(out)
}

/// Popularity buckets. The first bucket includes zero views.
pub const POPULARITY_BUCKETS: [(&str, u64, u64); 4] = [
    ("[0,100]", 0, 100),
    ("(100,1000]", 101, 1000),
    ("(1000,10000]", 1001, 10000),
    ("(10000,inf)", 10001, u64::MAX),
];

/// Counts per bucket over rows that have a popularity record.
pub fn popularity_histogram(rows: &[AuditRow]) -> BTreeMap<String, usize> {
    let mut out: BTreeMap<String, usize> = POPULARITY_BUCKETS.iter().map(|(k, _, _)| (k.to_string(), 0)).collect();
    for v in rows.iter().filter_map(|r| r.popularity) {
        let (label, _, _) = POPULARITY_BUCKETS
            .iter()
            .find(|(_, lo, hi)| (*lo..=*hi).contains(&v))
            .expect("buckets cover u64");
        *out.get_mut(*label).expect("bucket present") += 1;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeClass {
    Negative,
    Low,
    Unflagged,
    ZeroClean,
}

/// Sign rule first, then the strict low-TE threshold.
pub fn classify_te(p_clean: f64, p_noised: f64) -> TeClass {
    if p_clean == 0.0 {
        return TeClass::ZeroClean;
    }
    let te = p_clean - p_noised;
    if te < 0.0 {
        TeClass::Negative
    } else if te / p_clean < LOW_TE_THRESHOLD {
        TeClass::Low
    } else {
        TeClass::Unflagged
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeFlag {
    pub row: usize,
    pub p_clean: f64,
    pub p_noised: f64,
    pub te: f64,
    /// `None` when `p_clean` is 0.
    pub te_norm: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TeAudit {
    pub negative: Vec<TeFlag>,
    pub low: Vec<TeFlag>,
    pub zero_clean: Vec<TeFlag>,
    /// Normalized TE per row, `None` where it was not measured.
    pub te_norm: Vec<Option<f64>>,
    pub skipped: Vec<(usize, String)>,
}

/// Seed of a row's noised runs.
pub fn row_seed(base_seed: u64, row: usize) -> u64 {
    base_seed ^ (row as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Token positions whose character spans overlap `span`.
pub fn token_range_for(offsets: &[Range<usize>], span: &Range<usize>) -> Option<Range<usize>> {
    let hits: Vec<usize> = offsets
        .iter()
        .enumerate()
        .filter(|(_, r)| r.start < span.end && span.start < r.end)
        .map(|(i, _)| i)
        .collect();
    Some(*hits.first()?..*hits.last()? + 1)
}

fn row_target(
    weights: &WeightBundle,
    tokenizer: &dyn Tokenizer,
    row: &AuditRow,
    sigma: f64,
    seed: u64,
) -> std::result::Result<TraceTarget, String> {
    let span = row.subject_char_span.clone().ok_or("missing subject span")?;
    let tokens = tokenizer.encode(&row.prompt).map_err(|e| e.to_string())?;
    let subject_span = token_range_for(&tokens.char_offsets, &span).ok_or("subject not covered by tokens")?;
    let traced_token = match row.traced_token {
        Some(t) => t,
        None => {
            let first = row.prediction.split_whitespace().next().unwrap_or("");
            tokenizer
                .token_id(first)
                .ok_or_else(|| format!("prediction `{}` is not a vocabulary token", row.prediction))?
        }
    };
    if traced_token as usize >= weights.config.vocab_size  {
        return Err(format!("traced token {traced_token} outside the vocabulary"));
    }
    Ok(TraceTarget {
        tokens,
        subject_span,
        traced_token,
        n_noise_runs: AUDIT_NOISE_RUNS,
        noise_sigma: sigma,
        base_seed: seed,
    })
}

/// Flag negative and weak total effects, averaging [`AUDIT_NOISE_RUNS`]
/// seeded noised runs per row.
pub fn audit_total_effect(
    rows: &[AuditRow],
    weights: &WeightBundle,
    tokenizer: &dyn Tokenizer,
    noise_sigma: f64,
    base_seed: u64,
) -> Result<TeAudit> {
    let per_row: Vec<Result<std::result::Result<(f64, f64), String>>> = rows
        .par_iter()
        .enumerate()
        .map(|(i, row)| match row_target(weights, tokenizer, row, noise_sigma, row_seed(base_seed, i)) {
            Err(reason) => Ok(Err(reason)),
            Ok(target) => match effect_probabilities(weights, &target) {
                Ok(p) => Ok(Ok(p)),
                Err(Error::SequenceTooLong { len, max }) => Ok(Err(format!("sequence of {len} tokens exceeds {max}"))),
                Err(e) => Err(e),
            },
        })
        .collect();
    let mut out = TeAudit::default();
    for (i, r) in per_row.into_iter().enumerate() {
        let (p_clean, p_noised) = match r? {
            Ok(p) => p,
            Err(reason) => {
                out.skipped.push((i, reason));
                out.te_norm.push(None);
                continue;
            }
        };
        let te = p_clean - p_noised;
        let te_norm = (p_clean != 0.0).then(|| te / p_clean);
        out.te_norm.push(te_norm);
        let flag = TeFlag { row: i, p_clean, p_noised, te, te_norm };
        match classify_te(p_clean, p_noised) {
            TeClass::Negative => out.negative.push(flag),
            TeClass::Low => out.low.push(flag),
            TeClass::ZeroClean => out.zero_clean.push(flag),
            TeClass::Unflagged => {}
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegationFlag {
    pub row: usize,
    pub prompt: String,
}

pub fn is_negated(prompt: &str) -> bool {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\bnot\b").expect("static regex"))
        .is_match(prompt)
}

/// Rows whose prompt contains the standalone word "not".
pub fn detect_negation(rows: &[AuditRow]) -> Vec<NegationFlag> {
    rows.iter()
        .enumerate()
        .filter(|(_, r)| is_negated(&r.prompt))
        .map(|(i, r)| NegationFlag { row: i, prompt: r.prompt.clone() })
        .collect()
}

/// 1-based ranks with ties sharing their mean rank.
pub fn mid_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = mid;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation: Pearson correlation of mid-ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidInput(format!(
            "paired lists differ in length: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::Undefined("rank correlation needs at least 2 pairs".into()));
    }
    let (rx, ry) = (mid_ranks(xs), mid_ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("constant input has no rank correlation".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman correlation between normalized TE and the binary prompt-bias flag.
pub fn spearman_te_bias(te_norm: &[f64], prompt_bias: &[bool]) -> Result<f64> {
    let flags: Vec<f64> = prompt_bias.iter().map(|&b| f64::from(u8::from(b))).collect();
    spearman(te_norm, &flags)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Correlation {
    Defined { value: f64, n: usize },
    Undefined { reason: String, n: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub n_rows: usize,
    pub bias_counts: BiasCounts,
    pub popularity_histogram: BTreeMap<String, usize>,
    pub negative_te_samples: Vec<TeFlag>,
    pub low_te_samples: Vec<TeFlag>,
    pub zero_clean_samples: Vec<TeFlag>,
    pub te_skipped: Vec<(usize, String)>,
    pub negation_samples: Vec<NegationFlag>,
    pub spearman_te_bias: Correlation,
    pub noise_sigma: f64,
}

pub struct AuditContext<'a> {
    pub model: &'a dyn LanguageModel,
    pub weights: &'a WeightBundle,
    pub tokenizer: &'a dyn Tokenizer,
    pub topk_bias: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

pub fn run_audit(rows: &[AuditRow], ctx: &AuditContext) -> Result<AuditReport> {
    let bias = audit_bias(rows, ctx.model, ctx.topk_bias)?;
    let te = audit_total_effect(rows, ctx.weights, ctx.tokenizer, ctx.noise_sigma, ctx.seed)?;
    let (xs, flags): (Vec<f64>, Vec<bool>) = te
        .te_norm
        .iter()
        .zip(&bias.prompt_bias)
        .filter_map(|(t, b)| Some(((*t)?, (*b)?)))
        .unzip();
    let spearman_te_bias = match spearman_te_bias(&xs, &flags) {
        Ok(value) => Correlation::Defined { value, n: xs.len() },
        Err(Error::Undefined(reason)) => Correlation::Undefined { reason, n: xs.len() },
        Err(e) => return Err(e),
    };
    Ok(AuditReport {
        n_rows: rows.len(),
        popularity_histogram: popularity_histogram(rows),
        negation_samples: detect_negation(rows),
        negative_te_samples: te.negative,
        low_te_samples: te.low,
        zero_clean_samples: te.zero_clean,
        te_skipped: te.skipped,
        bias_counts: bias,
        spearman_te_bias,
        noise_sigma: ctx.noise_sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runner::{Match, ScriptedModel};
    use proptest::prelude::*;

    fn row(prompt: &str, subject: &str, prediction: &str, rel: &str) -> AuditRow {
        AuditRow {
            prompt: prompt.into(),
            subject: subject.into(),
            subject_char_span: prompt.find(subject).map(|i| i..i + subject.len()),
            prediction: prediction.into(),
            relation_id: Some(rel.into()),
            popularity: None,
            traced_token: None,
        }
    }

    fn filler() -> Vec<String> {
        ["the", "a", "of", "and", "to", "in", "for", "on", "at", "by", "with"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    #[test]
    fn name_bias_and_combinations() {
        let model = ScriptedModel::new(filler())
            .rule(Match::Contains("Giuseppe Angeli is a common name".into()), &["Italy"])
            .rule(Match::Exact("He has a citizenship of".into()), &["Canada"])
            .rule(Match::Contains("Lina Canada".into()), &["Canada"]);
        let rows = vec![
            row("Giuseppe Angeli, who has a citizenship of", "Giuseppe Angeli", "Italy", "P27"),
            row("Lina Canada has a citizenship of", "Lina Canada", "Canada", "P27"),
            row("Nobody Known, who has a citizenship of", "Nobody Known", "Peru", "P27"),
        ];
        let c = audit_bias(&rows, &model, 10).unwrap();
        assert_eq!(c.flagged[0].kinds, vec![BiasKind::Name]);
        assert_eq!(c.flagged[1].kinds, vec![BiasKind::Lexical, BiasKind::Name, BiasKind::Prompt]);
        assert_eq!(c.per_combination["name"], 1);
        assert_eq!(c.per_combination["lexical+name+prompt"], 1);
        assert_eq!(c.per_kind[&BiasKind::Name], 2);
        assert_eq!(c.flagged.len(), 2);
        let none = audit_bias(&rows[2..], &model, 10).unwrap();
        assert!(none.per_kind.is_empty() && none.flagged.is_empty());
    }

    #[test]
    fn te_classes() {
        assert_eq!(classify_te(0.5, 0.35), TeClass::Low);
        assert_eq!(classify_te(0.5, 0.1), TeClass::Unflagged);
        assert_eq!(classify_te(0.5, 0.6), TeClass::Negative);
        assert_eq!(classify_te(0.5, 0.3), TeClass::Unflagged);
        assert_eq!(classify_te(0.0, 0.1), TeClass::ZeroClean);
    }

    #[test]
    fn negation() {
        let rows = vec![
            row("The language used by Louis Bonaparte is not the language of the", "Louis Bonaparte", "French", "P103"),
            row("Notting Hill is located in", "Notting Hill", "London", "P131"),
            row("NOT a city:", "a", "x", "P131"),
        ];
        let flags = detect_negation(&rows);
        assert_eq!(flags.iter().map(|f| f.row).collect::<Vec<_>>(), vec![0, 2]);
        assert!(detect_negation(&[]).is_empty());
    }

    #[test]
    fn spearman_cases() {
        // A binary flag reaches -1 only when te splits into the same two groups.
        assert!((spearman_te_bias(&[0.2, 0.9], &[true, false]).unwrap() + 1.0).abs() < 1e-12);
        let grouped = [0.1, 0.1, 0.1, 0.8, 0.8];
        let flags = [true, true, true, false, false];
        assert!((spearman_te_bias(&grouped, &flags).unwrap() + 1.0).abs() < 1e-12);
        let te = [0.1, 0.2, 0.3, 0.8, 0.9];
        let r = spearman_te_bias(&te, &flags).unwrap();
        assert!(r < -0.8 && r > -1.0);
        assert!(matches!(spearman_te_bias(&te, &[false; 5]), Err(Error::Undefined(_))));
        assert_eq!(mid_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn histogram_buckets() {
        let mut rows = vec![row("a b", "a", "b", "P19"); 6];
        for (r, p) in rows.iter_mut().zip([Some(0), Some(100), Some(101), Some(1000), Some(1001), None]) {
            r.popularity = p;
        }
        let h = popularity_histogram(&rows);
        assert_eq!(h["[0,100]"], 2);
        assert_eq!(h["(100,1000]"], 2);
        assert_eq!(h["(1000,10000]"], 1);
        assert_eq!(h.values().sum::<usize>(), 5);
    }

    #[test]
    fn counterfact_adapter() {
        let text = r#"[
          {"case_id":0,"requested_rewrite":{"prompt":"The mother tongue of {} is","relation_id":"P103",
            "target_new":{"str":"English"},"target_true":{"str":"French"},"subject":"Danielle Darrieux"}},
          {"prompt":"Shibuya-kei, that originated in","subject":"Shibuya-kei","attribute":"Japan"}
        ]"#;
        let rows = import_counterfact(text).unwrap();
        assert_eq!(rows[0].prompt, "The mother tongue of Danielle Darrieux is");
        assert_eq!(&rows[0].prompt[rows[0].subject_char_span.clone().unwrap()], "Danielle Darrieux");
        assert_eq!(rows[0].prediction, "French");
        assert_eq!(rows[1].subject_char_span, Some(0..11));
    }

    #[test]
    fn token_ranges() {
        let offs = vec![0..3, 4..10, 11..14, 15..17];
        assert_eq!(token_range_for(&offs, &(4..14)), Some(1..3));
        assert_eq!(token_range_for(&offs, &(20..22)), None);
    }

    proptest! {
        #[test]
        fn spearman_bounded_and_symmetric(pairs in prop::collection::vec((0.0f64..1.0, any::<bool>()), 2..40)) {
            let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pairs.iter().map(|p| f64::from(u8::from(p.1))).collect();
            if let Ok(r) = spearman(&xs, &ys) {
                prop_assert!((-1.0..=1.0).contains(&r));
                prop_assert!((r - spearman(&ys, &xs).unwrap()).abs() < 1e-12);
            }
        }

        #[test]
        fn te_flags_partition(p_clean in 0.0f64..1.0, p_noised in 0.0f64..1.0) {
            let c = classify_te(p_clean, p_noised);
            if p_clean > 0.0 {
                prop_assert_eq!(c == TeClass::Negative, p_clean - p_noised < 0.0);
                prop_assert!(!(c == TeClass::Low && p_clean < p_noised));
            }
        }
    }
}
