// SPDX-License-Identifier: MIT OR Apache-2.0

//! Fact-completion, confidence and heuristics criteria over
//! (query, prediction) pairs.

pub mod popularity;
pub mod templates;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::ops::Range;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::runner::{LanguageModel, Prediction};

pub use popularity::{PageviewClient, PopularityRecord, PopularitySource, TsvPopularity};
pub use templates::{FactQuery, Template, NAME_BIAS_RELATIONS, RELATIONS};

/// Minimum number of paraphrases a confidence count is computed over.
pub const MIN_TEMPLATES: usize = 5;

pub const NAME_PROBE_CITY: &str = "[X] is a common name in the following city:";
pub const NAME_PROBE_COUNTRY: &str = "[X] is a common name in the following country:";

/// Object labels seen per relation in the reference fact tuples.
pub type AnswerSets = BTreeMap<String, BTreeSet<String>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasKind {
    Lexical,
    Name,
    Prompt,
}

impl BiasKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BiasKind::Lexical => "lexical",
            BiasKind::Name => "name",
            BiasKind::Prompt => "prompt",
        }
    }
}

impl fmt::Display for BiasKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Non-trivial prediction of a valid type for the relation.
pub fn is_fact_completion(relation: &str, prediction: &str, answers: &BTreeSet<String>) -> Result<bool> {
    templates::check_relation(relation)?;
    let p = prediction.trim();
    if p.is_empty() || !answers.contains(p) {
        return Ok(false);
    }
    if relation == "P101" {
        return Ok(true);
    }
    Ok(p.chars().next().is_some_and(char::is_uppercase))
}

/// Number of templates whose top-k list contains `candidate`.
pub fn confidence_count(per_template: &BTreeMap<usize, Vec<Prediction>>, candidate: &str) -> Result<usize> {
    if per_template.len() < MIN_TEMPLATES {
        return Err(Error::InsufficientTemplates {
            found: per_template.len(),
            required: MIN_TEMPLATES,
        });
    }
    let c = candidate.trim();
    Ok(per_template
        .values()
        .filter(|preds| preds.iter().any(|p| p.token_text.trim() == c))
        .count())
}

/// Case-sensitive substring match in either direction.
pub fn lexical_overlap(subject: &str, prediction: &str) -> bool {
    let (s, p) = (subject.trim(), prediction.trim());
    !s.is_empty() && !p.is_empty() && (s.contains(p) || p.contains(s))
}

pub fn name_bias_applies(relation: &str) -> bool {
    NAME_BIAS_RELATIONS.contains(&relation)
}

pub fn name_probes(subject: &str) -> [String; 2] {
    [
        NAME_PROBE_CITY.replace("[X]", subject),
        NAME_PROBE_COUNTRY.replace("[X]", subject),
    ]
}

/// Generic subject stand-ins per relation.
pub fn substitutions(relation: &str) -> Result<&'static [&'static str]> {
    Ok(match relation {
        "P19" | "P20" | "P27" | "P101" => &["He", "She"],
        "P495" => &["It"],
        "P740" => &["It", "The organisation"],
        "P1376" => &["It", "The city"],
        other => return Err(Error::UnknownRelation(other.to_string())),
    })
}

/// Replace the subject span of `prompt` with `sub`, fixing possessives and
/// capitalization.
pub fn substitute_subject(prompt: &str, span: Range<usize>, sub: &str) -> String {
    let before = &prompt[..span.start];
    let mut after = &prompt[span.end..];
    let at_start = before.trim().is_empty();
    let mut word = sub.to_string();
    if let Some(rest) = after.strip_prefix("'s") {
        let possessive = match sub {
            "He" => Some("His"),
            "She" => Some("Her"),
            "It" => Some("Its"),
            _ => None,
        };
        if let Some(p) = possessive {
            word = p.to_string();
            after = rest;
        }
    }
    if at_start {
        let mut c = word.chars();
        if let Some(f) = c.next() {
            word = f.to_uppercase().chain(c).collect();
        }
    } else {
        word = match word.as_str() {
            "He" => "him".into(),
            "She" => "her".into(),
            "His" => "his".into(),
            "Her" => "her".into(),
            "It" => "it".into(),
            "Its" => "its".into(),
            other => match other.strip_prefix("The ") {
                Some(rest) => format!("the {rest}"),
                None => other.to_string(),
            },
        };
    }
    format!("{before}{word}{after}")
}

/// Prompts with the subject replaced by each stand-in of the relation.
pub fn prompt_bias_probes(relation: &str, prompt: &str, span: Range<usize>) -> Result<Vec<String>> {
    Ok(substitutions(relation)?
        .iter()
        .map(|s| substitute_subject(prompt, span.clone(), s))
        .collect())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiasReport {
    pub lexical_overlap: bool,
    pub name_bias: bool,
    pub prompt_bias: bool,
    /// Probe prompts or matches that set a flag.
    pub evidence: Vec<String>,
}

impl BiasReport {
    pub fn kinds(&self) -> BTreeSet<BiasKind> {
        let mut out = BTreeSet::new();
        if self.lexical_overlap {
            out.insert(BiasKind::Lexical);
        }
        if self.name_bias {
            out.insert(BiasKind::Name);
        }
        if self.prompt_bias {
            out.insert(BiasKind::Prompt);
        }
        out
    }

    pub fn verdict(&self) -> HeuristicsVerdict {
        heuristics_verdict(self.lexical_overlap, self.name_bias, self.prompt_bias)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeuristicsVerdict {
    None,
    Single(BiasKind),
    Multiple,
}

pub fn heuristics_verdict(overlap: bool, name: bool, prompt: bool) -> HeuristicsVerdict {
    let set: Vec<BiasKind> = [
        (overlap, BiasKind::Lexical),
        (name, BiasKind::Name),
        (prompt, BiasKind::Prompt),
    ]
    .into_iter()
    .filter_map(|(f, k)| f.then_some(k))
    .collect();
    match set.as_slice() {
        [] => HeuristicsVerdict::None,
        [k] => HeuristicsVerdict::Single(*k),
        _ => HeuristicsVerdict::Multiple,
    }
}

/// Heuristics recall needs exactly one cue and no memorization.
pub fn heuristics_eligible(verdict: HeuristicsVerdict, memorized: bool) -> bool {
    matches!(verdict, HeuristicsVerdict::Single(_)) && !memorized
}

/// `views > threshold`. A missing record counts as 0 views.
pub fn is_memorized(views: Option<u64>, threshold: u64) -> bool {
    match views {
        Some(v) => v > threshold,
        None => {
            log::warn!("missing popularity record, treating as 0 views");
            false
        }
    }
}

/// Exact match, or a prediction of more than 3 characters that starts the gold label.
pub fn gold_matches(prediction: &str, gold: &str) -> bool {
    let (p, g) = (prediction.trim(), gold.trim());
    if p.is_empty() {
        return false;
    }
    p == g || (p.chars().count() > 3 && g.starts_with(p))
}

/// Runs bias probes against a model, caching name probes per subject.
pub struct BiasProber<'m> {
    model: &'m dyn LanguageModel,
    topk: usize,
    name_cache: Mutex<HashMap<String, [Vec<Prediction>; 2]>>,
}

impl<'m> BiasProber<'m> {
    pub fn new(model: &'m dyn LanguageModel, topk: usize) -> Self {
        BiasProber {
            model,
            topk,
            name_cache: Mutex::new(HashMap::new()),
        }
    }

    fn name_probe_results(&self, subject: &str) -> Result<[Vec<Prediction>; 2]> {
        if let Some(hit) = self.name_cache.lock().expect("cache lock").get(subject) {
            return Ok(hit.clone());
        }
        let [city, country] = name_probes(subject);
        let res = [self.model.top_k(&city, self.topk)?, self.model.top_k(&country, self.topk)?];
        self.name_cache
            .lock()
            .expect("cache lock")
            .insert(subject.to_string(), res.clone());
        Ok(res)
    }

    /// Matching probe prompt, if the prediction is in either probe's top-k.
    pub fn name_bias(&self, subject: &str, prediction: &str) -> Result<Option<String>> {
        let p = prediction.trim();
        if p.is_empty() {
            return Ok(None);
        }
        let results = self.name_probe_results(subject)?;
        for (probe, preds) in name_probes(subject).iter().zip(results.iter()) {
            if let Some(hit) = preds.iter().find(|x| x.token_text.trim() == p) {
                return Ok(Some(format!("name: \"{probe}\" rank {}", hit.rank)));
            }
        }
        Ok(None)
    }

    /// Matching substituted prompt, if the prediction is in its top-k.
    pub fn prompt_bias(
        &self,
        relation: &str,
        prompt: &str,
        subject_span: Range<usize>,
        prediction: &str,
    ) -> Result<Option<String>> {
        let p = prediction.trim();
        if p.is_empty() {
            return Ok(None);
        }
        for probe in prompt_bias_probes(relation, prompt, subject_span)? {
            let preds = self.model.top_k(&probe, self.topk)?;
            if let Some(hit) = preds.iter().find(|x| x.token_text.trim() == p) {
                return Ok(Some(format!("prompt: \"{probe}\" rank {}", hit.rank)));
            }
        }
        Ok(None)
    }

    /// All three filters for one (query, prediction) pair. Name bias is only
    /// probed for relations it applies to.
    pub fn report(&self, query: &FactQuery, prediction: &str) -> Result<BiasReport> {
        self.report_for(
            &query.relation_id,
            &query.prompt,
            &query.subject,
            query.subject_char_span.clone(),
            prediction,
        )
    }

    pub fn report_for(
        &self,
        relation: &str,
        prompt: &str,
        subject: &str,
        subject_span: Range<usize>,
        prediction: &str,
    ) -> Result<BiasReport> {
        let mut r = BiasReport {
            lexical_overlap: lexical_overlap(subject, prediction),
            ..BiasReport::default()
        };
        if r.lexical_overlap {
            r.evidence.push(format!("lexical: \"{}\" ~ \"{subject}\"", prediction.trim()));
        }
        if name_bias_applies(relation) {
            if let Some(e) = self.name_bias(subject, prediction)? {
                r.name_bias = true;
                r.evidence.push(e);
            }
        }
        if let Some(e) = self.prompt_bias(relation, prompt, subject_span, prediction)? {
            r.prompt_bias = true;
            r.evidence.push(e);
        }
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runner::{Match, ScriptedModel};

    fn preds(tokens: &[&str]) -> Vec<Prediction> {
        tokens
            .iter()
            .enumerate()
            .map(|(i, t)| Prediction {
                token_text: t.to_string(),
                token_id: i as u32,
                rank: i + 1,
                probability: 0.1,
            })
            .collect()
    }

    fn answers(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn fact_completion_rules() {
        let a = answers(&["Japan", "the", "physics"]);
        assert!(!is_fact_completion("P495", "the", &a).unwrap());
        assert!(is_fact_completion("P495", "Japan", &a).unwrap());
        assert!(!is_fact_completion("P27", "Zzyzx", &a).unwrap());
        assert!(is_fact_completion("P101", "physics", &a).unwrap());
        assert!(!is_fact_completion("P101", "", &a).unwrap());
        assert!(is_fact_completion("P999", "Japan", &a).is_err());
    }

    #[test]
    fn confidence_counting() {
        let mut m = BTreeMap::new();
        for t in 0..7 {
            m.insert(t, if t < 5 { preds(&["the", " Singapore", "a"]) } else { preds(&["x"]) });
        }
        assert_eq!(confidence_count(&m, "Singapore").unwrap(), 5);
        m.remove(&6);
        m.remove(&5);
        m.remove(&4);
        assert!(matches!(
            confidence_count(&m, "Singapore"),
            Err(Error::InsufficientTemplates { found: 4, required: 5 })
        ));
    }

    #[test]
    fn lexical_examples() {
        assert!(lexical_overlap("Olre Hellspirit", "Hell"));
        assert!(lexical_overlap("San Salcos", "Sal"));
        assert!(!lexical_overlap("Thomas Ong", "Singapore"));
        assert!(!lexical_overlap("San Salcos", "sal"));
        assert!(!lexical_overlap("San Salcos", " "));
    }

    #[test]
    fn name_probe_boundary() {
        let tokens: Vec<String> = (1..=11).map(|i| format!("C{i}")).collect();
        let refs: Vec<&str> = tokens.iter().map(|s| s.as_str()).collect();
        let model = ScriptedModel::new(vec![]).rule(Match::Contains("common name".into()), &refs);
        let prober = BiasProber::new(&model, 10);
        assert!(prober.name_bias("Ada Vex", "C10").unwrap().is_some());
        assert!(prober.name_bias("Ada Vex", "C11").unwrap().is_none());
        assert!(prober.name_bias("Ada Vex", "Japan").unwrap().is_none());
    }

    #[test]
    fn rigged_name_probe() {
        let model = ScriptedModel::new(vec!["the".into(), "a".into()]).rule(
            Match::Exact("Hirashima Hideyoshi is a common name in the following country:".into()),
            &["China", "Korea", "Japan"],
        );
        let prober = BiasProber::new(&model, 10);
        let e = prober.name_bias("Hirashima Hideyoshi", "Japan").unwrap().unwrap();
        assert!(e.contains("rank 3"));
    }

    #[test]
    fn substitution_grammar() {
        let q = FactQuery::new("P1376", 1, "Tokyo").unwrap();
        let probes = prompt_bias_probes("P1376", &q.prompt, q.subject_char_span.clone()).unwrap();
        assert_eq!(probes, vec!["It is the capital city of", "The city is the capital city of"]);
        let q = FactQuery::new("P20", 6, "Ada Vex").unwrap();
        assert_eq!(q.prompt, "Ada Vex's life ended in");
        let p = prompt_bias_probes("P20", &q.prompt, q.subject_char_span.clone()).unwrap();
        assert_eq!(p, vec!["His life ended in", "Her life ended in"]);
        assert_eq!(substitute_subject("The expertise of Ada is", 17..20, "She"), "The expertise of her is");
        assert_eq!(
            substitute_subject("Made by Acme", 8..12, "The organisation"),
            "Made by the organisation"
        );
        assert!(substitutions("P36").is_err());
    }

    #[test]
    fn prompt_bias_on_rigged_model() {
        let model = ScriptedModel::new(vec!["the".into()])
            .rule(Match::Exact("He has a citizenship of".into()), &["the", "Canada"]);
        let prober = BiasProber::new(&model, 10);
        let q = FactQuery::new("P27", 4, "Balo Windhair").unwrap();
        assert_eq!(q.prompt, "Balo Windhair has a citizenship of");
        let r = prober.report(&q, "Canada").unwrap();
        assert!(r.prompt_bias && !r.name_bias && !r.lexical_overlap);
        assert_eq!(r.verdict(), HeuristicsVerdict::Single(BiasKind::Prompt));
        let none = prober.report(&q, "Peru").unwrap();
        assert_eq!(none, BiasReport::default());
    }

    #[test]
    fn verdicts_and_thresholds() {
        assert_eq!(heuristics_verdict(false, true, false), HeuristicsVerdict::Single(BiasKind::Name));
        assert_eq!(heuristics_verdict(true, true, false), HeuristicsVerdict::Multiple);
        assert_eq!(heuristics_verdict(false, false, false), HeuristicsVerdict::None);
        assert!(heuristics_eligible(HeuristicsVerdict::Single(BiasKind::Name), false));
        assert!(!heuristics_eligible(HeuristicsVerdict::Single(BiasKind::Name), true));
        assert!(is_memorized(Some(1418), 1000));
        assert!(!is_memorized(Some(215), 1000));
        assert!(!is_memorized(Some(1000), 1000));
        assert!(is_memorized(Some(1001), 1000));
        assert!(!is_memorized(None, 1000));
    }

    #[test]
    fn gold_prefix_rule() {
        assert!(gold_matches("Singapore", "Singapore"));
        assert!(!gold_matches("Ber", "Berlin"));
        assert!(gold_matches("Berl", "Berlin"));
        assert!(!gold_matches("Bed", "Bedford"));
        assert!(!gold_matches("", "Bedford"));
    }
}
