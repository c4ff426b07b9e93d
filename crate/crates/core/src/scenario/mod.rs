// SPDX-License-Identifier: MIT OR Apache-2.0

//! Builders for the four prediction-scenario splits and dataset assembly.

pub mod corpus;
pub mod facts;
pub mod names;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Range;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    confidence_count, gold_matches, is_fact_completion, is_memorized, AnswerSets, BiasKind,
    BiasProber, FactQuery, HeuristicsVerdict, PopularitySource,
};
use crate::error::{Error, Result};
use crate::runner::{LanguageModel, Prediction};

pub use corpus::{CorpusEntry, CorpusSentence};
pub use facts::FactTuple;
pub use names::{NameStyle, SyntheticSubject};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Generic,
    Guesswork,
    Heuristics,
    ExactFact,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::Generic,
        Scenario::Guesswork,
        Scenario::Heuristics,
        Scenario::ExactFact,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Generic => "generic",
            Scenario::Guesswork => "guesswork",
            Scenario::Heuristics => "heuristics",
            Scenario::ExactFact => "exact_fact",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown scenario `{s}`")))
    }
}

/// One dataset row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSample {
    pub scenario: Scenario,
    pub relation_id: Option<String>,
    pub template_id: Option<usize>,
    pub prompt: String,
    pub subject: String,
    pub subject_char_span: Range<usize>,
    pub prediction: String,
    pub prediction_rank: usize,
    pub prediction_prob: f64,
    pub gold: Option<String>,
    pub confidence_count: Option<usize>,
    pub popularity: Option<u64>,
    pub bias_tags: BTreeSet<BiasKind>,
    pub style: Option<NameStyle>,
    /// Token id of the prediction under the building model.
    pub traced_token: u32,
    /// Top-k token texts per template the confidence count was computed from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_template_topk: Option<BTreeMap<usize, Vec<String>>>,
}

impl ScenarioSample {
    /// (subject, template, prediction) identity used for disjointness.
    pub fn triple(&self) -> (String, Option<usize>, String) {
        (self.subject.clone(), self.template_id, self.prediction.clone())
    }
}

/// Thresholds and model handle shared by the builders.
pub struct BuildContext<'m> {
    pub model: &'m dyn LanguageModel,
    pub topk_confidence: usize,
    pub topk_bias: usize,
    pub confidence_threshold: usize,
    pub popularity_threshold: u64,
}

impl<'m> BuildContext<'m> {
    pub fn new(model: &'m dyn LanguageModel) -> Self {
        BuildContext {
            model,
            topk_confidence: 3,
            topk_bias: 10,
            confidence_threshold: 5,
            popularity_threshold: 1000,
        }
    }
}

/// Per-stage counts of kept and rejected candidates.
pub type BuildLog = BTreeMap<String, usize>;

fn bump(log: &mut BuildLog, key: &str) {
    *log.entry(key.to_string()).or_insert(0) += 1;
}

fn merge(into: &mut BuildLog, from: BuildLog) {
    for (k, v) in from {
        *into.entry(k).or_insert(0) += v;
    }
}

/// Top-k predictions of every subject-first template of `relation`.
fn per_template_predictions(
    ctx: &BuildContext,
    relation: &str,
    subject: &str,
) -> Result<Vec<(FactQuery, Vec<Prediction>)>> {
    FactQuery::all_for(relation, subject)?
        .into_iter()
        .map(|q| {
            let preds = ctx.model.top_k(&q.prompt, ctx.topk_confidence)?;
            Ok((q, preds))
        })
        .collect()
}

fn topk_table(rows: &[(FactQuery, Vec<Prediction>)]) -> BTreeMap<usize, Vec<Prediction>> {
    rows.iter().map(|(q, p)| (q.template_id, p.clone())).collect()
}

fn topk_texts(rows: &[(FactQuery, Vec<Prediction>)]) -> BTreeMap<usize, Vec<String>> {
    rows.iter()
        .map(|(q, p)| (q.template_id, p.iter().map(|x| x.token_text.trim().to_string()).collect()))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn fact_sample(
    scenario: Scenario,
    q: &FactQuery,
    p: &Prediction,
    gold: Option<String>,
    conf: usize,
    popularity: Option<u64>,
    bias_tags: BTreeSet<BiasKind>,
    style: Option<NameStyle>,
    table: &BTreeMap<usize, Vec<String>>,
) -> ScenarioSample {
    ScenarioSample {
        scenario,
        relation_id: Some(q.relation_id.clone()),
        template_id: Some(q.template_id),
        prompt: q.prompt.clone(),
        subject: q.subject.clone(),
        subject_char_span: q.subject_char_span.clone(),
        prediction: p.token_text.trim().to_string(),
        prediction_rank: p.rank,
        prediction_prob: p.probability,
        gold,
        confidence_count: Some(conf),
        popularity,
        bias_tags,
        style,
        traced_token: p.token_id,
        per_template_topk: Some(table.clone()),
    }
}

/// Subjects grouped per relation with their gold objects, restricted to
/// supported relations.
fn subjects_of(tuples: &[FactTuple], log: &mut BuildLog) -> Vec<((String, String), Vec<String>)> {
    facts::by_subject(tuples)
        .into_iter()
        .filter(|((rel, _), _)| {
            let ok = crate::diagnostics::templates::is_supported(rel);
            if !ok {
                bump(log, "unsupported_relation");
            }
            ok
        })
        .collect()
}

/// Predictions in the top-k of exactly one template, for unpopular subjects.
pub fn build_guesswork(
    ctx: &BuildContext,
    tuples: &[FactTuple],
    answers: &AnswerSets,
    popularity: &dyn PopularitySource,
) -> Result<(Vec<ScenarioSample>, BuildLog)> {
    let mut log = BuildLog::new();
    let subjects = subjects_of(tuples, &mut log);
    let results: Vec<Result<(Vec<ScenarioSample>, BuildLog)>> = subjects
        .par_iter()
        .map(|((rel, subject), golds)| {
            let mut log = BuildLog::new();
            let mut out = Vec::new();
            let views = popularity.lookup(subject)?;
            if is_memorized(views, ctx.popularity_threshold) {
                bump(&mut log, "discard_popular_subject");
                return Ok((out, log));
            }
            let rows = per_template_predictions(ctx, rel, subject)?;
            let table = topk_table(&rows);
            let texts = topk_texts(&rows);
            let empty = BTreeSet::new();
            let answer_set = answers.get(rel).unwrap_or(&empty);
            let mut kept: Vec<(&FactQuery, &Prediction)> = Vec::new();
            for (q, preds) in &rows {
                for p in preds {
                    if is_fact_completion(rel, &p.token_text, answer_set)? {
                        kept.push((q, p));
                    } else {
                        bump(&mut log, "discard_trivial");
                    }
                }
            }
            for (q, p) in kept {
                let conf = confidence_count(&table, &p.token_text)?;
                if conf == 1 {
                    bump(&mut log, "kept");
                    out.push(fact_sample(
                        Scenario::Guesswork,
                        q,
                        p,
                        golds.first().cloned(),
                        conf,
                        Some(views.unwrap_or(0)),
                        BTreeSet::new(),
                        None,
                        &texts,
                    ));
                } else {
                    bump(&mut log, "discard_count_not_1");
                }
            }
            Ok((out, log))
        })
        .collect();
    collect_results(results, log)
}

fn collect_results(
    results: Vec<Result<(Vec<ScenarioSample>, BuildLog)>>,
    mut log: BuildLog,
) -> Result<(Vec<ScenarioSample>, BuildLog)> {
    let mut out = Vec::new();
    for r in results {
        let (samples, l) = r?;
        out.extend(samples);
        merge(&mut log, l);
    }
    Ok((out, log))
}

/// Candidates grouped by prediction text, in first-seen order.
fn group_by_prediction<'a, T>(items: Vec<(&'a FactQuery, &'a Prediction, T)>) -> Vec<(String, Vec<(&'a FactQuery, &'a Prediction, T)>)> {
    let mut groups: Vec<(String, Vec<(&FactQuery, &Prediction, T)>)> = Vec::new();
    for item in items {
        let key = item.1.token_text.trim().to_string();
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, g)) => g.push(item),
            None => groups.push((key, vec![item])),
        }
    }
    groups
}

/// Output of [`build_heuristics`]: the split plus confident predictions on
/// which no filter fired.
#[derive(Debug, Clone, Default)]
pub struct HeuristicsOutput {
    pub samples: Vec<ScenarioSample>,
    pub unexplained_confident: Vec<ScenarioSample>,
    pub log: BuildLog,
}

/// Confident, single-cue predictions for synthetic subjects.
pub fn build_heuristics(
    ctx: &BuildContext,
    subjects: &[(String, SyntheticSubject)],
    answers: &AnswerSets,
) -> Result<HeuristicsOutput> {
    let prober = BiasProber::new(ctx.model, ctx.topk_bias);
    let results: Vec<Result<(Vec<ScenarioSample>, Vec<ScenarioSample>, BuildLog)>> = subjects
        .par_iter()
        .map(|(rel, s)| {
            let mut log = BuildLog::new();
            let rows = per_template_predictions(ctx, rel, &s.name)?;
            let table = topk_table(&rows);
            let texts = topk_texts(&rows);
            let empty = BTreeSet::new();
            let answer_set = answers.get(rel).unwrap_or(&empty);
            let mut single = Vec::new();
            let mut unexplained = Vec::new();
            for (q, preds) in &rows {
                for p in preds {
                    if !is_fact_completion(rel, &p.token_text, answer_set)? {
                        bump(&mut log, "discard_trivial");
                        continue;
                    }
                    let report = prober.report(q, &p.token_text)?;
                    match report.verdict() {
                        HeuristicsVerdict::Single(kind) => single.push((q, p, kind)),
                        HeuristicsVerdict::Multiple => bump(&mut log, "discard_multiple_bias"),
                        HeuristicsVerdict::None => {
                            bump(&mut log, "discard_no_bias");
                            unexplained.push((q, p, ()));
                        }
                    }
                }
            }
            let mut out = Vec::new();
            for (_, group) in group_by_prediction(single) {
                if group.len() < ctx.confidence_threshold {
                    bump(&mut log, "discard_not_confident");
                    continue;
                }
                for (q, p, kind) in group {
                    bump(&mut log, "kept");
                    out.push(fact_sample(
                        Scenario::Heuristics,
                        q,
                        p,
                        None,
                        confidence_count(&table, &p.token_text)?,
                        Some(0),
                        [kind].into_iter().collect(),
                        Some(s.style),
                        &texts,
                    ));
                }
            }
            let mut side = Vec::new();
            for (_, group) in group_by_prediction(unexplained) {
                if group.len() >= ctx.confidence_threshold {
                    for (q, p, ()) in group {
                        side.push(fact_sample(
                            Scenario::Heuristics,
                            q,
                            p,
                            None,
                            confidence_count(&table, &p.token_text)?,
                            Some(0),
                            BTreeSet::new(),
                            Some(s.style),
                            &texts,
                        ));
                    }
                }
            }
            Ok((out, side, log))
        })
        .collect();
    let mut output = HeuristicsOutput::default();
    for r in results {
        let (samples, side, log) = r?;
        output.samples.extend(samples);
        output.unexplained_confident.extend(side);
        merge(&mut output.log, log);
    }
    if !output.unexplained_confident.is_empty() {
        log::info!(
            "{} confident synthetic-subject predictions carry no detected cue",
            output.unexplained_confident.len()
        );
    }
    Ok(output)
}

/// Confident, correct, cue-free predictions for popular subjects.
pub fn build_exact_fact(
    ctx: &BuildContext,
    tuples: &[FactTuple],
    popularity: &dyn PopularitySource,
) -> Result<(Vec<ScenarioSample>, BuildLog)> {
    let prober = BiasProber::new(ctx.model, ctx.topk_bias);
    let mut log = BuildLog::new();
    let subjects = subjects_of(tuples, &mut log);
    let results: Vec<Result<(Vec<ScenarioSample>, BuildLog)>> = subjects
        .par_iter()
        .map(|((rel, subject), golds)| {
            let mut log = BuildLog::new();
            let mut out = Vec::new();
            let views = popularity.lookup(subject)?;
            if !is_memorized(views, ctx.popularity_threshold) {
                bump(&mut log, "discard_unpopular_subject");
                return Ok((out, log));
            }
            let rows = per_template_predictions(ctx, rel, subject)?;
            let table = topk_table(&rows);
            let texts = topk_texts(&rows);
            let mut kept = Vec::new();
            for (q, preds) in &rows {
                for p in preds {
                    let Some(gold) = golds.iter().find(|g| gold_matches(&p.token_text, g)) else {
                        bump(&mut log, "discard_incorrect");
                        continue;
                    };
                    let report = prober.report(q, &p.token_text)?;
                    if report.verdict() != HeuristicsVerdict::None {
                        bump(&mut log, "discard_bias");
                        continue;
                    }
                    kept.push((q, p, gold.clone()));
                }
            }
            for (_, group) in group_by_prediction(kept) {
                if group.len() < ctx.confidence_threshold {
                    bump(&mut log, "discard_not_confident");
                    continue;
                }
                for (q, p, gold) in group {
                    bump(&mut log, "kept");
                    out.push(fact_sample(
                        Scenario::ExactFact,
                        q,
                        p,
                        Some(gold),
                        confidence_count(&table, &p.token_text)?,
                        views,
                        BTreeSet::new(),
                        None,
                        &texts,
                    ));
                }
            }
            Ok((out, log))
        })
        .collect();
    collect_results(results, log)
}

/// First qualifying sentence of each page, until `n` pages are used.
pub fn build_generic(
    model: &dyn LanguageModel,
    corpus: &[CorpusEntry],
    n: usize,
) -> Result<(Vec<ScenarioSample>, BuildLog)> {
    let mut log = BuildLog::new();
    let mut out = Vec::new();
    for entry in corpus {
        if out.len() == n {
            break;
        }
        let mut chosen = None;
        for s in &entry.sentences {
            match corpus::select_sentence(&entry.title, s) {
                Ok(c) => {
                    chosen = Some(c);
                    break;
                }
                Err(r) => bump(&mut log, &format!("discard_{}", r.as_str())),
            }
        }
        let Some(c) = chosen else {
            bump(&mut log, "page_without_sentence");
            continue;
        };
        let top = model
            .top_k(&c.text, 1)?
            .into_iter()
            .next()
            .ok_or_else(|| Error::InvalidInput("model returned no prediction".into()))?;
        bump(&mut log, "kept");
        out.push(ScenarioSample {
            scenario: Scenario::Generic,
            relation_id: None,
            template_id: None,
            prompt: c.text.clone(),
            subject: c.text[c.subject_char_span.clone()].to_string(),
            subject_char_span: c.subject_char_span,
            prediction: top.token_text.trim().to_string(),
            prediction_rank: top.rank,
            prediction_prob: top.probability,
            gold: Some(c.next_token_gold),
            confidence_count: None,
            popularity: None,
            bias_tags: BTreeSet::new(),
            style: None,
            traced_token: top.token_id,
            per_template_topk: None,
        });
    }
    if out.len() < n {
        return Err(Error::CorpusExhausted {
            requested: n,
            found: out.len(),
        });
    }
    Ok((out, log))
}

/// Scenario a (query, prediction) pair falls into given its measurements, or
/// `None` if it fits no scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurements {
    pub is_fact_completion: bool,
    pub confidence_count: usize,
    pub popularity: Option<u64>,
    pub bias: HeuristicsVerdict,
    pub synthetic_subject: bool,
    pub correct: bool,
}

pub fn classify(m: &Measurements, confidence_threshold: usize, popularity_threshold: u64) -> Option<Scenario> {
    if !m.is_fact_completion {
        return Some(Scenario::Generic);
    }
    let memorized = is_memorized(m.popularity, popularity_threshold);
    let confident = m.confidence_count >= confidence_threshold;
    if m.confidence_count == 1 && !memorized && !m.synthetic_subject {
        return Some(Scenario::Guesswork);
    }
    if confident && m.synthetic_subject && crate::diagnostics::heuristics_eligible(m.bias, memorized) {
        return Some(Scenario::Heuristics);
    }
    if confident && memorized && m.bias == HeuristicsVerdict::None && m.correct {
        return Some(Scenario::ExactFact);
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratify {
    /// Highest prediction probability first.
    Top,
    Bottom,
}

/// Draw `mixture[s]` samples from each split. Without stratification the
/// draw is seeded and keeps the split's order.
pub fn assemble_dataset(
    splits: &BTreeMap<Scenario, Vec<ScenarioSample>>,
    mixture: &BTreeMap<Scenario, usize>,
    seed: u64,
    stratify: Option<Stratify>,
) -> Result<Vec<ScenarioSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (&scenario, &want) in mixture {
        if want == 0 {
            continue;
        }
        let empty = Vec::new();
        let split = splits.get(&scenario).unwrap_or(&empty);
        if split.len() < want {
            return Err(Error::SplitTooSmall {
                scenario: scenario.to_string(),
                requested: want,
                available: split.len(),
            });
        }
        let mut idx: Vec<usize> = match stratify {
            None => rand::seq::index::sample(&mut rng, split.len(), want).into_vec(),
            Some(order) => {
                let mut all: Vec<usize> = (0..split.len()).collect();
                all.sort_by(|&a, &b| {
                    let (pa, pb) = (split[a].prediction_prob, split[b].prediction_prob);
                    let o = match order {
                        Stratify::Top => pb.total_cmp(&pa),
                        Stratify::Bottom => pa.total_cmp(&pb),
                    };
                    o.then(a.cmp(&b))
                });
                all.truncate(want);
                all
            }
        };
        idx.sort_unstable();
        out.extend(idx.into_iter().map(|i| split[i].clone()));
    }
    Ok(out)
}

/// Header line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub counts: BTreeMap<Scenario, usize>,
    #[serde(default)]
    pub meta: BTreeMap<String, serde_json::Value>,
}

pub const DATASET_FORMAT: &str = "prism-dataset";

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: DatasetHeader,
}

pub fn dataset_bytes(samples: &[ScenarioSample], seed: u64, meta: BTreeMap<String, serde_json::Value>) -> Result<Vec<u8>> {
    let mut counts = BTreeMap::new();
    for s in samples {
        *counts.entry(s.scenario).or_insert(0) += 1;
    }
    let header = HeaderLine {
        header: DatasetHeader {
            format: DATASET_FORMAT.into(),
            version: 1,
            seed,
            counts,
            meta,
        },
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    out.extend(crate::io::to_jsonl(samples)?);
    Ok(out)
}

pub fn write_dataset(path: &Path, samples: &[ScenarioSample], seed: u64, meta: BTreeMap<String, serde_json::Value>) -> Result<()> {
    crate::io::write_atomic(path, &dataset_bytes(samples, seed, meta)?)
}

/// Parse a dataset file. The header line is optional.
pub fn parse_dataset(text: &str) -> Result<(Option<DatasetHeader>, Vec<ScenarioSample>)> {
    let mut header = None;
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if i == 0 {
            if let Ok(h) = serde_json::from_str::<HeaderLine>(line) {
                header = Some(h.header);
                continue;
            }
        }
        samples.push(serde_json::from_str(line)?);
    }
    Ok((header, samples))
}

pub fn read_dataset(path: &Path) -> Result<(Option<DatasetHeader>, Vec<ScenarioSample>)> {
    parse_dataset(&crate::io::read_to_string(path)?)
}

/// Why a sample breaks its scenario's invariants, if it does.
pub fn validate_sample(
    s: &ScenarioSample,
    confidence_threshold: usize,
    popularity_threshold: u64,
    entities: &dyn names::EntityChecker,
) -> Result<Option<String>> {
    let recount = || -> Result<Option<usize>> {
        let Some(table) = &s.per_template_topk else {
            return Ok(None);
        };
        let preds: BTreeMap<usize, Vec<Prediction>> = table
            .iter()
            .map(|(t, texts)| {
                let v = texts
                    .iter()
                    .enumerate()
                    .map(|(i, x)| Prediction {
                        token_text: x.clone(),
                        token_id: 0,
                        rank: i + 1,
                        probability: 0.0,
                    })
                    .collect();
                (*t, v)
            })
            .collect();
        Ok(Some(confidence_count(&preds, &s.prediction)?))
    };
    let fail = |m: &str| Ok(Some(m.to_string()));
    match s.scenario {
        Scenario::Generic => {
            if s.relation_id.is_some() || s.template_id.is_some() || s.confidence_count.is_some() {
                return fail("generic sample carries relation fields");
            }
        }
        Scenario::Guesswork => {
            if recount()? != Some(1) || s.confidence_count != Some(1) {
                return fail("guesswork confidence count is not 1");
            }
            if is_memorized(s.popularity, popularity_threshold) {
                return fail("guesswork subject is popular");
            }
        }
        Scenario::Heuristics => {
            if s.bias_tags.len() != 1 {
                return fail("heuristics sample needs exactly one bias tag");
            }
            if s.style.is_none() || entities.exists(&s.subject)? {
                return fail("heuristics subject is not synthetic");
            }
            if recount()?.is_none_or(|c| c < confidence_threshold) {
                return fail("heuristics prediction is not confident");
            }
        }
        Scenario::ExactFact => {
            if !s.bias_tags.is_empty() {
                return fail("exact-fact sample has bias tags");
            }
            if !is_memorized(s.popularity, popularity_threshold) {
                return fail("exact-fact subject is not popular");
            }
            if !s.gold.as_deref().is_some_and(|g| gold_matches(&s.prediction, g)) {
                return fail("exact-fact prediction is incorrect");
            }
            if recount()?.is_none_or(|c| c < confidence_threshold) {
                return fail("exact-fact prediction is not confident");
            }
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::TsvPopularity;
    use crate::runner::{Match, ScriptedModel};

    fn filler() -> Vec<String> {
        ["the", "a", "with", "and", "of", "to", "in", "for", "on", "at", "by", "from"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    fn facts(rows: &[(&str, &str, &str)]) -> Vec<FactTuple> {
        rows.iter()
            .map(|(r, s, o)| FactTuple {
                relation: r.to_string(),
                subject: s.to_string(),
                object: o.to_string(),
            })
            .collect()
    }

    #[test]
    fn guesswork_keeps_single_template_answers() {
        let model = ScriptedModel::new(filler())
            .rule(Match::Exact("Joseph Clay was originally from".into()), &["Ohio", "the"])
            .rule(Match::Exact("Joseph Clay is originally from".into()), &["Texas", "the"])
            .rule(Match::Exact("Joseph Clay originated from".into()), &["Texas"]);
        let tuples = facts(&[
            ("P19", "Joseph Clay", "Philadelphia"),
            ("P19", "A", "Ohio"),
            ("P19", "B", "Texas"),
            ("P19", "Shibuya", "Ohio"),
        ]);
        let pop = TsvPopularity::parse("Joseph Clay\t273\nShibuya\t5933\n").unwrap();
        let ctx = BuildContext::new(&model);
        let (samples, log) = build_guesswork(&ctx, &tuples, &facts::answer_sets(&tuples), &pop).unwrap();
        let clay: Vec<_> = samples.iter().filter(|s| s.subject == "Joseph Clay").collect();
        assert_eq!(clay.len(), 1);
        assert_eq!(clay[0].prediction, "Ohio");
        assert_eq!(clay[0].popularity, Some(273));
        assert_eq!(clay[0].gold.as_deref(), Some("Philadelphia"));
        assert!(samples.iter().all(|s| s.subject != "Shibuya"));
        assert_eq!(log["discard_popular_subject"], 1);
        assert!(log["discard_count_not_1"] >= 2);
    }

    #[test]
    fn assembly_counts_and_errors() {
        let mk = |i: usize| ScenarioSample {
            scenario: Scenario::Guesswork,
            relation_id: None,
            template_id: Some(i),
            prompt: String::new(),
            subject: format!("s{i}"),
            subject_char_span: 0..1,
            prediction: String::new(),
            prediction_rank: 1,
            prediction_prob: i as f64 / 10.0,
            gold: None,
            confidence_count: Some(1),
            popularity: Some(0),
            bias_tags: BTreeSet::new(),
            style: None,
            traced_token: 0,
            per_template_topk: None,
        };
        let splits: BTreeMap<_, _> = [(Scenario::Guesswork, (0..10).map(mk).collect::<Vec<_>>())].into_iter().collect();
        let mix: BTreeMap<_, _> = [(Scenario::Guesswork, 4)].into_iter().collect();
        let a = assemble_dataset(&splits, &mix, 1, None).unwrap();
        assert_eq!(a.len(), 4);
        assert_eq!(a, assemble_dataset(&splits, &mix, 1, None).unwrap());
        assert!(a.windows(2).all(|w| w[0].template_id < w[1].template_id));
        let top = assemble_dataset(&splits, &mix, 1, Some(Stratify::Top)).unwrap();
        assert_eq!(top.iter().map(|s| s.template_id.unwrap()).collect::<Vec<_>>(), vec![6, 7, 8, 9]);
        let too_many: BTreeMap<_, _> = [(Scenario::Generic, 1)].into_iter().collect();
        match assemble_dataset(&splits, &too_many, 1, None) {
            Err(Error::SplitTooSmall { scenario, requested: 1, available: 0 }) => assert_eq!(scenario, "generic"),
            other => panic!("{other:?}"),
        }
        let bytes = dataset_bytes(&[], 1, BTreeMap::new()).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert_eq!(text.lines().count(), 1);
        let (h, rows) = parse_dataset(&text).unwrap();
        assert!(h.is_some() && rows.is_empty());
    }

    #[test]
    fn generic_builder_exhaustion() {
        let model = ScriptedModel::new(filler());
        let corpus = vec![CorpusEntry {
            title: "Nara".into(),
            sentences: vec!["Early life".into(), "Nara also enjoyed success in singles.".into()],
        }];
        let (s, log) = build_generic(&model, &corpus, 1).unwrap();
        assert_eq!(s[0].prompt, "Nara also enjoyed success in");
        assert_eq!(s[0].gold.as_deref(), Some("singles"));
        assert_eq!(log["discard_too_short"], 1);
        assert!(matches!(
            build_generic(&model, &corpus, 2),
            Err(Error::CorpusExhausted { requested: 2, found: 1 })
        ));
    }
}
