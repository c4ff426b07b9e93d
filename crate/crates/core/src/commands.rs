// SPDX-License-Identifier: MIT OR Apache-2.0

//! Pipeline commands: dataset building, tracing, aggregation, audits,
//! importers and toy weight generation. Every output written here is a pure
//! function of the config, the input files and the seed.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aggregation::{
    aggregate, bin_positions, heatmap, peak_significance, write_heatmap_csv, write_lineplot_csv, Aggregate,
    AiePoint, BinnedGrid, TokenBin,
};
use crate::audit::{import_counterfact, run_audit, token_range_for, AuditContext, AuditReport, AuditRow};
use crate::config::RunConfig;
use crate::diagnostics::{FactQuery, PopularitySource, TsvPopularity, RELATIONS};
use crate::error::{Error, Result};
use crate::model::toy::{planted_fact_model, random_bundle, tiny_config, PLANTED_RELATION};
use crate::model::{tokenize_with_subject, Component, Tokenizer, WeightBundle, WordTokenizer};
use crate::runner::{LanguageModel, TransformerRunner};
use crate::scenario::corpus::import_pages_jsonl;
use crate::scenario::facts::{answer_sets, import_lama_jsonl, to_fact_tsv};
use crate::scenario::names::{generate_synthetic_subjects, EntityChecker, NameStyle};
use crate::scenario::{
    assemble_dataset, build_exact_fact, build_generic, build_guesswork, build_heuristics, write_dataset, BuildContext,
    BuildLog, CorpusEntry, FactTuple, Scenario, ScenarioSample, Stratify,
};
use crate::tracing::{calibrate_noise, trace_grid, write_grid_csv, read_grid_csv, TraceGrid, TraceOptions, TraceTarget};

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

/// Inputs for [`build_dataset`]. Which are required depends on the
/// selected scenarios.
#[derive(Default)]
pub struct BuildInputs {
    pub facts: Vec<FactTuple>,
    pub popularity: Option<Box<dyn PopularitySource>>,
    pub corpus: Vec<CorpusEntry>,
    pub entities: Option<Box<dyn EntityChecker>>,
    /// Synthetic subjects generated per relation.
    pub synthetic_per_relation: usize,
    pub n_generic: usize,
    pub mixture: Option<BTreeMap<Scenario, usize>>,
    pub stratify: Option<Stratify>,
}

#[derive(Debug, Clone, Default)]
pub struct BuildOutput {
    pub splits: BTreeMap<Scenario, Vec<ScenarioSample>>,
    pub dataset: Vec<ScenarioSample>,
    pub logs: BTreeMap<Scenario, BuildLog>,
    pub unexplained_confident: Vec<ScenarioSample>,
}

/// Rejects fact subjects in addition to the wrapped checker's labels so
/// synthetic subjects never coincide with a real one.
struct ExcludingChecker<'a> {
    inner: &'a dyn EntityChecker,
    known: HashSet<String>,
}

impl EntityChecker for ExcludingChecker<'_> {
    fn exists(&self, label: &str) -> Result<bool> {
        Ok(self.known.contains(label) || self.inner.exists(label)?)
    }
}

fn mix_seed(seed: u64, k: u64) -> u64 {
    seed ^ k.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// (subject, template, prediction) triples found in more than one split.
pub fn split_overlaps(splits: &BTreeMap<Scenario, Vec<ScenarioSample>>) -> Vec<(String, Option<usize>, String)> {
    let mut seen: BTreeMap<(String, Option<usize>, String), Scenario> = BTreeMap::new();
    let mut out = BTreeSet::new();
    for (&scenario, samples) in splits {
        for s in samples {
            let t = s.triple();
            match seen.get(&t) {
                Some(&other) if other != scenario => {
                    out.insert(t);
                }
                Some(_) => {}
                None => {
                    seen.insert(t, scenario);
                }
            }
        }
    }
    out.into_iter().collect()
}

fn require<'a, T: ?Sized>(v: Option<&'a T>, what: &str, scenario: Scenario) -> Result<&'a T> {
    v.ok_or_else(|| Error::InvalidInput(format!("{scenario} needs {what}")))
}

pub fn build_dataset(
    config: &RunConfig,
    model: &dyn LanguageModel,
    selector: &[Scenario],
    inputs: &BuildInputs,
) -> Result<BuildOutput> {
    config.validate()?;
    let ctx = BuildContext {
        model,
        topk_confidence: config.topk_confidence,
        topk_bias: config.topk_bias,
        confidence_threshold: config.confidence_threshold,
        popularity_threshold: config.popularity_threshold,
    };
    let answers = answer_sets(&inputs.facts);
    let selected: BTreeSet<Scenario> = selector.iter().copied().collect();
    let mut out = BuildOutput::default();
    for scenario in selected {
        let (samples, log) = match scenario {
            Scenario::Generic => {
                if inputs.corpus.is_empty() {
                    return Err(Error::InvalidInput("generic needs a corpus".into()));
                }
                build_generic(model, &inputs.corpus, inputs.n_generic)?
            }
            Scenario::Guesswork => {
                if inputs.facts.is_empty() {
                    return Err(Error::InvalidInput("guesswork needs fact tuples".into()));
                }
                let pop = require(inputs.popularity.as_deref(), "popularity records", scenario)?;
                build_guesswork(&ctx, &inputs.facts, &answers, pop)?
            }
            Scenario::ExactFact => {
                if inputs.facts.is_empty() {
                    return Err(Error::InvalidInput("exact_fact needs fact tuples".into()));
                }
                let pop = require(inputs.popularity.as_deref(), "popularity records", scenario)?;
                build_exact_fact(&ctx, &inputs.facts, pop)?
            }
            Scenario::Heuristics => {
                if answers.is_empty() {
                    return Err(Error::InvalidInput("heuristics needs fact tuples for answer sets".into()));
                }
                let inner = require(inputs.entities.as_deref(), "an entity checker", scenario)?;
                let checker = ExcludingChecker {
                    inner,
                    known: inputs.facts.iter().map(|f| f.subject.clone()).collect(),
                };
                let mut subjects = Vec::new();
                for (k, rel) in RELATIONS.iter().enumerate() {
                    if !answers.contains_key(*rel) {
                        continue;
                    }
                    let styles = NameStyle::for_relation(rel)?;
                    let names = generate_synthetic_subjects(
                        styles,
                        inputs.synthetic_per_relation,
                        &checker,
                        mix_seed(config.seed, k as u64),
                    )?;
                    subjects.extend(names.into_iter().map(|n| (rel.to_string(), n)));
                }
                let h = build_heuristics(&ctx, &subjects, &answers)?;
                out.unexplained_confident = h.unexplained_confident;
                (h.samples, h.log)
            }
        };
        out.splits.insert(scenario, samples);
        out.logs.insert(scenario, log);
    }
    let overlaps = split_overlaps(&out.splits);
    if !overlaps.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} (subject, template, prediction) triples fall in two scenarios",
            overlaps.len()
        )));
    }
    out.dataset = match &inputs.mixture {
        Some(mix) => assemble_dataset(&out.splits, mix, config.seed, inputs.stratify)?,
        None => out.splits.values().flatten().cloned().collect(),
    };
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BuildManifest {
    pub config: RunConfig,
    pub scenarios: Vec<Scenario>,
    pub split_sizes: BTreeMap<Scenario, usize>,
    pub dataset_size: usize,
    pub logs: BTreeMap<Scenario, BuildLog>,
    pub unexplained_confident: usize,
}

/// Build, then write the dataset JSONL, `<stem>.log.json` and, when
/// non-empty, `<stem>.unexplained.jsonl` next to it.
pub fn cmd_build_dataset(
    config: &RunConfig,
    model: &dyn LanguageModel,
    selector: &[Scenario],
    inputs: &BuildInputs,
    out: &Path,
) -> Result<BuildManifest> {
    let built = build_dataset(config, model, selector, inputs)?;
    let meta: BTreeMap<String, serde_json::Value> =
        [("config".to_string(), serde_json::to_value(config)?)].into_iter().collect();
    write_dataset(out, &built.dataset, config.seed, meta)?;
    let manifest = BuildManifest {
        config: config.clone(),
        scenarios: built.splits.keys().copied().collect(),
        split_sizes: built.splits.iter().map(|(k, v)| (*k, v.len())).collect(),
        dataset_size: built.dataset.len(),
        logs: built.logs,
        unexplained_confident: built.unexplained_confident.len(),
    };
    crate::io::write_atomic(&sibling(out, "log.json"), &json_bytes(&manifest)?)?;
    if !built.unexplained_confident.is_empty() {
        crate::io::write_atomic(
            &sibling(out, "unexplained.jsonl"),
            &crate::io::to_jsonl(&built.unexplained_confident)?,
        )?;
    }
    Ok(manifest)
}

fn sibling(path: &Path, suffix: &str) -> std::path::PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
    path.with_file_name(format!("{stem}.{suffix}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracedRow {
    pub row: usize,
    /// Grid file, relative to the manifest.
    pub grid: String,
    pub prompt: String,
    pub n_tokens: usize,
    pub subject_token_span: Range<usize>,
    /// Clean-run top-1 token, the one actually traced.
    pub traced_token: u32,
    pub traced_text: String,
    /// Token recorded in the dataset row, when it differs from the traced one.
    pub dataset_token: Option<u32>,
    pub p_clean: f64,
    pub te: f64,
    pub zero_te: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedRow {
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceManifest {
    pub config: RunConfig,
    pub weights_checksum: String,
    pub noise_sigma: f64,
    pub components: Vec<Component>,
    pub rows: Vec<TracedRow>,
    /// Rows whose total effect is zero, excluded from normalized aggregates.
    pub zero_te_excluded: Vec<usize>,
    pub skipped: Vec<SkippedRow>,
}

pub const TRACE_MANIFEST: &str = "manifest.json";

fn skippable(e: &Error) -> bool {
    matches!(
        e,
        Error::Tokenize(_) | Error::SequenceTooLong { .. } | Error::DegenerateTarget(_)
    )
}

/// Trace every row of `samples`; returns grids with their manifest entries.
pub fn trace_samples(
    config: &RunConfig,
    weights: &WeightBundle,
    tokenizer: &dyn Tokenizer,
    samples: &[ScenarioSample],
) -> Result<(TraceManifest, Vec<TraceGrid>)> {
    config.validate()?;
    let mut tokenized = Vec::new();
    let mut skipped = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        match tokenize_with_subject(tokenizer, &s.prompt, s.subject_char_span.clone()) {
            Ok((seq, span)) if seq.len() <= weights.config.max_seq_len => tokenized.push((i, seq, span)),
            Ok((seq, _)) => skipped.push(SkippedRow {
                row: i,
                reason: format!("{} tokens exceed the context of {}", seq.len(), weights.config.max_seq_len),
            }),
            Err(e) if skippable(&e) => skipped.push(SkippedRow { row: i, reason: e.to_string() }),
            Err(e) => return Err(e),
        }
    }
    let noise_sigma = if tokenized.is_empty() {
        0.0
    } else {
        let subjects: Vec<Vec<u32>> = tokenized
            .iter()
            .map(|(_, seq, span)| seq.token_ids[span.clone()].to_vec())
            .collect();
        calibrate_noise(weights, &subjects, config.noise_multiplier)?
    };
    let options = TraceOptions {
        components: Component::ALL.to_vec(),
        window_radius: config.window_radius,
    };
    let mut rows = Vec::new();
    let mut grids = Vec::new();
    let mut zero_te_excluded = Vec::new();
    for (i, seq, span) in tokenized {
        let n_tokens = seq.len();
        let target = match TraceTarget::from_clean_prediction(
            weights,
            seq,
            span.clone(),
            config.n_noise_runs,
            noise_sigma,
            mix_seed(config.seed, i as u64),
        ) {
            Ok(t) => t,
            Err(e) if skippable(&e) => {
                skipped.push(SkippedRow { row: i, reason: e.to_string() });
                continue;
            }
            Err(e) => return Err(e),
        };
        let grid = match trace_grid(weights, tokenizer, &target, &options) {
            Ok(g) => g,
            Err(e) if skippable(&e) => {
                skipped.push(SkippedRow { row: i, reason: e.to_string() });
                continue;
            }
            Err(e) => return Err(e),
        };
        if grid.is_zero_te() {
            zero_te_excluded.push(i);
        }
        let recorded = samples[i].traced_token;
        rows.push(TracedRow {
            row: i,
            grid: format!("grids/row_{i:05}.csv"),
            prompt: samples[i].prompt.clone(),
            n_tokens,
            subject_token_span: span,
            traced_token: target.traced_token,
            traced_text: tokenizer.decode_token(target.traced_token),
            dataset_token: (recorded != target.traced_token).then_some(recorded),
            p_clean: grid.p_clean,
            te: grid.te,
            zero_te: grid.is_zero_te(),
        });
        grids.push(grid);
    }
    skipped.sort_by_key(|s| s.row);
    let manifest = TraceManifest {
        config: config.clone(),
        weights_checksum: weights.checksum().to_string(),
        noise_sigma,
        components: options.components,
        rows,
        zero_te_excluded,
        skipped,
    };
    Ok((manifest, grids))
}

/// Trace a dataset file into `out_dir/grids/*.csv` plus `out_dir/manifest.json`.
pub fn cmd_trace(config: &RunConfig, weights: &WeightBundle, dataset: &Path, out_dir: &Path) -> Result<TraceManifest> {
    let (_, samples) = crate::scenario::read_dataset(dataset)?;
    let tokenizer = WordTokenizer::new(weights.vocab.clone());
    let (manifest, grids) = trace_samples(config, weights, &tokenizer, &samples)?;
    for (row, grid) in manifest.rows.iter().zip(&grids) {
        let mut buf = Vec::new();
        write_grid_csv(grid, &mut buf)?;
        crate::io::write_atomic(&out_dir.join(&row.grid), &buf)?;
    }
    crate::io::write_atomic(&out_dir.join(TRACE_MANIFEST), &json_bytes(&manifest)?)?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSignificance {
    pub n_points: usize,
    /// The point whose interval lies above every other point's, if any.
    pub peak: Option<AiePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceReport {
    pub config: RunConfig,
    pub n_grids: usize,
    pub excluded_zero_te: usize,
    pub components: BTreeMap<Component, ComponentSignificance>,
}

/// Aggregate grids with their subject token spans.
pub fn aggregate_grids(
    config: &RunConfig,
    grids: &[(TraceGrid, Range<usize>)],
) -> Result<(Aggregate, SignificanceReport)> {
    let layers: BTreeSet<usize> = grids.iter().map(|(g, _)| g.n_layers()).collect();
    if layers.len() > 1 {
        return Err(Error::GridMismatch(format!("grids disagree on layer count: {layers:?}")));
    }
    let bins: Vec<Vec<TokenBin>> = grids
        .iter()
        .map(|(g, span)| bin_positions(g.n_positions(), span.clone()))
        .collect::<Result<_>>()?;
    let binned: Vec<BinnedGrid> = grids
        .iter()
        .zip(&bins)
        .map(|((grid, _), bins)| BinnedGrid { grid, bins })
        .collect();
    let agg = aggregate(&binned, config.normalized, config.ci_method())?;
    let mut components = BTreeMap::new();
    let present: BTreeSet<Component> = agg.points.iter().map(|p| p.component).collect();
    for c in present {
        let points = agg.component_points(c);
        let peak = if points.len() >= 2 {
            peak_significance(&points)?.into_iter().next()
        } else {
            None
        };
        components.insert(c, ComponentSignificance { n_points: points.len(), peak });
    }
    let report = SignificanceReport {
        config: config.clone(),
        n_grids: grids.len(),
        excluded_zero_te: agg.excluded_zero_te,
        components,
    };
    Ok((agg, report))
}

pub const LINEPLOT_CSV: &str = "lineplot.csv";
pub const SIGNIFICANCE_JSON: &str = "significance.json";
pub const HEATMAP_CSV: &str = "heatmap.csv";

/// Aggregate the grids listed in a trace manifest. Writes the line-plot
/// CSV, the significance report and a per-position heatmap.
pub fn cmd_aggregate(config: &RunConfig, manifest_path: &Path, out_dir: &Path) -> Result<SignificanceReport> {
    let manifest: TraceManifest = serde_json::from_str(&crate::io::read_to_string(manifest_path)?)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut grids = Vec::new();
    for row in &manifest.rows {
        let path = base.join(&row.grid);
        let file = std::fs::File::open(&path).map_err(|e| Error::io_at(&path, e))?;
        grids.push((read_grid_csv(file)?, row.subject_token_span.clone()));
    }
    let (agg, report) = aggregate_grids(config, &grids)?;
    let mut buf = Vec::new();
    write_lineplot_csv(&agg, &mut buf)?;
    crate::io::write_atomic(&out_dir.join(LINEPLOT_CSV), &buf)?;
    crate::io::write_atomic(&out_dir.join(SIGNIFICANCE_JSON), &json_bytes(&report)?)?;
    let refs: Vec<&TraceGrid> = grids.iter().map(|(g, _)| g).collect();
    let mut buf = Vec::new();
    write_heatmap_csv(&heatmap(&refs, config.normalized), &mut buf)?;
    crate::io::write_atomic(&out_dir.join(HEATMAP_CSV), &buf)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditFormat {
    /// Dataset JSONL written by `build-dataset`.
    Dataset,
    /// JSON array of CounterFact-style records.
    Counterfact,
}

pub fn load_audit_rows(path: &Path, format: AuditFormat) -> Result<Vec<AuditRow>> {
    Ok(match format {
        AuditFormat::Dataset => crate::scenario::read_dataset(path)?.1.iter().map(AuditRow::from).collect(),
        AuditFormat::Counterfact => import_counterfact(&crate::io::read_to_string(path)?)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditOutput {
    pub config: RunConfig,
    pub report: AuditReport,
}

/// Noise scale from the subject tokens of every row.
pub fn audit_noise_sigma(config: &RunConfig, weights: &WeightBundle, tokenizer: &dyn Tokenizer, rows: &[AuditRow]) -> Result<f64> {
    let mut subjects = Vec::new();
    for r in rows {
        let Some(span) = &r.subject_char_span else { continue };
        let Ok(seq) = tokenizer.encode(&r.prompt) else { continue };
        if let Some(t) = token_range_for(&seq.char_offsets, span) {
            subjects.push(seq.token_ids[t].to_vec());
        }
    }
    if subjects.is_empty() {
        return Ok(0.0);
    }
    calibrate_noise(weights, &subjects, config.noise_multiplier)
}

pub fn audit_rows(config: &RunConfig, weights: &WeightBundle, rows: &[AuditRow]) -> Result<AuditReport> {
    config.validate()?;
    let runner = TransformerRunner::from_bundle(weights.clone());
    let sigma = audit_noise_sigma(config, weights, runner.tokenizer.as_ref(), rows)?;
    let ctx = AuditContext {
        model: &runner,
        weights,
        tokenizer: runner.tokenizer.as_ref(),
        topk_bias: config.topk_bias,
        noise_sigma: sigma,
        seed: config.seed,
    };
    run_audit(rows, &ctx)
}

pub fn cmd_audit(
    config: &RunConfig,
    weights: &WeightBundle,
    input: &Path,
    format: AuditFormat,
    out: &Path,
) -> Result<AuditReport> {
    let rows = load_audit_rows(input, format)?;
    let report = audit_rows(config, weights, &rows)?;
    let output = AuditOutput { config: config.clone(), report };
    crate::io::write_atomic(out, &json_bytes(&output)?)?;
    Ok(output.report)
}

/// LAMA JSON lines to a fact TSV. Returns the number of tuples written.
pub fn cmd_import_facts(input: &Path, relation: Option<&str>, out: &Path) -> Result<usize> {
    let tuples = import_lama_jsonl(&crate::io::read_to_string(input)?, relation)?;
    crate::io::write_atomic(out, to_fact_tsv(&tuples).as_bytes())?;
    Ok(tuples.len())
}

/// Page JSON lines (`title`, `text`) to corpus JSON lines. Returns the
/// number of pages.
pub fn cmd_import_corpus(input: &Path, out: &Path) -> Result<usize> {
    let pages = import_pages_jsonl(&crate::io::read_to_string(input)?)?;
    crate::io::write_atomic(out, &crate::io::to_jsonl(&pages)?)?;
    Ok(pages.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum WeightKind {
    Planted { n_facts: usize },
    Random,
}

pub const WEIGHTS_FILE: &str = "weights.bin";
pub const FACTS_FILE: &str = "facts.tsv";
pub const POPULARITY_FILE: &str = "popularity.tsv";
pub const ENTITIES_FILE: &str = "entities.txt";
pub const PLANTED_DATASET_FILE: &str = "planted_dataset.jsonl";

/// Template of the planted prompts: "[X] is the capital city of".
pub const PLANTED_TEMPLATE: usize = 1;

/// One row per planted fact, ready for tracing.
pub fn planted_samples(weights: &WeightBundle, facts: &[FactTuple]) -> Result<Vec<ScenarioSample>> {
    let runner = TransformerRunner::from_bundle(weights.clone());
    facts
        .iter()
        .map(|f| {
            let q = FactQuery::new(&f.relation, PLANTED_TEMPLATE, &f.subject)?;
            let top = runner
                .top_k(&q.prompt, 1)?
                .into_iter()
                .next()
                .ok_or_else(|| Error::InvalidInput("empty prediction".into()))?;
            Ok(ScenarioSample {
                scenario: Scenario::ExactFact,
                relation_id: Some(q.relation_id.clone()),
                template_id: Some(q.template_id),
                prompt: q.prompt.clone(),
                subject: q.subject.clone(),
                subject_char_span: q.subject_char_span.clone(),
                prediction: top.token_text.trim().to_string(),
                prediction_rank: top.rank,
                prediction_prob: top.probability,
                gold: Some(f.object.clone()),
                confidence_count: None,
                popularity: None,
                bias_tags: BTreeSet::new(),
                style: None,
                traced_token: top.token_id,
                per_template_topk: None,
            })
        })
        .collect()
}

/// Write a seeded toy bundle. The planted kind also writes its facts,
/// popularity records (all above the default threshold), known entity labels
/// and a ready-to-trace dataset of one prompt per fact.
pub fn cmd_gen_weights(kind: WeightKind, seed: u64, out_dir: &Path) -> Result<WeightBundle> {
    match kind {
        WeightKind::Random => {
            let w = random_bundle(&tiny_config(), seed);
            w.save(&out_dir.join(WEIGHTS_FILE))?;
            Ok(w)
        }
        WeightKind::Planted { n_facts } => {
            let planted = planted_fact_model(n_facts, seed);
            planted.weights.save(&out_dir.join(WEIGHTS_FILE))?;
            let facts: Vec<FactTuple> = planted
                .facts
                .iter()
                .map(|f| FactTuple {
                    relation: PLANTED_RELATION.to_string(),
                    subject: f.subject.clone(),
                    object: f.object.clone(),
                })
                .collect();
            crate::io::write_atomic(&out_dir.join(FACTS_FILE), to_fact_tsv(&facts).as_bytes())?;
            let mut pop = TsvPopularity::default();
            for (j, f) in facts.iter().enumerate() {
                pop.insert(&f.subject, 5000 + 37 * j as u64);
            }
            crate::io::write_atomic(&out_dir.join(POPULARITY_FILE), pop.to_tsv().as_bytes())?;
            let mut labels: Vec<&str> = facts.iter().flat_map(|f| [f.subject.as_str(), f.object.as_str()]).collect();
            labels.sort_unstable();
            labels.dedup();
            let mut text = labels.join("\n");
            text.push('\n');
            crate::io::write_atomic(&out_dir.join(ENTITIES_FILE), text.as_bytes())?;
            let samples = planted_samples(&planted.weights, &facts)?;
            write_dataset(&out_dir.join(PLANTED_DATASET_FILE), &samples, seed, BTreeMap::new())?;
            Ok(planted.weights)
        }
    }
}
