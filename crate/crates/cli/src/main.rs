// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use prism_core::commands::{self, AuditFormat, BuildInputs, WeightKind};
use prism_core::config::{CiChoice, RunConfig};
use prism_core::diagnostics::{PageviewClient, PopularitySource, TsvPopularity};
use prism_core::model::{Component, WeightBundle};
use prism_core::runner::TransformerRunner;
use prism_core::scenario::names::{EntityChecker, LabelSet, WikidataChecker};
use prism_core::scenario::{facts, CorpusEntry, Scenario, Stratify};

#[derive(Parser)]
#[command(name = "prism", version, about = "Prediction-scenario datasets and causal tracing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags that override the config file.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// TOML run config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_noise_runs: Option<usize>,
    #[arg(long)]
    noise_multiplier: Option<f64>,
    #[arg(long)]
    confidence_threshold: Option<usize>,
    #[arg(long)]
    topk_confidence: Option<usize>,
    #[arg(long)]
    topk_bias: Option<usize>,
    #[arg(long)]
    popularity_threshold: Option<u64>,
    #[arg(long)]
    component: Option<Component>,
    #[arg(long)]
    window_radius: Option<usize>,
    #[arg(long)]
    normalized: Option<bool>,
    #[arg(long, value_enum)]
    ci: Option<CiArg>,
    #[arg(long)]
    bootstrap_resamples: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CiArg {
    Normal,
    Bootstrap,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f.clone() { c.$f = v; } )* };
        }
        set!(seed, n_noise_runs, noise_multiplier, confidence_threshold, topk_confidence, topk_bias,
             popularity_threshold, component, window_radius, normalized, bootstrap_resamples);
        if let Some(w) = &self.weights {
            c.weights_path = Some(w.clone());
        }
        if let Some(ci) = self.ci {
            c.ci = match ci {
                CiArg::Normal => CiChoice::Normal,
                CiArg::Bootstrap => CiChoice::Bootstrap,
            };
        }
        c.validate()?;
        Ok(c)
    }
}

fn load_weights(c: &RunConfig) -> Result<WeightBundle> {
    let path = c
        .weights_path
        .as_ref()
        .ok_or_else(|| anyhow!("no weights given (use --weights or weights_path in the config)"))?;
    WeightBundle::load(path).with_context(|| format!("loading weights from {}", path.display()))
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum ScenarioArg {
    Generic,
    Guesswork,
    Heuristics,
    ExactFact,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::Generic => Scenario::Generic,
            ScenarioArg::Guesswork => Scenario::Guesswork,
            ScenarioArg::Heuristics => Scenario::Heuristics,
            ScenarioArg::ExactFact => Scenario::ExactFact,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StratifyArg {
    Top,
    Bottom,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Dataset,
    Counterfact,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Planted,
    Random,
}

#[derive(Subcommand)]
enum Command {
    /// Build scenario splits and write a dataset JSONL.
    BuildDataset {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum, value_delimiter = ',', required = true)]
        scenarios: Vec<ScenarioArg>,
        /// relation<TAB>subject<TAB>object lines.
        #[arg(long)]
        facts: Option<PathBuf>,
        /// subject<TAB>views lines.
        #[arg(long)]
        popularity: Option<PathBuf>,
        /// Query the page-view service for this year instead of a file.
        #[arg(long, conflicts_with = "popularity")]
        pageviews_year: Option<u32>,
        /// Corpus JSONL from import-corpus.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Known entity labels, one per line.
        #[arg(long)]
        entities: Option<PathBuf>,
        /// Check synthetic names against the knowledge-base search service.
        #[arg(long, conflicts_with = "entities")]
        wikidata: bool,
        #[arg(long, default_value_t = 100)]
        n_synthetic: usize,
        #[arg(long, default_value_t = 1000)]
        n_generic: usize,
        /// Samples per scenario, e.g. `guesswork=100,exact_fact=100`.
        #[arg(long, value_delimiter = ',')]
        mix: Vec<String>,
        #[arg(long, value_enum)]
        stratify: Option<StratifyArg>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trace every dataset row into grid CSVs and a manifest.
    Trace {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Aggregate traced grids into AIE curves and a significance report.
    Aggregate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// manifest.json written by `trace`.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Audit a dataset for biases, popularity, total effects and negation.
    Audit {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "dataset")]
        format: FormatArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert LAMA JSON lines into a fact TSV.
    ImportFacts {
        #[arg(long)]
        input: PathBuf,
        /// Relation for lines without a predicate_id.
        #[arg(long)]
        relation: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert page JSON lines (title, text) into a sentence corpus.
    ImportCorpus {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a seeded toy weight bundle.
    GenWeights {
        #[arg(long, value_enum, default_value = "planted")]
        kind: KindArg,
        #[arg(long, default_value_t = 50)]
        n_facts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

const HTTP_TIMEOUT: Duration = Duration::from_secs(30);

fn parse_mix(items: &[String]) -> Result<Option<BTreeMap<Scenario, usize>>> {
    if items.is_empty() {
        return Ok(None);
    }
    let mut out = BTreeMap::new();
    for item in items {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| anyhow!("mix entry `{item}` is not scenario=count"))?;
        out.insert(k.trim().parse::<Scenario>()?, v.trim().parse::<usize>()?);
    }
    Ok(Some(out))
}

fn read_corpus(path: &Path) -> Result<Vec<CorpusEntry>> {
    Ok(prism_core::io::read_jsonl(path)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::BuildDataset {
            cfg,
            scenarios,
            facts: facts_path,
            popularity,
            pageviews_year,
            corpus,
            entities,
            wikidata,
            n_synthetic,
            n_generic,
            mix,
            stratify,
            out,
        } => {
            let c = cfg.resolve()?;
            let runner = TransformerRunner::from_bundle(load_weights(&c)?);
            let popularity: Option<Box<dyn PopularitySource>> = match (popularity, pageviews_year) {
                (Some(p), _) => Some(Box::new(TsvPopularity::load(&p)?)),
                (None, Some(y)) => Some(Box::new(PageviewClient::from_env(y, HTTP_TIMEOUT))),
                (None, None) => None,
            };
            let entities: Option<Box<dyn EntityChecker>> = match (entities, wikidata) {
                (Some(p), _) => Some(Box::new(LabelSet::parse(&prism_core::io::read_to_string(&p)?))),
                (None, true) => Some(Box::new(WikidataChecker::from_env(HTTP_TIMEOUT))),
                (None, false) => None,
            };
            let inputs = BuildInputs {
                facts: match facts_path {
                    Some(p) => facts::load_fact_tsv(&p)?,
                    None => Vec::new(),
                },
                popularity,
                corpus: match corpus {
                    Some(p) => read_corpus(&p)?,
                    None => Vec::new(),
                },
                entities,
                synthetic_per_relation: n_synthetic,
                n_generic,
                mixture: parse_mix(&mix)?,
                stratify: stratify.map(|s| match s {
                    StratifyArg::Top => Stratify::Top,
                    StratifyArg::Bottom => Stratify::Bottom,
                }),
            };
            let selector: Vec<Scenario> = scenarios.into_iter().map(Scenario::from).collect();
            let m = commands::cmd_build_dataset(&c, &runner, &selector, &inputs, &out)?;
            for (s, n) in &m.split_sizes {
                println!("{s}: {n}");
            }
            println!("wrote {} rows to {}", m.dataset_size, out.display());
        }
        Command::Trace { cfg, dataset, out_dir } => {
            let c = cfg.resolve()?;
            let w = load_weights(&c)?;
            let m = commands::cmd_trace(&c, &w, &dataset, &out_dir)?;
            println!(
                "traced {} rows ({} zero-TE, {} skipped) into {}",
                m.rows.len(),
                m.zero_te_excluded.len(),
                m.skipped.len(),
                out_dir.display()
            );
        }
        Command::Aggregate { cfg, manifest, out_dir } => {
            let c = cfg.resolve()?;
            let r = commands::cmd_aggregate(&c, &manifest, &out_dir)?;
            for (comp, s) in &r.components {
                match &s.peak {
                    Some(p) => println!("{comp}: significant peak at ({}, layer {}) aie {:.4}", p.bin, p.layer, p.aie),
                    None => println!("{comp}: no significant peak"),
                }
            }
        }
        Command::Audit { cfg, input, format, out } => {
            let c = cfg.resolve()?;
            let w = load_weights(&c)?;
            let format = match format {
                FormatArg::Dataset => AuditFormat::Dataset,
                FormatArg::Counterfact => AuditFormat::Counterfact,
            };
            let r = commands::cmd_audit(&c, &w, &input, format, &out)?;
            println!(
                "audited {} rows: {} bias-flagged, {} negative TE, {} low TE, {} negated",
                r.n_rows,
                r.bias_counts.flagged.len(),
                r.negative_te_samples.len(),
                r.low_te_samples.len(),
                r.negation_samples.len()
            );
        }
        Command::ImportFacts { input, relation, out } => {
            let n = commands::cmd_import_facts(&input, relation.as_deref(), &out)?;
            println!("wrote {n} fact tuples to {}", out.display());
        }
        Command::ImportCorpus { input, out } => {
            let n = commands::cmd_import_corpus(&input, &out)?;
            println!("wrote {n} pages to {}", out.display());
        }
        Command::GenWeights { kind, n_facts, seed, out_dir } => {
            let kind = match kind {
                KindArg::Planted => {
                    if n_facts == 0 || n_facts > 70 {
                        bail!("--n-facts must be between 1 and 70");
                    }
                    WeightKind::Planted { n_facts }
                }
                KindArg::Random => WeightKind::Random,
            };
            let w = commands::cmd_gen_weights(kind, seed, &out_dir)?;
            println!("wrote {} ({})", out_dir.join(commands::WEIGHTS_FILE).display(), w.checksum());
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
