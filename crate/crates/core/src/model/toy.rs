// SPDX-License-Identifier: MIT OR Apache-2.0

//! Seeded toy weight bundles.
//!
//! [`random_bundle`] draws every tensor from scaled Gaussians. [`planted_fact_model`]
//! builds a 3-layer model whose layer-1 MLP stores a subject to object lookup:
//!
//! - last-name tokens carry a balanced ±1 code in dims `0..8`; every other
//!   token carries a balanced ±1 pattern in dims `50..64`;
//! - MLP unit `j` of layer 1 fires only on the code of fact `j` and writes a
//!   large value into the object dim of its answer (dims `40..50`);
//! - the layer-2 attention is uniform over the causal prefix and copies the
//!   object dims to the last position, where the unembedding reads them.
//!
//! All other blocks are zero, so the lookup lives in exactly one MLP.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use super::tokenizer::UNK_TOKEN;
use super::weights::{BlockWeights, LayerNormParams, NamedTensor, WeightBundle};

/// 2 layers, d_model 64, 4 heads, vocab 256, context 32.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        d_model: 64,
        n_heads: 4,
        d_mlp: 128,
        vocab_size: 256,
        max_seq_len: 32,
        layernorm_epsilon: 1e-5,
    }
}

/// Vocabulary `<unk>, tok1, tok2, ...` of the requested size.
pub fn numbered_vocab(size: usize) -> Vec<String> {
    (0..size)
        .map(|i| if i == 0 { UNK_TOKEN.to_string() } else { format!("tok{i}") })
        .collect()
}

/// Gaussian weights. Output logits are peaked enough that the clean top-1
/// token is well separated on most prompts.
pub fn random_bundle(config: &ModelConfig, seed: u64) -> WeightBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = config.d_model as f64;
    let tensors = config
        .tensor_manifest()
        .into_iter()
        .map(|(name, shape)| {
            let numel: usize = shape.iter().product();
            let data: Vec<f64> = if name.ends_with("ln_1.weight")
                || name.ends_with("ln_2.weight")
                || name == "ln_f.weight"
            {
                vec![1.0; numel]
            } else {
                let std = if name == "wte" {
                    1.0
                } else if name == "wpe" {
                    0.5
                } else if name.ends_with(".bias") {
                    0.02
                } else if name == "unembed" {
                    0.35
                } else if name.contains("mlp.c_proj") {
                    1.0 / (config.d_mlp as f64).sqrt()
                } else {
                    1.0 / d.sqrt()
                };
                let normal = Normal::new(0.0, std).expect("positive std");
                (0..numel).map(|_| normal.sample(&mut rng)).collect()
            };
            NamedTensor { name, shape, data }
        })
        .collect();
    WeightBundle::from_tensors(config.clone(), numbered_vocab(config.vocab_size), tensors)
        .expect("manifest built from config")
}

/// Relation the planted facts instantiate.
pub const PLANTED_RELATION: &str = "P1376";
/// Layer whose MLP stores the lookup.
pub const PLANTED_LAYER: usize = 1;

const CODE_DIMS: std::ops::Range<usize> = 0..8;
const OBJECT_DIMS: std::ops::Range<usize> = 40..50;
const PATTERN_DIMS: std::ops::Range<usize> = 50..64;

/// Written into the object dim by a firing unit.
const LOOKUP_GAIN: f64 = 100.0;
const COPY_GAIN: f64 = 50.0;
const UNEMBED_GAIN: f64 = 4.0;

const FIRST_NAMES: [&str; 5] = ["Aldo", "Bera", "Corin", "Dessa", "Elmo"];
const OBJECTS: [&str; 10] = [
    "Arvenia", "Belmora", "Cadrisk", "Dunmarch", "Estoval", "Ferrolia", "Galdane", "Hesperon",
    "Ithmark", "Jorvanth",
];
const SYLLABLES: [&str; 12] = [
    "vor", "kel", "dan", "mir", "tas", "lun", "bre", "sol", "gar", "nim", "ost", "ruv",
];
/// Template and probe words, so every prompt for the relation tokenizes
/// without unknown pieces.
const FUNCTION_WORDS: [&str; 24] = [
    ",", ":", ".", "is", "the", "capital", "city", "of", "that", "It", "The", "He", "She",
    "His", "Her", "Its", "a", "common", "name", "in", "following", "country", "organisation",
    "'s",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlantedFact {
    pub subject: String,
    pub object: String,
}

#[derive(Debug, Clone)]
pub struct PlantedModel {
    pub weights: WeightBundle,
    pub facts: Vec<PlantedFact>,
}

/// Build the planted-fact model with `n_facts` facts (at most 70, the number
/// of balanced 8-bit codes).
pub fn planted_fact_model(n_facts: usize, seed: u64) -> PlantedModel {
    let codes = balanced_codes(CODE_DIMS.len());
    assert!(n_facts <= codes.len(), "at most {} planted facts", codes.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut last_names: Vec<String> = Vec::new();
    for a in SYLLABLES {
        for b in SYLLABLES {
            if a != b {
                let mut name = capitalize(a);
                name.push_str(b);
                last_names.push(name);
            }
        }
    }
    last_names.shuffle(&mut rng);
    last_names.truncate(n_facts);

    let mut code_order: Vec<usize> = (0..codes.len()).collect();
    code_order.shuffle(&mut rng);

    let facts: Vec<PlantedFact> = last_names
        .iter()
        .enumerate()
        .map(|(j, last)| PlantedFact {
            subject: format!("{} {last}", FIRST_NAMES[j % FIRST_NAMES.len()]),
            object: OBJECTS[(j * 7 + 3) % OBJECTS.len()].to_string(),
        })
        .collect();

    let config = ModelConfig {
        n_layers: 3,
        d_model: 64,
        n_heads: 4,
        d_mlp: n_facts.max(1),
        vocab_size: 256,
        max_seq_len: 16,
        layernorm_epsilon: 1e-5,
    };
    let d = config.d_model;

    let mut vocab: Vec<String> = vec![UNK_TOKEN.to_string()];
    vocab.extend(FUNCTION_WORDS.iter().map(|s| s.to_string()));
    vocab.extend(FIRST_NAMES.iter().map(|s| s.to_string()));
    let last_base = vocab.len();
    vocab.extend(last_names.iter().cloned());
    let object_base = vocab.len();
    vocab.extend(OBJECTS.iter().map(|s| s.to_string()));
    let mut k = 0;
    while vocab.len() < config.vocab_size {
        vocab.push(format!("w{k}"));
        k += 1;
    }

    let mut wte = Array2::<f64>::zeros((config.vocab_size, d));
    let pattern_codes = balanced_codes(PATTERN_DIMS.len());
    for (id, _) in vocab.iter().enumerate() {
        if (last_base..object_base).contains(&id) {
            let code = &codes[code_order[id - last_base]];
            for (k, &c) in code.iter().enumerate() {
                wte[[id, CODE_DIMS.start + k]] = c;
            }
        } else {
            let pattern = &pattern_codes[rng_index(&mut rng, pattern_codes.len())];
            for (k, &c) in pattern.iter().enumerate() {
                wte[[id, PATTERN_DIMS.start + k]] = c;
            }
        }
    }
    let wpe = Array2::<f64>::zeros((config.max_seq_len, d));

    let mut blocks: Vec<BlockWeights> = (0..config.n_layers).map(|_| zero_block(&config)).collect();

    // Layer 1 MLP: unit j matches code j after layernorm. A code has 8 entries
    // of ±1 and zeros elsewhere, so layernorm scales it by 1/sigma with
    // sigma = sqrt(8/64). Distinct balanced codes overlap by at most 4.
    let sigma = (CODE_DIMS.len() as f64 / d as f64).sqrt();
    let matched = CODE_DIMS.len() as f64 / sigma;
    let rival = (CODE_DIMS.len() as f64 - 4.0) / sigma;
    let threshold = 0.5 * (matched + rival);
    let fire = super::forward::gelu(matched - threshold);
    let lookup = &mut blocks[PLANTED_LAYER];
    for (j, fact) in facts.iter().enumerate() {
        let code = &codes[code_order[j]];
        for (k, &c) in code.iter().enumerate() {
            lookup.mlp_in_w[[CODE_DIMS.start + k, j]] = c;
        }
        lookup.mlp_in_b[j] = -threshold;
        let obj = OBJECTS.iter().position(|o| *o == fact.object).expect("object listed");
        lookup.mlp_out_w[[j, OBJECT_DIMS.start + obj]] = LOOKUP_GAIN / fire;
    }

    // Layer 2 attention: zero queries and keys give uniform causal attention;
    // values copy the object dims.
    let copy = &mut blocks[PLANTED_LAYER + 1];
    for k in OBJECT_DIMS {
        copy.attn_qkv_w[[k, 2 * d + k]] = 1.0;
        copy.attn_out_w[[k, k]] = COPY_GAIN;
    }

    let mut unembed = Array2::<f64>::zeros((d, config.vocab_size));
    for (obj, k) in OBJECT_DIMS.enumerate() {
        unembed[[k, object_base + obj]] = UNEMBED_GAIN;
    }

    let partial = WeightBundleParts {
        config,
        vocab,
        wte,
        wpe,
        blocks,
        ln_f: unit_ln(d),
        unembed,
    };
    PlantedModel {
        weights: partial.build(),
        facts,
    }
}

/// Plain parts assembled through [`WeightBundle::from_tensors`] so that the
/// checksum and f32 rounding match a file round trip.
struct WeightBundleParts {
    config: ModelConfig,
    vocab: Vec<String>,
    wte: Array2<f64>,
    wpe: Array2<f64>,
    blocks: Vec<BlockWeights>,
    ln_f: LayerNormParams,
    unembed: Array2<f64>,
}

impl WeightBundleParts {
    fn build(self) -> WeightBundle {
        let flat2 = |a: &Array2<f64>| a.iter().copied().collect::<Vec<_>>();
        let mut data: Vec<Vec<f64>> = vec![flat2(&self.wte), flat2(&self.wpe)];
        for b in &self.blocks {
            data.push(b.ln_1.weight.to_vec());
            data.push(b.ln_1.bias.to_vec());
            data.push(flat2(&b.attn_qkv_w));
            data.push(b.attn_qkv_b.to_vec());
            data.push(flat2(&b.attn_out_w));
            data.push(b.attn_out_b.to_vec());
            data.push(b.ln_2.weight.to_vec());
            data.push(b.ln_2.bias.to_vec());
            data.push(flat2(&b.mlp_in_w));
            data.push(b.mlp_in_b.to_vec());
            data.push(flat2(&b.mlp_out_w));
            data.push(b.mlp_out_b.to_vec());
        }
        data.push(self.ln_f.weight.to_vec());
        data.push(self.ln_f.bias.to_vec());
        data.push(flat2(&self.unembed));
        let tensors = self
            .config
            .tensor_manifest()
            .into_iter()
            .zip(data)
            .map(|((name, shape), data)| NamedTensor { name, shape, data })
            .collect();
        WeightBundle::from_tensors(self.config, self.vocab, tensors).expect("shapes from config")
    }
}

fn unit_ln(d: usize) -> LayerNormParams {
    LayerNormParams {
        weight: Array1::ones(d),
        bias: Array1::zeros(d),
    }
}

fn zero_block(cfg: &ModelConfig) -> BlockWeights {
    let d = cfg.d_model;
    BlockWeights {
        ln_1: unit_ln(d),
        attn_qkv_w: Array2::zeros((d, 3 * d)),
        attn_qkv_b: Array1::zeros(3 * d),
        attn_out_w: Array2::zeros((d, d)),
        attn_out_b: Array1::zeros(d),
        ln_2: unit_ln(d),
        mlp_in_w: Array2::zeros((d, cfg.d_mlp)),
        mlp_in_b: Array1::zeros(cfg.d_mlp),
        mlp_out_w: Array2::zeros((cfg.d_mlp, d)),
        mlp_out_b: Array1::zeros(d),
    }
}

/// All ±1 vectors of even length `n` with exactly `n / 2` positive entries,
/// in lexicographic bit order.
fn balanced_codes(n: usize) -> Vec<Vec<f64>> {
    (0u32..1 << n)
        .filter(|m| m.count_ones() as usize == n / 2)
        .map(|m| (0..n).map(|k| if m >> k & 1 == 1 { 1.0 } else { -1.0 }).collect())
        .collect()
}

fn rng_index(rng: &mut ChaCha8Rng, n: usize) -> usize {
    use rand::Rng;
    rng.random_range(0..n)
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::forward::forward_with_capture;
    use crate::model::tokenizer::{Tokenizer, WordTokenizer};

    #[test]
    fn planted_model_answers_every_fact() {
        let m = planted_fact_model(50, 11);
        let tok = WordTokenizer::new(m.weights.vocab.clone());
        for f in &m.facts {
            let seq = tok.encode(&format!("{} is the capital of", f.subject)).unwrap();
            assert!(!seq.token_ids.contains(&0), "{} has unknown pieces", f.subject);
            let t = forward_with_capture(&m.weights, &seq).unwrap();
            assert_eq!(tok.decode_token(t.top_token()), f.object);
            assert!(t.next_token_probs()[t.top_token() as usize] > 0.99);
        }
    }

    #[test]
    fn planted_subjects_are_distinct_and_share_no_fragment_with_objects() {
        let m = planted_fact_model(50, 11);
        let mut subjects: Vec<&str> = m.facts.iter().map(|f| f.subject.as_str()).collect();
        subjects.sort();
        subjects.dedup();
        assert_eq!(subjects.len(), 50);
        for f in &m.facts {
            for o in OBJECTS {
                assert!(!f.subject.contains(o) && !o.contains(f.subject.as_str()));
            }
        }
        let first_object = m.weights.vocab.iter().position(|v| v == OBJECTS[0]).unwrap();
        assert!(first_object >= 10);
    }

    #[test]
    fn balanced_code_count() {
        assert_eq!(balanced_codes(8).len(), 70);
        assert!(balanced_codes(8).iter().all(|c| c.iter().sum::<f64>() == 0.0));
    }

    #[test]
    fn random_bundle_is_seeded() {
        let cfg = tiny_config();
        assert_eq!(random_bundle(&cfg, 4), random_bundle(&cfg, 4));
        assert_ne!(random_bundle(&cfg, 4).checksum(), random_bundle(&cfg, 5).checksum());
    }
}
