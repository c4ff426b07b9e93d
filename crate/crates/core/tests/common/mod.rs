// SPDX-License-Identifier: MIT OR Apache-2.0

//! Shared test oracles and fixtures.

#![allow(dead_code)]

use std::ops::Range;

use prism_core::model::WeightBundle;
use prism_core::runner::{Match, ScriptedModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Reference forward pass written with plain loops over the bundle's
/// tensors. Returns final logits per position.
pub struct Scalar<'a> {
    pub w: &'a WeightBundle,
}

fn ln(x: &[f64], g: &[f64], b: &[f64], eps: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let mean: f64 = x.iter().sum::<f64>() / n;
    let var: f64 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    x.iter()
        .enumerate()
        .map(|(i, v)| (v - mean) / (var + eps).sqrt() * g[i] + b[i])
        .collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

/// `x · W + b` with `W` as `[in, out]`.
fn affine(x: &[f64], w: &ndarray::Array2<f64>, b: &ndarray::Array1<f64>) -> Vec<f64> {
    let (din, dout) = w.dim();
    let mut out = vec![0.0; dout];
    for j in 0..dout {
        let mut s = b[j];
        for i in 0..din {
            s += x[i] * w[[i, j]];
        }
        out[j] = s;
    }
    out
}

pub struct ScalarRun {
    pub logits: Vec<Vec<f64>>,
    pub mlp_out: Vec<Vec<Vec<f64>>>,
}

impl Scalar<'_> {
    /// `noise`: (span, sigma, seed) added to the embeddings, position-major.
    /// `ablate_mlp`: (layer, positions) whose MLP output is zeroed.
    pub fn run(
        &self,
        ids: &[u32],
        noise: Option<(Range<usize>, f64, u64)>,
        ablate_mlp: Option<(usize, &[usize])>,
    ) -> ScalarRun {
        let w = self.w;
        let cfg = &w.config;
        let (n, d) = (ids.len(), cfg.d_model);
        let mut x: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..d).map(|k| w.wte[[ids[i] as usize, k]] + w.wpe[[i, k]]).collect())
            .collect();
        if let Some((span, sigma, seed)) = noise {
            if sigma > 0.0 {
                let dist = Normal::new(0.0, sigma).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for row in &mut x[span] {
                    for v in row.iter_mut() {
                        *v += dist.sample(&mut rng);
                    }
                }
            }
        }
        let hd = d / cfg.n_heads;
        let mut mlp_out = Vec::new();
        for (l, b) in w.blocks.iter().enumerate() {
            let h: Vec<Vec<f64>> = x
                .iter()
                .map(|r| ln(r, b.ln_1.weight.as_slice().unwrap(), b.ln_1.bias.as_slice().unwrap(), cfg.layernorm_epsilon))
                .collect();
            let qkv: Vec<Vec<f64>> = h.iter().map(|r| affine(r, &b.attn_qkv_w, &b.attn_qkv_b)).collect();
            let mut z = vec![vec![0.0; d]; n];
            for head in 0..cfg.n_heads {
                for i in 0..n {
                    let mut s: Vec<f64> = (0..=i)
                        .map(|j| {
                            (0..hd).map(|k| qkv[i][head * hd + k] * qkv[j][d + head * hd + k]).sum::<f64>()
                                / (hd as f64).sqrt()
                        })
                        .collect();
                    let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    s.iter_mut().for_each(|v| *v = (*v - m).exp());
                    let tot: f64 = s.iter().sum();
                    for (j, p) in s.iter().enumerate() {
                        for k in 0..hd {
                            z[i][head * hd + k] += p / tot * qkv[j][2 * d + head * hd + k];
                        }
                    }
                }
            }
            for i in 0..n {
                let a = affine(&z[i], &b.attn_out_w, &b.attn_out_b);
                for k in 0..d {
                    x[i][k] += a[k];
                }
            }
            let mut layer_mlp = Vec::new();
            for i in 0..n {
                let h = ln(&x[i], b.ln_2.weight.as_slice().unwrap(), b.ln_2.bias.as_slice().unwrap(), cfg.layernorm_epsilon);
                let pre: Vec<f64> = affine(&h, &b.mlp_in_w, &b.mlp_in_b).into_iter().map(gelu).collect();
                let mut m = affine(&pre, &b.mlp_out_w, &b.mlp_out_b);
                if let Some((al, pos)) = ablate_mlp {
                    if al == l && pos.contains(&i) {
                        m = vec![0.0; d];
                    }
                }
                for k in 0..d {
                    x[i][k] += m[k];
                }
                layer_mlp.push(m);
            }
            mlp_out.push(layer_mlp);
        }
        let logits = x
            .iter()
            .map(|r| {
                let h = ln(r, w.ln_f.weight.as_slice().unwrap(), w.ln_f.bias.as_slice().unwrap(), cfg.layernorm_epsilon);
                let zero = ndarray::Array1::zeros(cfg.vocab_size);
                affine(&h, &w.unembed, &zero)
            })
            .collect();
        ScalarRun { logits, mlp_out }
    }

    /// Next-token probabilities after the last position.
    pub fn probs(&self, ids: &[u32], noise: Option<(Range<usize>, f64, u64)>) -> Vec<f64> {
        softmax(self.run(ids, noise, None).logits.last().unwrap())
    }
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn filler() -> Vec<String> {
    ["the", "a", "with", "and", "of", "to", "in", "for", "on", "at", "by", "from", "as", "into"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

/// Subject-independent P27 prompts (template suffixes after the subject).
pub const P27_SUFFIXES: [&str; 7] = [
    " is a citizen of",
    ", a citizen of",
    ", who is a citizen of",
    " holds a citizenship of",
    " has a citizenship of",
    ", who holds a citizenship of",
    ", who has a citizenship of",
];

/// A real subject answering `answer` on the first `k` P27 templates and
/// nothing fact-like elsewhere.
fn real_p27(m: &mut ScriptedModel, subject: &str, answer: &str, k: usize) {
    for s in &P27_SUFFIXES[..k] {
        m.push_rule(Match::Exact(format!("{subject}{s}")), vec![answer.to_string()]);
    }
}

/// Rigged model: per-subject lookups, a prompt-bias rule for citizenship
/// templates, a name-bias rule for birthplaces, and filler heads rotated by
/// a prompt hash everywhere else.
pub fn rigged_model() -> ScriptedModel {
    let mut m = ScriptedModel::new(filler());
    real_p27(&mut m, "Thomas Ong", "Singapore", 7);
    real_p27(&mut m, "Four Temps", "Peru", 4);
    real_p27(&mut m, "Five Temps", "Chile", 5);
    real_p27(&mut m, "Pop Thousand", "Norway", 7);
    real_p27(&mut m, "Pop Thousandone", "Sweden", 7);
    real_p27(&mut m, "Prefix Three", "Bed", 7);
    real_p27(&mut m, "Prefix Four", "Bedf", 7);
    real_p27(&mut m, "Giuseppe Angeli", "Italy", 7);
    m.push_rule(
        Match::Exact("Giuseppe Angeli is a common name in the following country:".into()),
        vec!["Italy".into()],
    );
    // Guesswork: France and Spain in one template each, Germany in two.
    m.push_rule(Match::Exact("Joseph Clay is a citizen of".into()), vec!["France".into()]);
    m.push_rule(
        Match::Exact("Joseph Clay holds a citizenship of".into()),
        vec!["Spain".into(), "Germany".into()],
    );
    m.push_rule(Match::Exact("Joseph Clay, who holds a citizenship of".into()), vec!["Germany".into()]);
    for s in [
        "Thomas Ong", "Four Temps", "Five Temps", "Pop Thousand", "Pop Thousandone", "Prefix Three",
        "Prefix Four", "Giuseppe Angeli", "Joseph Clay", "Lina Field", "Ivan Petrov",
    ] {
        m.push_rule(Match::Prefix(s.into()), vec![]);
    }
    m.push_rule(Match::Contains("citizen".into()), vec!["Canada".into()]);
    m.push_rule(Match::Prefix("He ".into()), vec![]);
    m.push_rule(Match::Prefix("She ".into()), vec![]);
    m.push_rule(Match::Contains("common name in the following city".into()), vec!["Moscow".into()]);
    m.push_rule(Match::Contains("born in".into()), vec!["Moscow".into()]);
    m.push_rule(Match::Contains("origin".into()), vec!["Moscow".into()]);
    m
}

pub const RIGGED_FACTS: &str = "\
P27\tThomas Ong\tSingapore
P27\tFour Temps\tPeru
P27\tFive Temps\tChile
P27\tPop Thousand\tNorway
P27\tPop Thousandone\tSweden
P27\tPrefix Three\tBedford
P27\tPrefix Four\tBedford
P27\tGiuseppe Angeli\tItaly
P27\tJoseph Clay\tFrance
P27\tJoseph Clay\tSpain
P27\tJoseph Clay\tGermany
P27\tLina Field\tCanada
P19\tIvan Petrov\tMoscow
";

pub const RIGGED_POPULARITY: &str = "\
Thomas Ong\t1418
Four Temps\t5000
Five Temps\t5000
Pop Thousand\t1000
Pop Thousandone\t1001
Prefix Three\t3000
Prefix Four\t3000
Giuseppe Angeli\t3000
Joseph Clay\t273
Lina Field\t40
";
