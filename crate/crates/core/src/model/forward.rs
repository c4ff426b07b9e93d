// SPDX-License-Identifier: MIT OR Apache-2.0

//! Forward pass with activation capture and state patching.
//!
//! Hook points per layer `l` and position `i`:
//! - `attn`: output of the attention sublayer before it is added to the residual;
//! - `mlp`: output of the MLP sublayer before it is added to the residual;
//! - `hidden`: residual stream after the whole block.
//!
//! Patching replaces the hooked value with the one recorded in a reference
//! trace before any downstream computation reads it.

use std::collections::HashSet;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, Array3, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tokenizer::TokenSequence;
use super::weights::{BlockWeights, LayerNormParams, WeightBundle};
use crate::error::{Error, Result};

/// Which hooked state a patch restores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Hidden,
    Mlp,
    Attn,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::Hidden, Component::Mlp, Component::Attn];

    pub fn as_str(self) -> &'static str {
        match self {
            Component::Hidden => "hidden",
            Component::Mlp => "mlp",
            Component::Attn => "attn",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hidden" => Ok(Component::Hidden),
            "mlp" => Ok(Component::Mlp),
            "attn" => Ok(Component::Attn),
            other => Err(Error::InvalidInput(format!("unknown component `{other}`"))),
        }
    }
}

/// Activations recorded during one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    /// `[position, layer, d_model]` residual stream after each block.
    pub hidden: Array3<f64>,
    /// `[position, layer, d_model]`
    pub mlp_out: Array3<f64>,
    /// `[position, layer, d_model]`
    pub attn_out: Array3<f64>,
    /// `[position, vocab_size]`
    pub final_logits: Array2<f64>,
}

impl ActivationTrace {
    pub fn n_positions(&self) -> usize {
        self.final_logits.nrows()
    }

    /// Next-token distribution after the last position.
    pub fn next_token_probs(&self) -> Array1<f64> {
        softmax(self.final_logits.row(self.n_positions() - 1))
    }

    pub fn next_token_prob(&self, token: u32) -> f64 {
        self.next_token_probs()[token as usize]
    }

    /// Highest-probability next token; ties go to the lower id.
    pub fn top_token(&self) -> u32 {
        let row = self.final_logits.row(self.n_positions() - 1);
        let mut best = 0usize;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        best as u32
    }
}

/// One restored state. For `mlp` and `attn` the patch covers the layer window
/// `[layer - r, layer + max(r, 1))` clamped to the model depth; `hidden` always
/// restores the single state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PatchEntry {
    pub position: usize,
    pub layer: usize,
    pub component: Component,
    pub window_radius: usize,
}

impl PatchEntry {
    pub fn layers(&self, n_layers: usize) -> Range<usize> {
        match self.component {
            Component::Hidden => self.layer..self.layer + 1,
            Component::Mlp | Component::Attn => {
                let lo = self.layer.saturating_sub(self.window_radius);
                let hi = (self.layer + self.window_radius.max(1)).min(n_layers);
                lo..hi
            }
        }
    }
}

/// Subject-span corruption plus the states to restore.
#[derive(Debug, Clone, PartialEq)]
pub struct InterventionSpec {
    pub noise_span: Range<usize>,
    pub noise_sigma: f64,
    pub noise_seed: u64,
    pub patches: Vec<PatchEntry>,
}

impl InterventionSpec {
    /// Gaussian noise on the span, nothing patched.
    pub fn noise_only(noise_span: Range<usize>, noise_sigma: f64, noise_seed: u64) -> Self {
        InterventionSpec {
            noise_span,
            noise_sigma,
            noise_seed,
            patches: Vec::new(),
        }
    }

    pub fn with_patch(mut self, patch: PatchEntry) -> Self {
        self.patches.push(patch);
        self
    }

    fn validate(&self, n_positions: usize, n_layers: usize) -> Result<()> {
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::InvalidIntervention(format!(
                "noise_sigma {} must be a nonnegative real",
                self.noise_sigma
            )));
        }
        if self.noise_span.start > self.noise_span.end || self.noise_span.end > n_positions {
            return Err(Error::InvalidIntervention(format!(
                "noise span {:?} outside sequence of {n_positions} tokens",
                self.noise_span
            )));
        }
        for p in &self.patches {
            if p.position >= n_positions || p.layer >= n_layers {
                return Err(Error::InvalidIntervention(format!(
                    "patch at position {} layer {} outside {n_positions}x{n_layers}",
                    p.position, p.layer
                )));
            }
        }
        Ok(())
    }
}

/// Expanded per-component (position, layer) sets.
#[derive(Default)]
struct PatchPlan {
    hidden: HashSet<(usize, usize)>,
    mlp: HashSet<(usize, usize)>,
    attn: HashSet<(usize, usize)>,
}

impl PatchPlan {
    fn new(patches: &[PatchEntry], n_layers: usize) -> Self {
        let mut plan = PatchPlan::default();
        for p in patches {
            let set = match p.component {
                Component::Hidden => &mut plan.hidden,
                Component::Mlp => &mut plan.mlp,
                Component::Attn => &mut plan.attn,
            };
            for l in p.layers(n_layers) {
                set.insert((p.position, l));
            }
        }
        plan
    }

    fn is_empty(&self) -> bool {
        self.hidden.is_empty() && self.mlp.is_empty() && self.attn.is_empty()
    }
}

/// Clean forward pass recording every hooked state.
pub fn forward_with_capture(weights: &WeightBundle, tokens: &TokenSequence) -> Result<ActivationTrace> {
    run(weights, tokens, None, &PatchPlan::default(), None)
}

/// Noised and/or patched forward pass. `reference` supplies the values of
/// patched states and is required whenever `spec.patches` is nonempty.
pub fn forward_with_intervention(
    weights: &WeightBundle,
    tokens: &TokenSequence,
    spec: &InterventionSpec,
    reference: Option<&ActivationTrace>,
) -> Result<ActivationTrace> {
    let cfg = &weights.config;
    spec.validate(tokens.len(), cfg.n_layers)?;
    let plan = PatchPlan::new(&spec.patches, cfg.n_layers);
    if !plan.is_empty() {
        let r = reference.ok_or_else(|| {
            Error::ReferenceMismatch("patches given without a reference trace".into())
        })?;
        let want = (tokens.len(), cfg.n_layers, cfg.d_model);
        for (name, a) in [("hidden", &r.hidden), ("mlp_out", &r.mlp_out), ("attn_out", &r.attn_out)] {
            if a.dim() != want {
                return Err(Error::ReferenceMismatch(format!(
                    "{name} has shape {:?}, run needs {want:?}",
                    a.dim()
                )));
            }
        }
    }
    run(weights, tokens, Some(spec), &plan, reference)
}

fn run(
    weights: &WeightBundle,
    tokens: &TokenSequence,
    spec: Option<&InterventionSpec>,
    plan: &PatchPlan,
    reference: Option<&ActivationTrace>,
) -> Result<ActivationTrace> {
    let cfg = &weights.config;
    let n = tokens.len();
    if n == 0 {
        return Err(Error::InvalidInput("empty token sequence".into()));
    }
    if n > cfg.max_seq_len {
        return Err(Error::SequenceTooLong {
            len: n,
            max: cfg.max_seq_len,
        });
    }
    let d = cfg.d_model;

    let mut x = Array2::<f64>::zeros((n, d));
    for (i, &t) in tokens.token_ids.iter().enumerate() {
        if t as usize >= cfg.vocab_size {
            return Err(Error::InvalidInput(format!("token id {t} outside vocabulary")));
        }
        let mut row = x.row_mut(i);
        row.assign(&weights.wte.row(t as usize));
        row += &weights.wpe.row(i);
    }
    if let Some(spec) = spec {
        if spec.noise_sigma > 0.0 && !spec.noise_span.is_empty() {
            let normal = Normal::new(0.0, spec.noise_sigma)
                .map_err(|e| Error::InvalidIntervention(e.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(spec.noise_seed);
            for i in spec.noise_span.clone() {
                for v in x.row_mut(i).iter_mut() {
                    *v += normal.sample(&mut rng);
                }
            }
        }
    }

    let mut hidden = Array3::zeros((n, cfg.n_layers, d));
    let mut mlp_out = Array3::zeros((n, cfg.n_layers, d));
    let mut attn_out = Array3::zeros((n, cfg.n_layers, d));

    for (l, block) in weights.blocks.iter().enumerate() {
        let h = layer_norm(&x, &block.ln_1, cfg.layernorm_epsilon);
        let mut a = attention(&h, block, cfg.n_heads);
        restore(&mut a, &plan.attn, l, reference.map(|r| &r.attn_out));
        x += &a;

        let h = layer_norm(&x, &block.ln_2, cfg.layernorm_epsilon);
        let mut m = mlp(&h, block);
        restore(&mut m, &plan.mlp, l, reference.map(|r| &r.mlp_out));
        x += &m;

        restore(&mut x, &plan.hidden, l, reference.map(|r| &r.hidden));

        if !(x.iter().all(|v| v.is_finite())
            && a.iter().all(|v| v.is_finite())
            && m.iter().all(|v| v.is_finite()))
        {
            return Err(Error::NonFinite { layer: l });
        }
        attn_out.slice_mut(s![.., l, ..]).assign(&a);
        mlp_out.slice_mut(s![.., l, ..]).assign(&m);
        hidden.slice_mut(s![.., l, ..]).assign(&x);
    }

    let mut final_logits = Array2::zeros((n, cfg.vocab_size));
    for i in 0..n {
        final_logits.row_mut(i).assign(&unembed_row(weights, x.row(i)));
    }
    if !final_logits.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            layer: cfg.n_layers - 1,
        });
    }
    Ok(ActivationTrace {
        hidden,
        mlp_out,
        attn_out,
        final_logits,
    })
}

/// Logits at one position from its final residual state alone.
pub fn unembed_row(weights: &WeightBundle, resid: ArrayView1<f64>) -> Array1<f64> {
    let normed = layer_norm_row(resid, &weights.ln_f, weights.config.layernorm_epsilon);
    normed.dot(&weights.unembed)
}

fn restore(
    values: &mut Array2<f64>,
    cells: &HashSet<(usize, usize)>,
    layer: usize,
    source: Option<&Array3<f64>>,
) {
    if cells.is_empty() {
        return;
    }
    let source = source.expect("reference checked for nonempty plans");
    for &(pos, l) in cells {
        if l == layer {
            values.row_mut(pos).assign(&source.slice(s![pos, l, ..]));
        }
    }
}

fn layer_norm_row(x: ArrayView1<f64>, p: &LayerNormParams, eps: f64) -> Array1<f64> {
    let d = x.len() as f64;
    let mean = x.sum() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let inv = 1.0 / (var + eps).sqrt();
    let mut out = x.mapv(|v| (v - mean) * inv);
    out *= &p.weight;
    out += &p.bias;
    out
}

fn layer_norm(x: &Array2<f64>, p: &LayerNormParams, eps: f64) -> Array2<f64> {
    let mut out = Array2::zeros(x.raw_dim());
    for (i, row) in x.axis_iter(Axis(0)).enumerate() {
        out.row_mut(i).assign(&layer_norm_row(row, p, eps));
    }
    out
}

fn attention(h: &Array2<f64>, block: &BlockWeights, n_heads: usize) -> Array2<f64> {
    let (n, d) = h.dim();
    let hd = d / n_heads;
    let mut qkv = h.dot(&block.attn_qkv_w);
    qkv += &block.attn_qkv_b;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut z = Array2::<f64>::zeros((n, d));
    let mut scores = vec![0.0f64; n];
    for head in 0..n_heads {
        let q = qkv.slice(s![.., head * hd..(head + 1) * hd]);
        let k = qkv.slice(s![.., d + head * hd..d + (head + 1) * hd]);
        let v = qkv.slice(s![.., 2 * d + head * hd..2 * d + (head + 1) * hd]);
        for i in 0..n {
            let qi = q.row(i);
            let mut max = f64::NEG_INFINITY;
            for (j, s) in scores.iter_mut().enumerate().take(i + 1) {
                *s = qi.dot(&k.row(j)) * scale;
                max = max.max(*s);
            }
            let mut total = 0.0;
            for s in scores.iter_mut().take(i + 1) {
                *s = (*s - max).exp();
                total += *s;
            }
            let mut out = z.slice_mut(s![i, head * hd..(head + 1) * hd]);
            for (j, s) in scores.iter().enumerate().take(i + 1) {
                out.scaled_add(s / total, &v.row(j));
            }
        }
    }
    let mut a = z.dot(&block.attn_out_w);
    a += &block.attn_out_b;
    a
}

fn mlp(h: &Array2<f64>, block: &BlockWeights) -> Array2<f64> {
    let mut pre = h.dot(&block.mlp_in_w);
    pre += &block.mlp_in_b;
    pre.mapv_inplace(gelu);
    let mut out = pre.dot(&block.mlp_out_w);
    out += &block.mlp_out_b;
    out
}

/// Tanh approximation of GELU, as in GPT-2.
pub fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut out = logits.mapv(|v| (v - max).exp());
    let total = out.sum();
    out /= total;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::toy;
    use crate::model::tokenizer::TokenSequence;

    fn seq(ids: &[u32]) -> TokenSequence {
        TokenSequence {
            token_ids: ids.to_vec(),
            char_offsets: (0..ids.len()).map(|i| i..i + 1).collect(),
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let w = toy::random_bundle(&toy::tiny_config(), 1);
        let t = forward_with_capture(&w, &seq(&[3, 17, 42, 9])).unwrap();
        assert!((t.next_token_probs().sum() - 1.0).abs() < 1e-6);
        assert_eq!(t, forward_with_capture(&w, &seq(&[3, 17, 42, 9])).unwrap());
    }

    #[test]
    fn too_long_is_rejected() {
        let w = toy::random_bundle(&toy::tiny_config(), 1);
        let ids: Vec<u32> = (0..33).collect();
        assert!(matches!(
            forward_with_capture(&w, &seq(&ids)),
            Err(Error::SequenceTooLong { len: 33, .. })
        ));
    }

    #[test]
    fn zero_noise_no_patch_is_identity() {
        let w = toy::random_bundle(&toy::tiny_config(), 2);
        let s = seq(&[5, 6, 7, 8, 9]);
        let clean = forward_with_capture(&w, &s).unwrap();
        let spec = InterventionSpec::noise_only(0..2, 0.0, 99);
        assert_eq!(forward_with_intervention(&w, &s, &spec, None).unwrap(), clean);
    }

    #[test]
    fn last_hidden_patch_restores_logits_exactly() {
        let w = toy::random_bundle(&toy::tiny_config(), 3);
        let s = seq(&[11, 12, 13, 14]);
        let clean = forward_with_capture(&w, &s).unwrap();
        let spec = InterventionSpec::noise_only(0..2, 0.5, 4).with_patch(PatchEntry {
            position: 3,
            layer: 1,
            component: Component::Hidden,
            window_radius: 0,
        });
        let noised = forward_with_intervention(&w, &s, &InterventionSpec::noise_only(0..2, 0.5, 4), None).unwrap();
        assert_ne!(noised.final_logits.row(3), clean.final_logits.row(3));
        let patched = forward_with_intervention(&w, &s, &spec, Some(&clean)).unwrap();
        assert_eq!(patched.final_logits.row(3), clean.final_logits.row(3));
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let w = toy::random_bundle(&toy::tiny_config(), 3);
        let s = seq(&[1, 2, 3]);
        let spec = InterventionSpec::noise_only(0..1, 1.0, 77);
        let a = forward_with_intervention(&w, &s, &spec, None).unwrap();
        let b = forward_with_intervention(&w, &s, &spec, None).unwrap();
        assert_eq!(a, b);
        let c = forward_with_intervention(&w, &s, &InterventionSpec::noise_only(0..1, 1.0, 78), None).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn patch_validation() {
        let w = toy::random_bundle(&toy::tiny_config(), 3);
        let s = seq(&[1, 2, 3]);
        let clean = forward_with_capture(&w, &s).unwrap();
        let bad = InterventionSpec::noise_only(0..1, 1.0, 1).with_patch(PatchEntry {
            position: 3,
            layer: 0,
            component: Component::Mlp,
            window_radius: 0,
        });
        assert!(forward_with_intervention(&w, &s, &bad, Some(&clean)).is_err());
        let no_ref = InterventionSpec::noise_only(0..1, 1.0, 1).with_patch(PatchEntry {
            position: 0,
            layer: 0,
            component: Component::Mlp,
            window_radius: 0,
        });
        assert!(matches!(
            forward_with_intervention(&w, &s, &no_ref, None),
            Err(Error::ReferenceMismatch(_))
        ));
        let other = forward_with_capture(&w, &seq(&[1, 2])).unwrap();
        assert!(forward_with_intervention(&w, &s, &no_ref, Some(&other)).is_err());
    }

    #[test]
    fn window_clamps_to_depth() {
        let p = PatchEntry {
            position: 0,
            layer: 1,
            component: Component::Mlp,
            window_radius: 5,
        };
        assert_eq!(p.layers(2), 0..2);
        assert_eq!(PatchEntry { layer: 7, ..p }.layers(48), 2..12);
        assert_eq!(PatchEntry { window_radius: 0, ..p }.layers(2), 1..2);
        assert_eq!(
            PatchEntry {
                component: Component::Hidden,
                ..p
            }
            .layers(2),
            1..2
        );
    }

    #[test]
    fn concurrent_passes_match_serial() {
        use rayon::prelude::*;
        let w = toy::random_bundle(&toy::tiny_config(), 5);
        let inputs: Vec<TokenSequence> = (0..8u32).map(|k| seq(&[k, k + 1, k + 2])).collect();
        let serial: Vec<_> = inputs.iter().map(|s| forward_with_capture(&w, s).unwrap()).collect();
        let parallel: Vec<_> = inputs.par_iter().map(|s| forward_with_capture(&w, s).unwrap()).collect();
        assert_eq!(serial, parallel);
    }
}
