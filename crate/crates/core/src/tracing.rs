// SPDX-License-Identifier: MIT OR Apache-2.0

//! Causal tracing: total effect, indirect effect and normalized indirect
//! effect of restoring single states in a subject-noised run.

use std::io::{Read, Write};
use std::ops::Range;

use ndarray::Array3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    forward_with_capture, forward_with_intervention, ActivationTrace, Component, InterventionSpec,
    PatchEntry, TokenSequence, Tokenizer, WeightBundle,
};

/// Below this |te| the normalized effect is undefined.
pub const ZERO_TE_EPS: f64 = 1e-12;

/// A tokenized query plus the noise schedule used to trace it.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceTarget {
    pub tokens: TokenSequence,
    pub subject_span: Range<usize>,
    pub traced_token: u32,
    pub n_noise_runs: usize,
    pub noise_sigma: f64,
    pub base_seed: u64,
}

impl TraceTarget {
    /// Target whose traced token is the clean-run top-1 prediction.
    pub fn from_clean_prediction(
        weights: &WeightBundle,
        tokens: TokenSequence,
        subject_span: Range<usize>,
        n_noise_runs: usize,
        noise_sigma: f64,
        base_seed: u64,
    ) -> Result<Self> {
        let clean = forward_with_capture(weights, &tokens)?;
        Ok(TraceTarget {
            tokens,
            subject_span,
            traced_token: clean.top_token(),
            n_noise_runs,
            noise_sigma,
            base_seed,
        })
    }

    fn validate(&self, weights: &WeightBundle) -> Result<()> {
        if self.n_noise_runs == 0 {
            return Err(Error::InvalidInput("n_noise_runs must be at least 1".into()));
        }
        if self.traced_token as usize >= weights.config.vocab_size {
            return Err(Error::InvalidInput(format!(
                "traced token {} outside vocabulary",
                self.traced_token
            )));
        }
        if self.subject_span.is_empty() || self.subject_span.end > self.tokens.len() {
            return Err(Error::InvalidInput(format!(
                "subject span {:?} invalid for {} tokens",
                self.subject_span,
                self.tokens.len()
            )));
        }
        Ok(())
    }

    fn noise_spec(&self, run: usize) -> InterventionSpec {
        InterventionSpec::noise_only(
            self.subject_span.clone(),
            self.noise_sigma,
            self.base_seed.wrapping_add(run as u64),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TotalEffect {
    pub p_clean: f64,
    pub p_noised: f64,
    pub te: f64,
    pub te_norm: f64,
}

/// Clean and noise-averaged probabilities of the traced token, without the
/// normalized form.
pub fn effect_probabilities(weights: &WeightBundle, target: &TraceTarget) -> Result<(f64, f64)> {
    target.validate(weights)?;
    let clean = forward_with_capture(weights, &target.tokens)?;
    let p_clean = clean.next_token_prob(target.traced_token);
    let p_noised = mean_noised(weights, target)?;
    Ok((p_clean, p_noised))
}

pub fn total_effect(weights: &WeightBundle, target: &TraceTarget) -> Result<TotalEffect> {
    let (p_clean, p_noised) = effect_probabilities(weights, target)?;
    finish_effect(p_clean, p_noised)
}

fn finish_effect(p_clean: f64, p_noised: f64) -> Result<TotalEffect> {
    if p_clean == 0.0 {
        return Err(Error::DegenerateTarget(
            "clean probability of the traced token is 0".into(),
        ));
    }
    let te = p_clean - p_noised;
    Ok(TotalEffect {
        p_clean,
        p_noised,
        te,
        te_norm: te / p_clean,
    })
}

fn mean_noised(weights: &WeightBundle, target: &TraceTarget) -> Result<f64> {
    let mut total = 0.0;
    for r in 0..target.n_noise_runs {
        let t = forward_with_intervention(weights, &target.tokens, &target.noise_spec(r), None)?;
        total += t.next_token_prob(target.traced_token);
    }
    Ok(total / target.n_noise_runs as f64)
}

/// `multiplier` times the population standard deviation of every embedding
/// entry of every subject token, pooled.
pub fn calibrate_noise(weights: &WeightBundle, subjects: &[Vec<u32>], multiplier: f64) -> Result<f64> {
    let ids: Vec<u32> = subjects.iter().flatten().copied().collect();
    if ids.is_empty() {
        return Err(Error::EmptyInput("no subject tokens to calibrate noise from".into()));
    }
    let mut n = 0usize;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for id in ids {
        let row = weights
            .wte
            .outer_iter()
            .nth(id as usize)
            .ok_or_else(|| Error::InvalidInput(format!("token id {id} outside vocabulary")))?;
        for &v in row.iter() {
            n += 1;
            let delta = v - mean;
            mean += delta / n as f64;
            m2 += delta * (v - mean);
        }
    }
    Ok(multiplier * (m2 / n as f64).max(0.0).sqrt())
}

/// Which states a grid covers and how mlp/attn patches are windowed.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceOptions {
    pub components: Vec<Component>,
    pub window_radius: usize,
}

impl Default for TraceOptions {
    fn default() -> Self {
        TraceOptions {
            components: Component::ALL.to_vec(),
            window_radius: 5,
        }
    }
}

/// Effects of restoring each (position, layer, component) state.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceGrid {
    pub components: Vec<Component>,
    pub token_texts: Vec<String>,
    /// `[position, layer, component index]`
    pub ie: Array3<f64>,
    /// `None` when the sample has zero total effect.
    pub nie: Option<Array3<f64>>,
    pub p_clean: f64,
    pub p_noised: f64,
    pub te: f64,
    pub te_norm: f64,
}

impl TraceGrid {
    pub fn n_positions(&self) -> usize {
        self.ie.dim().0
    }

    pub fn n_layers(&self) -> usize {
        self.ie.dim().1
    }

    pub fn is_zero_te(&self) -> bool {
        self.nie.is_none()
    }

    pub fn component_index(&self, c: Component) -> Option<usize> {
        self.components.iter().position(|&x| x == c)
    }

    /// Values for aggregation: nie when `normalized`, else ie.
    pub fn values(&self, normalized: bool) -> Option<&Array3<f64>> {
        if normalized {
            self.nie.as_ref()
        } else {
            Some(&self.ie)
        }
    }
}

/// `clip(ie / |te|, -1, 1)`, or `None` when |te| is below [`ZERO_TE_EPS`].
pub fn normalize(ie: f64, te: f64) -> Option<f64> {
    (te.abs() >= ZERO_TE_EPS).then(|| (ie / te.abs()).clamp(-1.0, 1.0))
}

pub fn trace_grid(
    weights: &WeightBundle,
    tokenizer: &dyn Tokenizer,
    target: &TraceTarget,
    options: &TraceOptions,
) -> Result<TraceGrid> {
    target.validate(weights)?;
    if options.components.is_empty() {
        return Err(Error::InvalidInput("no components to trace".into()));
    }
    let clean = forward_with_capture(weights, &target.tokens)?;
    let p_clean = clean.next_token_prob(target.traced_token);
    let p_noised = mean_noised(weights, target)?;
    let effect = finish_effect(p_clean, p_noised)?;

    let n = target.tokens.len();
    let n_layers = weights.config.n_layers;
    let nc = options.components.len();
    let cells: Vec<(usize, usize, usize)> = (0..n)
        .flat_map(|i| (0..n_layers).flat_map(move |l| (0..nc).map(move |c| (i, l, c))))
        .collect();
    let patched: Vec<f64> = cells
        .par_iter()
        .map(|&(i, l, c)| {
            patched_probability(
                weights,
                target,
                &clean,
                PatchEntry {
                    position: i,
                    layer: l,
                    component: options.components[c],
                    window_radius: options.window_radius,
                },
            )
        })
        .collect::<Result<_>>()?;

    let mut ie = Array3::zeros((n, n_layers, nc));
    for (&(i, l, c), p) in cells.iter().zip(patched) {
        ie[[i, l, c]] = p - p_noised;
    }
    let nie = (effect.te.abs() >= ZERO_TE_EPS)
        .then(|| ie.mapv(|v| normalize(v, effect.te).expect("te checked")));
    Ok(TraceGrid {
        components: options.components.clone(),
        token_texts: target
            .tokens
            .token_ids
            .iter()
            .map(|&t| tokenizer.decode_token(t))
            .collect(),
        ie,
        nie,
        p_clean,
        p_noised,
        te: effect.te,
        te_norm: effect.te_norm,
    })
}

/// Mean over the noise schedule of P(o) with one state restored.
pub fn patched_probability(
    weights: &WeightBundle,
    target: &TraceTarget,
    clean: &ActivationTrace,
    patch: PatchEntry,
) -> Result<f64> {
    let mut total = 0.0;
    for r in 0..target.n_noise_runs {
        let spec = target.noise_spec(r).with_patch(patch);
        let t = forward_with_intervention(weights, &target.tokens, &spec, Some(clean))?;
        total += t.next_token_prob(target.traced_token);
    }
    Ok(total / target.n_noise_runs as f64)
}

#[derive(Debug, Serialize, Deserialize)]
struct GridRow {
    position: usize,
    token_text: String,
    layer: usize,
    component: Component,
    ie: f64,
    nie: Option<f64>,
    p_clean: f64,
    p_noised: f64,
    te: f64,
}

/// One row per (position, layer, component); `nie` is empty for zero-TE grids.
pub fn write_grid_csv<W: Write>(grid: &TraceGrid, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for i in 0..grid.n_positions() {
        for l in 0..grid.n_layers() {
            for (c, &component) in grid.components.iter().enumerate() {
                w.serialize(GridRow {
                    position: i,
                    token_text: grid.token_texts[i].clone(),
                    layer: l,
                    component,
                    ie: grid.ie[[i, l, c]],
                    nie: grid.nie.as_ref().map(|a| a[[i, l, c]]),
                    p_clean: grid.p_clean,
                    p_noised: grid.p_noised,
                    te: grid.te,
                })?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_grid_csv<R: Read>(input: R) -> Result<TraceGrid> {
    let mut rows: Vec<GridRow> = Vec::new();
    for r in csv::Reader::from_reader(input).deserialize() {
        rows.push(r?);
    }
    let first = rows
        .first()
        .ok_or_else(|| Error::EmptyInput("grid CSV has no rows".into()))?;
    let (p_clean, p_noised, te) = (first.p_clean, first.p_noised, first.te);
    let n = rows.iter().map(|r| r.position).max().unwrap_or(0) + 1;
    let n_layers = rows.iter().map(|r| r.layer).max().unwrap_or(0) + 1;
    let mut components: Vec<Component> = Vec::new();
    for r in &rows {
        if !components.contains(&r.component) {
            components.push(r.component);
        }
    }
    let nc = components.len();
    if rows.len() != n * n_layers * nc {
        return Err(Error::GridMismatch(format!(
            "{} rows do not form a full {n}x{n_layers}x{nc} grid",
            rows.len()
        )));
    }
    let zero_te = rows.iter().all(|r| r.nie.is_none());
    if !zero_te && rows.iter().any(|r| r.nie.is_none()) {
        return Err(Error::GridMismatch("nie present for only some cells".into()));
    }
    let mut ie = Array3::from_elem((n, n_layers, nc), f64::NAN);
    let mut nie = Array3::from_elem((n, n_layers, nc), f64::NAN);
    let mut token_texts = vec![String::new(); n];
    for r in &rows {
        let c = components.iter().position(|&x| x == r.component).expect("collected");
        ie[[r.position, r.layer, c]] = r.ie;
        nie[[r.position, r.layer, c]] = r.nie.unwrap_or(0.0);
        token_texts[r.position] = r.token_text.clone();
    }
    if ie.iter().any(|v| v.is_nan()) {
        return Err(Error::GridMismatch("duplicate or missing cells".into()));
    }
    let te_norm = if p_clean == 0.0 {
        return Err(Error::DegenerateTarget("grid has p_clean = 0".into()));
    } else {
        te / p_clean
    };
    Ok(TraceGrid {
        components,
        token_texts,
        ie,
        nie: (!zero_te).then_some(nie),
        p_clean,
        p_noised,
        te,
        te_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{toy, WordTokenizer};
    use proptest::prelude::*;

    fn seq(ids: &[u32]) -> TokenSequence {
        TokenSequence {
            token_ids: ids.to_vec(),
            char_offsets: (0..ids.len()).map(|i| i..i + 1).collect(),
        }
    }

    fn setup(sigma: f64) -> (WeightBundle, WordTokenizer, TraceTarget) {
        let w = toy::random_bundle(&toy::tiny_config(), 21);
        let tok = WordTokenizer::new(w.vocab.clone());
        let t = TraceTarget::from_clean_prediction(&w, seq(&[40, 41, 7, 8, 9]), 0..2, 3, sigma, 5).unwrap();
        (w, tok, t)
    }

    #[test]
    fn zero_sigma_has_zero_effect() {
        let (w, tok, t) = setup(0.0);
        let e = total_effect(&w, &t).unwrap();
        assert_eq!(e.te, 0.0);
        let g = trace_grid(&w, &tok, &t, &TraceOptions::default()).unwrap();
        assert!(g.is_zero_te());
        assert!(g.ie.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn direct_formula() {
        let e = finish_effect(0.5, 0.1).unwrap();
        assert!((e.te - 0.4).abs() < 1e-15);
        assert!((e.te_norm - 0.8).abs() < 1e-15);
        assert!(matches!(finish_effect(0.0, 0.1), Err(Error::DegenerateTarget(_))));
    }

    #[test]
    fn last_state_cell_recovers_total_effect() {
        let (w, tok, t) = setup(3.0);
        let g = trace_grid(&w, &tok, &t, &TraceOptions::default()).unwrap();
        let h = g.component_index(Component::Hidden).unwrap();
        let last = g.ie[[4, 1, h]];
        assert!((last - g.te).abs() < 1e-12);
        if g.te > 0.0 {
            assert_eq!(g.nie.as_ref().unwrap()[[4, 1, h]], 1.0);
        }
        for v in g.nie.as_ref().unwrap().iter() {
            assert!((-1.0..=1.0).contains(v));
        }
        for v in g.ie.iter() {
            assert!(*v >= -g.p_noised - 1e-12 && *v <= 1.0 - g.p_noised + 1e-12);
        }
    }

    #[test]
    fn calibrate_examples() {
        let mut w = toy::random_bundle(&toy::tiny_config(), 1);
        w.wte.row_mut(3).fill(0.7);
        assert_eq!(calibrate_noise(&w, &[vec![3, 3]], 3.0).unwrap(), 0.0);
        for (k, v) in w.wte.row_mut(4).iter_mut().enumerate() {
            *v = if k % 2 == 0 { 1.0 } else { -1.0 };
        }
        assert!((calibrate_noise(&w, &[vec![4]], 3.0).unwrap() - 3.0).abs() < 1e-12);
        assert!(calibrate_noise(&w, &[], 3.0).is_err());
        assert!(calibrate_noise(&w, &[vec![]], 3.0).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let (w, tok, t) = setup(3.0);
        let g = trace_grid(&w, &tok, &t, &TraceOptions { components: vec![Component::Mlp, Component::Hidden], window_radius: 1 }).unwrap();
        let mut buf = Vec::new();
        write_grid_csv(&g, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("position,token_text,layer,component,ie,nie,p_clean,p_noised,te\n"));
        let back = read_grid_csv(&buf[..]).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn zero_te_csv_has_empty_nie() {
        let (w, tok, t) = setup(0.0);
        let g = trace_grid(&w, &tok, &t, &TraceOptions::default()).unwrap();
        let mut buf = Vec::new();
        write_grid_csv(&g, &mut buf).unwrap();
        let line = String::from_utf8(buf.clone()).unwrap().lines().nth(1).unwrap().to_string();
        assert!(line.contains(",,"), "{line}");
        assert!(read_grid_csv(&buf[..]).unwrap().is_zero_te());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn normalize_is_clipped(ie in -1.0f64..1.0, te in -1.0f64..1.0) {
            match normalize(ie, te) {
                Some(v) => prop_assert!((-1.0..=1.0).contains(&v)),
                None => prop_assert!(te.abs() < ZERO_TE_EPS),
            }
        }

        #[test]
        fn unpatched_cells_equal_noised(seed in 0u64..1000) {
            let w = toy::random_bundle(&toy::tiny_config(), 3);
            let t = TraceTarget::from_clean_prediction(&w, seq(&[1, 2, 3, 4]), 0..1, 2, 1.5, seed).unwrap();
            let p = mean_noised(&w, &t).unwrap();
            let again = mean_noised(&w, &t).unwrap();
            prop_assert_eq!(p, again);
        }
    }
}
