// SPDX-License-Identifier: MIT OR Apache-2.0

//! Token binning, average indirect effects with 95% intervals, and the
//! peak-significance rule.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Component;
use crate::tracing::TraceGrid;

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenBin {
    FirstSubject,
    MiddleSubject,
    LastSubject,
    FirstSubsequent,
    Further,
    LastToken,
}

impl TokenBin {
    pub const ALL: [TokenBin; 6] = [
        TokenBin::FirstSubject,
        TokenBin::MiddleSubject,
        TokenBin::LastSubject,
        TokenBin::FirstSubsequent,
        TokenBin::Further,
        TokenBin::LastToken,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TokenBin::FirstSubject => "first_subject",
            TokenBin::MiddleSubject => "middle_subject",
            TokenBin::LastSubject => "last_subject",
            TokenBin::FirstSubsequent => "first_subsequent",
            TokenBin::Further => "further",
            TokenBin::LastToken => "last_token",
        }
    }
}

impl fmt::Display for TokenBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Bin of every position of an `n`-token sequence with the given subject span.
pub fn bin_positions(n: usize, subject: Range<usize>) -> Result<Vec<TokenBin>> {
    if subject.is_empty() {
        return Err(Error::InvalidInput("subject span is empty".into()));
    }
    if subject.end >= n {
        return Err(Error::InvalidInput(format!(
            "subject span {subject:?} leaves no token after it in a sequence of {n}"
        )));
    }
    Ok((0..n)
        .map(|p| {
            if p == n - 1 {
                TokenBin::LastToken
            } else if p + 1 == subject.end {
                TokenBin::LastSubject
            } else if p == subject.start {
                TokenBin::FirstSubject
            } else if subject.contains(&p) {
                TokenBin::MiddleSubject
            } else if p == subject.end {
                TokenBin::FirstSubsequent
            } else {
                TokenBin::Further
            }
        })
        .collect())
}

/// A grid paired with the bin of each of its positions.
#[derive(Debug, Clone, Copy)]
pub struct BinnedGrid<'a> {
    pub grid: &'a TraceGrid,
    pub bins: &'a [TokenBin],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum CiMethod {
    Normal,
    Bootstrap { resamples: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AiePoint {
    pub bin: TokenBin,
    pub layer: usize,
    pub component: Component,
    pub aie: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
}

/// A (bin, layer, component) cell no sample contributed to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmptyCell {
    pub bin: TokenBin,
    pub layer: usize,
    pub component: Component,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub points: Vec<AiePoint>,
    pub empty_cells: Vec<EmptyCell>,
    /// Zero-TE grids skipped in normalized mode.
    pub excluded_zero_te: usize,
}

impl Aggregate {
    pub fn component_points(&self, c: Component) -> Vec<AiePoint> {
        self.points.iter().filter(|p| p.component == c).cloned().collect()
    }
}

/// Mean of the values of a sample's positions in each bin, per layer and
/// component: `[bin][layer][component] -> Option<mean>`.
fn per_sample_bin_means(s: &BinnedGrid, normalized: bool) -> Option<BTreeMap<(TokenBin, usize, usize), f64>> {
    let values = s.grid.values(normalized)?;
    let (n, n_layers, nc) = values.dim();
    let mut sums: BTreeMap<(TokenBin, usize, usize), (f64, usize)> = BTreeMap::new();
    for p in 0..n {
        for l in 0..n_layers {
            for c in 0..nc {
                let e = sums.entry((s.bins[p], l, c)).or_insert((0.0, 0));
                e.0 += values[[p, l, c]];
                e.1 += 1;
            }
        }
    }
    Some(sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect())
}

pub fn aggregate(samples: &[BinnedGrid], normalized: bool, method: CiMethod) -> Result<Aggregate> {
    let first = samples
        .first()
        .ok_or_else(|| Error::EmptyInput("no grids to aggregate".into()))?;
    let n_layers = first.grid.n_layers();
    let components = first.grid.components.clone();
    for (k, s) in samples.iter().enumerate() {
        if s.grid.n_layers() != n_layers || s.grid.components != components {
            return Err(Error::GridMismatch(format!(
                "grid {k} has {} layers / {:?}, grid 0 has {n_layers} / {components:?}",
                s.grid.n_layers(),
                s.grid.components
            )));
        }
        if s.bins.len() != s.grid.n_positions() {
            return Err(Error::GridMismatch(format!(
                "grid {k} has {} positions but {} bins",
                s.grid.n_positions(),
                s.bins.len()
            )));
        }
    }

    let mut cells: BTreeMap<(TokenBin, usize, usize), Vec<f64>> = BTreeMap::new();
    let mut excluded = 0;
    for s in samples {
        match per_sample_bin_means(s, normalized) {
            Some(means) => {
                for (k, v) in means {
                    cells.entry(k).or_default().push(v);
                }
            }
            None => excluded += 1,
        }
    }
    if excluded == samples.len() {
        return Err(Error::EmptyInput("every grid has zero total effect".into()));
    }

    let mut points = Vec::new();
    let mut empty_cells = Vec::new();
    for bin in TokenBin::ALL {
        for layer in 0..n_layers {
            for (c, &component) in components.iter().enumerate() {
                match cells.get(&(bin, layer, c)) {
                    Some(values) => {
                        let (aie, ci_low, ci_high) = interval(values, method);
                        points.push(AiePoint {
                            bin,
                            layer,
                            component,
                            aie,
                            ci_low,
                            ci_high,
                            n: values.len(),
                        });
                    }
                    None => empty_cells.push(EmptyCell {
                        bin,
                        layer,
                        component,
                        n: 0,
                    }),
                }
            }
        }
    }
    Ok(Aggregate {
        points,
        empty_cells,
        excluded_zero_te: excluded,
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// (mean, low, high). A single value gives the degenerate interval.
fn interval(values: &[f64], method: CiMethod) -> (f64, f64, f64) {
    let m = mean(values);
    if values.len() < 2 {
        return (m, m, m);
    }
    match method {
        CiMethod::Normal => {
            let n = values.len() as f64;
            let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
            let half = Z_95 * (var / n).sqrt();
            (m, m - half, m + half)
        }
        CiMethod::Bootstrap { resamples, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut means: Vec<f64> = (0..resamples.max(1))
                .map(|_| {
                    (0..values.len())
                        .map(|_| values[rng.random_range(0..values.len())])
                        .sum::<f64>()
                        / values.len() as f64
                })
                .collect();
            means.sort_by(f64::total_cmp);
            let at = |q: f64| means[((q * (means.len() - 1) as f64).round() as usize).min(means.len() - 1)];
            (m, at(0.025).min(m), at(0.975).max(m))
        }
    }
}

/// Points whose lower bound exceeds the upper bound of every other point.
pub fn peak_significance(points: &[AiePoint]) -> Result<Vec<AiePoint>> {
    if points.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "peak test needs at least 2 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|p| p.component != points[0].component) {
        return Err(Error::InvalidInput("peak test mixes components".into()));
    }
    let peaks: Vec<AiePoint> = points
        .iter()
        .enumerate()
        .filter(|(i, p)| {
            points
                .iter()
                .enumerate()
                .all(|(j, q)| j == *i || p.ci_low > q.ci_high)
        })
        .map(|(_, p)| p.clone())
        .collect();
    debug_assert!(peaks.len() <= 1);
    Ok(peaks)
}

pub fn write_lineplot_csv<W: Write>(agg: &Aggregate, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bin", "layer", "component", "aie", "ci_low", "ci_high", "n"])?;
    for p in &agg.points {
        w.write_record([
            p.bin.to_string(),
            p.layer.to_string(),
            p.component.to_string(),
            p.aie.to_string(),
            p.ci_low.to_string(),
            p.ci_high.to_string(),
            p.n.to_string(),
        ])?;
    }
    for e in &agg.empty_cells {
        w.write_record([
            e.bin.to_string(),
            e.layer.to_string(),
            e.component.to_string(),
            String::new(),
            String::new(),
            String::new(),
            "0".to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapCell {
    pub position: usize,
    pub layer: usize,
    pub component: Component,
    pub mean: f64,
    pub n: usize,
}

/// Mean per raw (position, layer, component) over the grids that have that
/// position. No binning.
pub fn heatmap(grids: &[&TraceGrid], normalized: bool) -> Vec<HeatmapCell> {
    let mut sums: BTreeMap<(usize, usize, Component), (f64, usize)> = BTreeMap::new();
    for g in grids {
        let Some(values) = g.values(normalized) else {
            continue;
        };
        for ((p, l, c), v) in values.indexed_iter() {
            let e = sums.entry((p, l, g.components[c])).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
    }
    sums.into_iter()
        .map(|((position, layer, component), (s, n))| HeatmapCell {
            position,
            layer,
            component,
            mean: s / n as f64,
            n,
        })
        .collect()
}

pub fn write_heatmap_csv<W: Write>(cells: &[HeatmapCell], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for c in cells {
        w.serialize(c)?;
    }
    w.flush()?;
    Ok(())
}
