//! Matching estimators: propensity nearest-neighbour, propensity kernel and
//! coarsened exact matching.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::att::AttEstimate;
use crate::cate::{pooled_bounds, CubeGrid};
use crate::datasets::{mean_std, Group, ObservationalDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchMethod {
    NearestNeighbor,
    Kernel,
    Cem,
}

impl MatchMethod {
    pub fn label(self) -> &'static str {
        match self {
            MatchMethod::NearestNeighbor => "psm-nn",
            MatchMethod::Kernel => "psm-kernel",
            MatchMethod::Cem => "cem",
        }
    }
}

/// Controls matched to one treated row, with weights summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct TreatedMatch {
    pub treated: usize,
    pub controls: Vec<(usize, f64)>,
}

/// Matches for every treated row of a dataset; indices are dataset rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub method: MatchMethod,
    pub matched: Vec<TreatedMatch>,
    /// Treated rows left without any control.
    pub unmatched_treated: Vec<usize>,
    /// Distinct controls carrying positive weight.
    pub controls_used: usize,
    /// Controls never used.
    pub unmatched_controls: usize,
}

impl MatchResult {
    fn new(
        method: MatchMethod,
        matched: Vec<TreatedMatch>,
        unmatched_treated: Vec<usize>,
        n_controls: usize,
    ) -> Self {
        let mut used: Vec<usize> = matched
            .iter()
            .flat_map(|m| m.controls.iter().filter(|(_, w)| *w > 0.0).map(|(c, _)| *c))
            .collect();
        used.sort_unstable();
        used.dedup();
        MatchResult {
            method,
            matched,
            unmatched_treated,
            controls_used: used.len(),
            unmatched_controls: n_controls - used.len(),
        }
    }

    /// Audit CSV: one line per (treated, control, weight) pair.
    pub fn diagnostics_csv(&self) -> String {
        let mut s = String::from("treated_index,control_index,weight\n");
        for m in &self.matched {
            for (c, w) in &m.controls {
                let _ = writeln!(s, "{},{},{}", m.treated, c, w);
            }
        }
        for t in &self.unmatched_treated {
            let _ = writeln!(s, "{t},,");
        }
        s
    }

    pub fn write_diagnostics(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.diagnostics_csv()).map_err(|e| Error::io(path, e))
    }
}

fn check_scores(scores: &[f64], data: &ObservationalDataset) -> Result<()> {
    if scores.len() != data.len() {
        return Err(Error::shape(format!(
            "{} scores for {} rows",
            scores.len(),
            data.len()
        )));
    }
    if data.group_size(Group::Control) == 0 {
        return Err(Error::Estimation(
            "matching needs at least one control row".into(),
        ));
    }
    Ok(())
}

/// Control rows ordered by score, ties by row index.
fn sorted_controls(scores: &[f64], data: &ObservationalDataset) -> Vec<(f64, usize)> {
    let mut controls: Vec<(f64, usize)> = data
        .group_indices(Group::Control)
        .into_iter()
        .map(|i| (scores[i], i))
        .collect();
    controls.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    controls
}

/// Each treated row takes its `k` nearest controls by score, with replacement
/// and equal weights; equal distances go to the lowest row index. With fewer
/// than `k` controls all of them are used. Treated rows whose nearest control
/// is farther than `caliper` stay unmatched, and matches beyond it are dropped.
pub fn match_nn(
    scores: &[f64],
    data: &ObservationalDataset,
    k: usize,
    caliper: Option<f64>,
) -> Result<MatchResult> {
    check_scores(scores, data)?;
    if k == 0 {
        return Err(Error::config("nearest-neighbour matching needs k >= 1"));
    }
    let controls = sorted_controls(scores, data);
    let n0 = controls.len();
    let mut matched = Vec::new();
    let mut unmatched = Vec::new();
    for t in data.group_indices(Group::Treated) {
        let s = scores[t];
        let pos = controls.partition_point(|c| c.0 < s);
        // k candidates each side, widened to include every tie of the outermost
        let mut lo = pos.saturating_sub(k);
        while lo > 0 && controls[lo - 1].0 == controls[lo].0 {
            lo -= 1;
        }
        let mut hi = (pos + k).min(n0);
        while hi < n0 && hi > 0 && controls[hi].0 == controls[hi - 1].0 {
            hi += 1;
        }
        let mut candidates: Vec<(f64, usize)> = controls[lo..hi]
            .iter()
            .map(|&(c, i)| ((c - s).abs(), i))
            .collect();
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        candidates.truncate(k);
        if let Some(cal) = caliper {
            candidates.retain(|c| c.0 <= cal);
        }
        if candidates.is_empty() {
            unmatched.push(t);
            continue;
        }
        let w = 1.0 / candidates.len() as f64;
        matched.push(TreatedMatch {
            treated: t,
            controls: candidates.into_iter().map(|(_, i)| (i, w)).collect(),
        });
    }
    Ok(MatchResult::new(
        MatchMethod::NearestNeighbor,
        matched,
        unmatched,
        n0,
    ))
}

/// Silverman's rule of thumb, `0.9·min(sd, IQR/1.34)·n^(−1/5)`.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 1.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let quantile = |p: f64| {
        let h = p * (n - 1) as f64;
        let (i, f) = (h.floor() as usize, h.fract());
        v[i] + f * (v[(i + 1).min(n - 1)] - v[i])
    };
    let sd = mean_std(values).1;
    let iqr = (quantile(0.75) - quantile(0.25)) / 1.34;
    let spread = if iqr > 0.0 { sd.min(iqr) } else { sd };
    if spread > 0.0 {
        0.9 * spread * (n as f64).powf(-0.2)
    } else {
        1.0
    }
}

/// Epanechnikov weights `1 − u²` on `u = Δscore / bandwidth`, normalized per
/// treated row. Rows with no control inside the window stay unmatched.
/// `None` uses [`silverman_bandwidth`] on the control scores.
pub fn match_kernel(
    scores: &[f64],
    data: &ObservationalDataset,
    bandwidth: Option<f64>,
) -> Result<MatchResult> {
    check_scores(scores, data)?;
    let controls = sorted_controls(scores, data);
    let h = match bandwidth {
        Some(h) if h > 0.0 && !h.is_nan() => h,
        Some(h) => {
            return Err(Error::config(format!(
                "kernel bandwidth {h} must be positive"
            )))
        }
        None => silverman_bandwidth(&controls.iter().map(|c| c.0).collect::<Vec<_>>()),
    };
    let mut matched = Vec::new();
    let mut unmatched = Vec::new();
    for t in data.group_indices(Group::Treated) {
        let s = scores[t];
        let (lo, hi) = if h.is_finite() {
            (
                controls.partition_point(|c| c.0 <= s - h),
                controls.partition_point(|c| c.0 < s + h),
            )
        } else {
            (0, controls.len())
        };
        let mut weights: Vec<(usize, f64)> = controls[lo..hi]
            .iter()
            .map(|&(c, i)| {
                let u = (c - s) / h;
                (i, (1.0 - u * u).max(0.0))
            })
            .filter(|(_, w)| *w > 0.0)
            .collect();
        let total: f64 = weights.iter().map(|(_, w)| w).sum();
        if !(total > 0.0) {
            unmatched.push(t);
            continue;
        }
        weights.sort_unstable_by_key(|(i, _)| *i);
        for (_, w) in &mut weights {
            *w /= total;
        }
        matched.push(TreatedMatch {
            treated: t,
            controls: weights,
        });
    }
    Ok(MatchResult::new(
        MatchMethod::Kernel,
        matched,
        unmatched,
        controls.len(),
    ))
}

/// Bin counts for coarsened exact matching.
#[derive(Debug, Clone, PartialEq)]
pub enum CemBins {
    /// `⌈log₂ n⌉ + 1` per dimension for `n` rows.
    Sturges,
    Uniform(usize),
    PerDimension(Vec<usize>),
}

pub fn sturges_bins(n: usize) -> usize {
    (n.max(1) as f64).log2().ceil() as usize + 1
}

/// Coarsens covariates on an equal-width grid over their pooled range and
/// matches each treated row to every control in its cube, each with weight
/// `1/m₀` for `m₀` controls in the cube. Cubes holding one group only are dropped.
pub fn match_cem(data: &ObservationalDataset, bins: &CemBins) -> Result<MatchResult> {
    let q = data.dim();
    let bins = match bins {
        CemBins::Sturges => vec![sturges_bins(data.len()); q],
        CemBins::Uniform(b) => vec![*b; q],
        CemBins::PerDimension(b) => b.clone(),
    };
    let (lower, upper) = pooled_bounds(data, &data.select(&[]), 0.0)?;
    let grid = CubeGrid::new(lower, upper, bins)?;
    let mut strata: HashMap<u64, [Vec<usize>; 2]> = HashMap::new();
    for (i, row) in data.covariates().iter_rows().enumerate() {
        let idx = grid
            .cube_index(row)?
            .expect("pooled bounds contain every row");
        strata.entry(idx).or_default()[data.group_of(i).index()].push(i);
    }
    let mut matched = Vec::new();
    let mut unmatched = Vec::new();
    for t in data.group_indices(Group::Treated) {
        let idx = grid
            .cube_index(data.covariates().row(t))?
            .expect("in bounds");
        let controls = &strata[&idx][Group::Control.index()];
        if controls.is_empty() {
            unmatched.push(t);
            continue;
        }
        let w = 1.0 / controls.len() as f64;
        matched.push(TreatedMatch {
            treated: t,
            controls: controls.iter().map(|&c| (c, w)).collect(),
        });
    }
    if matched.is_empty() {
        return Err(Error::Estimation(
            "coarsened exact matching found no stratum with both groups".into(),
        ));
    }
    Ok(MatchResult::new(
        MatchMethod::Cem,
        matched,
        unmatched,
        data.group_size(Group::Control),
    ))
}

/// Mean of `y₁ − Σ w·y₀` over matched treated rows.
pub fn att_from_matches(result: &MatchResult, data: &ObservationalDataset) -> Result<AttEstimate> {
    let y = data.outcomes();
    let effects: Vec<f64> = result
        .matched
        .iter()
        .map(|m| y[m.treated] - m.controls.iter().map(|&(c, w)| w * y[c]).sum::<f64>())
        .collect();
    AttEstimate::from_effects(effects, result.unmatched_treated.len(), false).map_err(|_| {
        Error::Estimation(format!("{} matched no treated rows", result.method.label()))
    })
}
