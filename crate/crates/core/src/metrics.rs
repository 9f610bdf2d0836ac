//! Partition agreement scores, the oracle mis-clustered set, and the two
//! reference-guided tuning scans (number of clusters, view weights).

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{ClusteringResult, MvbscOptions, PreparedViews};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{DistanceModel, MembershipMatrix, SimilarityView};
use crate::seed::streams;
use crate::weights::WeightVector;

/// Normalized mutual information and whether it hit the single-cluster case.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NmiScore {
    pub value: f64,
    /// Set when either partition has one cluster (entropy zero); `value` is 0.
    pub degenerate: bool,
}

/// `confusion[a][b] = |{i : x_i = a, y_i = b}|`.
pub fn confusion(x: &MembershipMatrix, y: &MembershipMatrix) -> Result<Vec<Vec<u64>>> {
    linalg::check_same_dim("confusion (node counts)", x.n(), y.n())?;
    let mut c = vec![vec![0u64; y.k()]; x.k()];
    for (&a, &b) in x.labels().iter().zip(y.labels()) {
        c[a][b] += 1;
    }
    Ok(c)
}

/// `Σ n_kl log(n·n_kl / (n_k n_l)) / √(Σ n_k log(n_k/n) · Σ n_l log(n_l/n))`,
/// natural logarithm, clamped to `[0, 1]`.
pub fn nmi(x: &MembershipMatrix, x0: &MembershipMatrix) -> Result<NmiScore> {
    let c = confusion(x, x0)?;
    let n = x.n() as f64;
    let rows: Vec<f64> = x.sizes().iter().map(|&s| s as f64).collect();
    let cols: Vec<f64> = x0.sizes().iter().map(|&s| s as f64).collect();
    let entropy = |sizes: &[f64]| -> f64 { sizes.iter().map(|&s| s * (s / n).ln()).sum() };
    let (hx, hy) = (entropy(&rows), entropy(&cols));
    if x.k() == 1 || x0.k() == 1 {
        return Ok(NmiScore {
            value: 0.0,
            degenerate: true,
        });
    }
    let mut mi = 0.0;
    for (a, row) in c.iter().enumerate() {
        for (b, &nab) in row.iter().enumerate() {
            if nab > 0 {
                let nab = nab as f64;
                mi += nab * (n * nab / (rows[a] * cols[b])).ln();
            }
        }
    }
    Ok(NmiScore {
        value: (mi / (hx * hy).sqrt()).clamp(0.0, 1.0),
        degenerate: false,
    })
}

/// Fraction of nodes on which `x` agrees with `x0` under the best one-to-one
/// relabeling; unequal cluster counts are padded with empty clusters.
pub fn matched_accuracy(x: &MembershipMatrix, x0: &MembershipMatrix) -> Result<f64> {
    let c = confusion(x, x0)?;
    let k = x.k().max(x0.k());
    let square: Vec<Vec<u64>> = (0..k)
        .map(|a| (0..k).map(|b| c.get(a).and_then(|r| r.get(b)).copied().unwrap_or(0)).collect())
        .collect();
    let perm = linalg::best_label_matching(&square)?;
    let hits: u64 = perm.iter().enumerate().map(|(a, &b)| square[a][b]).sum();
    Ok(hits as f64 / x.n() as f64)
}

/// Nodes whose k-means centroid lies at least `(2 n_max)^{-1/2}` from their
/// row of `U*·Q`, where `U* = Z*Δ⁻¹` and `Q` aligns `U*` to the embedding.
pub fn misclustered_set_oracle(result: &ClusteringResult, z_true: &MembershipMatrix) -> Result<Vec<usize>> {
    let n = z_true.n();
    linalg::check_same_dim("misclustered_set_oracle (nodes)", n, result.labels.n())?;
    let k = result.embedding.ncols();
    linalg::check_same_dim("misclustered_set_oracle (K)", z_true.k(), k)?;
    let u_star = z_true.normalized_basis();
    let q = linalg::procrustes_align(result.embedding.as_ref(), u_star.as_ref())?;
    let aligned = &u_star * &q;
    let threshold = 1.0 / (2.0 * z_true.n_max() as f64).sqrt();
    Ok((0..n)
        .filter(|&i| {
            let g = result.labels.label(i);
            let d2: f64 = (0..k)
                .map(|c| (result.centroids[(g, c)] - aligned[(i, c)]).powi(2))
                .sum();
            d2.sqrt() >= threshold
        })
        .collect())
}

/// Outcome of [`select_k`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectKResult {
    pub chosen_k: usize,
    /// `(K, NMI)` for every scanned `K`, ascending in `K`.
    pub trace: Vec<(usize, f64)>,
}

/// Candidate cluster counts `⌈(1−span)k⌉ ..= ⌊(1+span)k⌋` spaced by `step`.
pub fn k_scan_range(k_center: usize, span: f64, step: usize) -> Result<Vec<usize>> {
    if !(span.is_finite() && (0.0..1.0).contains(&span)) {
        return Err(Error::config(format!("span must be in [0, 1), got {span}")));
    }
    if step == 0 {
        return Err(Error::config("K scan step must be positive"));
    }
    // Guard against representation error such as 0.8·25 = 20.000000000000004.
    let lo = ((1.0 - span) * k_center as f64 - 1e-9).ceil().max(1.0) as usize;
    let hi = ((1.0 + span) * k_center as f64 + 1e-9).floor() as usize;
    let ks: Vec<usize> = (lo..=hi).step_by(step).collect();
    if ks.is_empty() {
        return Err(Error::config(format!("empty K scan range around {k_center}")));
    }
    Ok(ks)
}

/// Runs the pipeline for each candidate `K` and keeps the highest NMI against
/// `reference` (smaller `K` on ties). Candidates for which every view is
/// degenerate (more groups than signal) are left out of the trace.
pub fn select_k(
    views: &[SimilarityView],
    dm: &DistanceModel,
    reference: &MembershipMatrix,
    k_center: usize,
    span: f64,
    step: usize,
    opts: &MvbscOptions,
) -> Result<SelectKResult> {
    let ks = k_scan_range(k_center, span, step)?;
    let scores = ks
        .par_iter()
        .map(|&k| {
            let mut o = opts.clone();
            o.k = k;
            match crate::cluster::mvbsc(views, dm, &o) {
                Ok(r) => Ok(Some((k, nmi(&r.labels, reference)?.value))),
                Err(Error::DegenerateView { .. }) => {
                    log::warn!("K = {k} skipped: no view carries {k} groups of signal");
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<(usize, f64)> = scores.into_iter().flatten().collect();
    if scores.is_empty() {
        return Err(Error::DegenerateView {
            views: (0..views.len()).collect(),
            reason: format!("every candidate K in {ks:?} is degenerate"),
        });
    }
    let mut best = scores[0];
    for &(k, s) in &scores[1..] {
        if s > best.1 {
            best = (k, s);
        }
    }
    Ok(SelectKResult {
        chosen_k: best.0,
        trace: scores,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Nmi,
    Accuracy,
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::Nmi => "nmi",
            Criterion::Accuracy => "accuracy",
        })
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nmi" => Ok(Criterion::Nmi),
            "accuracy" => Ok(Criterion::Accuracy),
            other => Err(Error::config(format!("unknown criterion {other:?}"))),
        }
    }
}

impl Criterion {
    pub fn score(self, x: &MembershipMatrix, reference: &MembershipMatrix) -> Result<f64> {
        match self {
            Criterion::Nmi => Ok(nmi(x, reference)?.value),
            Criterion::Accuracy => matched_accuracy(x, reference),
        }
    }
}

/// Points of the simplex `{λ ≥ 0, Σλ = 1}` with coordinates on multiples of `step`.
pub fn simplex_grid(m: usize, step: f64) -> Result<Vec<Vec<f64>>> {
    if m == 0 {
        return Err(Error::config("simplex grid needs at least one view"));
    }
    if m > 3 {
        return Err(Error::config(format!(
            "grid search over {m} views is too large; use the snr or q weight rules"
        )));
    }
    let units = (1.0 / step).round();
    if !(step > 0.0) || (units * step - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("grid step {step} must divide 1")));
    }
    let units = units as usize;
    let mut out = Vec::new();
    let mut push = |counts: &[usize]| {
        let mut l: Vec<f64> = counts.iter().map(|&c| c as f64 / units as f64).collect();
        // Exact simplex: let the last coordinate absorb rounding.
        let head: f64 = l[..m - 1].iter().sum();
        l[m - 1] = 1.0 - head;
        out.push(l);
    };
    match m {
        1 => push(&[units]),
        2 => (0..=units).for_each(|a| push(&[a, units - a])),
        _ => {
            for a in 0..=units {
                for b in 0..=units - a {
                    push(&[a, b, units - a - b]);
                }
            }
        }
    }
    Ok(out)
}

/// Outcome of [`lambda_grid_search`].
#[derive(Clone, Debug)]
pub struct GridSearchResult {
    pub best: WeightVector,
    pub best_score: f64,
    /// Clustering at the best grid point (absent when `m = 1`).
    pub best_result: Option<ClusteringResult>,
    /// `(λ, score)` in grid order.
    pub trace: Vec<(Vec<f64>, f64)>,
}

/// Best fixed weights on a simplex grid, judged against `reference`.
pub fn lambda_grid_search(
    prepared: &PreparedViews<'_>,
    reference: &MembershipMatrix,
    grid_step: f64,
    criterion: Criterion,
) -> Result<GridSearchResult> {
    let m = prepared.m();
    if m == 1 {
        return Ok(GridSearchResult {
            best: WeightVector::new(vec![1.0])?,
            best_score: f64::NAN,
            best_result: None,
            trace: Vec::new(),
        });
    }
    let grid = simplex_grid(m, grid_step)?;
    let runs = grid
        .par_iter()
        .map(|l| {
            let active_mass: f64 = prepared.active.iter().map(|&s| l[s]).sum();
            if active_mass <= 0.0 {
                return Ok(None);
            }
            let r = prepared.run_with_weights(&WeightVector::new(l.clone())?, streams::FINAL_KMEANS)?;
            let score = criterion.score(&r.labels, reference)?;
            Ok(Some((score, r)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best: Option<(usize, f64)> = None;
    let mut trace = Vec::with_capacity(grid.len());
    for (i, (l, run)) in grid.iter().zip(&runs).enumerate() {
        let score = run.as_ref().map_or(f64::NAN, |r| r.0);
        trace.push((l.clone(), score));
        if run.is_some() && best.is_none_or(|b| score > b.1) {
            best = Some((i, score));
        }
    }
    let (i, score) = best.ok_or_else(|| Error::config("no grid point puts weight on an active view"))?;
    let result = runs.into_iter().nth(i).flatten().map(|r| r.1);
    Ok(GridSearchResult {
        best: WeightVector::new(grid[i].clone())?,
        best_score: score,
        best_result: result,
        trace,
    })
}
