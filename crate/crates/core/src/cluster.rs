//! Per-view spectral embeddings, weighted projector fusion, k-means and the
//! end-to-end multi-view pipeline.

use faer::{Mat, MatRef};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::banding::{band, BandwidthRule};
use crate::error::{Error, Result};
use crate::linalg::{self, EigenOrder, SymMatrix};
use crate::model::{DistanceModel, MembershipMatrix, SimilarityView};
use crate::seed::{derive_seed, rng_from_seed, streams};
use crate::weights::{
    estimate_sigma, lambda_q, lambda_snr, zero_noise_weights, ViewDiagnostics, WeightRule,
    WeightVector,
};

/// Gap between the K-th and (K+1)-th fused eigenvalues below which the
/// fused subspace is reported as ambiguous.
pub const AMBIGUITY_GAP: f64 = 1e-12;

/// Views whose `γ̂` falls at or below this fraction of `L` are degenerate.
pub const DEGENERATE_GAMMA_REL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KMeansParams {
    pub restarts: usize,
    pub max_iter: usize,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams {
            restarts: 25,
            max_iter: 300,
        }
    }
}

#[derive(Clone, Debug)]
pub struct KMeansResult {
    /// Labels renumbered by first appearance.
    pub labels: MembershipMatrix,
    /// `K × d` centroids, row `k` for cluster `k`.
    pub centroids: Mat<f64>,
    /// `Σ_i ‖x_i − a_{g_i}‖²`.
    pub objective: f64,
    /// Objective after every Lloyd iteration of the winning restart.
    pub trace: Vec<f64>,
    /// Restart that produced the result.
    pub best_restart: usize,
}

struct Lloyd<'a> {
    x: &'a [f64],
    n: usize,
    d: usize,
    k: usize,
}

impl Lloyd<'_> {
    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    fn dist2(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    }

    fn seed_plus_plus(&self, rng: &mut impl Rng) -> Vec<f64> {
        let (n, d, k) = (self.n, self.d, self.k);
        let mut centers = Vec::with_capacity(k * d);
        let mut chosen = vec![false; n];
        let first = rng.random_range(0..n);
        chosen[first] = true;
        centers.extend_from_slice(self.row(first));
        let mut best: Vec<f64> = (0..n).map(|i| Self::dist2(self.row(i), self.row(first))).collect();
        for _ in 1..k {
            let total: f64 = best.iter().sum();
            let pick = if total > 0.0 {
                let mut u = rng.random::<f64>() * total;
                let mut p = n - 1;
                for (i, &b) in best.iter().enumerate() {
                    if b > 0.0 {
                        if u < b {
                            p = i;
                            break;
                        }
                        u -= b;
                    }
                }
                // Rounding may leave `p` on a zero-weight point; fall back to the last positive.
                if best[p] == 0.0 {
                    p = (0..n).rev().find(|&i| best[i] > 0.0).unwrap_or(p);
                }
                p
            } else {
                (0..n).find(|&i| !chosen[i]).unwrap_or(0)
            };
            chosen[pick] = true;
            let c = self.row(pick).to_vec();
            for i in 0..n {
                let dd = Self::dist2(self.row(i), &c);
                if dd < best[i] {
                    best[i] = dd;
                }
            }
            centers.extend_from_slice(&c);
        }
        centers
    }

    /// Runs Lloyd iterations from `centers`; returns labels, centers, objective, trace.
    fn run(&self, mut centers: Vec<f64>, max_iter: usize) -> Result<(Vec<usize>, Vec<f64>, f64, Vec<f64>)> {
        let (n, d, k) = (self.n, self.d, self.k);
        let mut labels = vec![usize::MAX; n];
        let mut trace: Vec<f64> = Vec::new();
        for _ in 0..max_iter.max(1) {
            let mut changed = false;
            for i in 0..n {
                let xi = self.row(i);
                let mut best = (f64::INFINITY, 0usize);
                for c in 0..k {
                    let dd = Self::dist2(xi, &centers[c * d..(c + 1) * d]);
                    if dd < best.0 {
                        best = (dd, c);
                    }
                }
                if labels[i] != best.1 {
                    labels[i] = best.1;
                    changed = true;
                }
            }
            self.repair_empty(&mut labels, &centers);
            centers = self.update(&labels);
            let obj = self.objective(&labels, &centers);
            if let Some(&prev) = trace.last() {
                if obj > prev * (1.0 + 1e-12) + 1e-15 {
                    return Err(Error::Numerical(format!(
                        "k-means objective increased from {prev} to {obj}"
                    )));
                }
            }
            trace.push(obj);
            if !changed {
                break;
            }
        }
        let obj = *trace.last().unwrap();
        Ok((labels, centers, obj, trace))
    }

    /// Moves the point farthest from its centroid into each empty cluster.
    fn repair_empty(&self, labels: &mut [usize], centers: &[f64]) {
        let d = self.d;
        loop {
            let mut sizes = vec![0usize; self.k];
            for &l in labels.iter() {
                sizes[l] += 1;
            }
            let Some(empty) = sizes.iter().position(|&s| s == 0) else {
                return;
            };
            let far = (0..self.n)
                .filter(|&i| sizes[labels[i]] > 1)
                .max_by(|&a, &b| {
                    let da = Self::dist2(self.row(a), &centers[labels[a] * d..(labels[a] + 1) * d]);
                    let db = Self::dist2(self.row(b), &centers[labels[b] * d..(labels[b] + 1) * d]);
                    da.partial_cmp(&db).unwrap().then(b.cmp(&a))
                })
                .expect("n >= K leaves a cluster with two points");
            labels[far] = empty;
        }
    }

    fn update(&self, labels: &[usize]) -> Vec<f64> {
        let d = self.d;
        let mut centers = vec![0.0; self.k * d];
        let mut sizes = vec![0usize; self.k];
        for i in 0..self.n {
            let c = labels[i];
            sizes[c] += 1;
            for (acc, v) in centers[c * d..(c + 1) * d].iter_mut().zip(self.row(i)) {
                *acc += v;
            }
        }
        for c in 0..self.k {
            for v in &mut centers[c * d..(c + 1) * d] {
                *v /= sizes[c] as f64;
            }
        }
        centers
    }

    fn objective(&self, labels: &[usize], centers: &[f64]) -> f64 {
        let d = self.d;
        (0..self.n)
            .map(|i| Self::dist2(self.row(i), &centers[labels[i] * d..(labels[i] + 1) * d]))
            .sum()
    }
}

/// Lloyd's algorithm with k-means++ seeding on the rows of `points`; keeps the
/// lowest objective over `restarts` runs (earliest restart on ties).
pub fn kmeans(points: MatRef<'_, f64>, k: usize, params: KMeansParams, seed: u64) -> Result<KMeansResult> {
    let (n, d) = (points.nrows(), points.ncols());
    if k == 0 || n < k {
        return Err(Error::config(format!("k-means needs 1 <= K <= n, got K = {k}, n = {n}")));
    }
    if params.restarts == 0 {
        return Err(Error::config("k-means needs at least one restart"));
    }
    let mut x = Vec::with_capacity(n * d);
    for i in 0..n {
        for j in 0..d {
            let v = points[(i, j)];
            if !v.is_finite() {
                return Err(Error::input(format!("point {i} has a non-finite coordinate")));
            }
            x.push(v);
        }
    }
    let lloyd = Lloyd { x: &x, n, d, k };
    let mut best: Option<(Vec<usize>, Vec<f64>, f64, Vec<f64>, usize)> = None;
    for r in 0..params.restarts {
        let mut rng = rng_from_seed(derive_seed(seed, streams::RESTART + r as u64));
        let init = lloyd.seed_plus_plus(&mut rng);
        let (labels, centers, obj, trace) = lloyd.run(init, params.max_iter)?;
        if best.as_ref().is_none_or(|b| obj < b.2) {
            best = Some((labels, centers, obj, trace, r));
        }
    }
    let (labels, centers, objective, trace, best_restart) = best.unwrap();

    // Renumber clusters by first appearance.
    let mut map = vec![usize::MAX; k];
    let mut next = 0;
    for &l in &labels {
        if map[l] == usize::MAX {
            map[l] = next;
            next += 1;
        }
    }
    let labels: Vec<usize> = labels.iter().map(|&l| map[l]).collect();
    let mut centroids = Mat::zeros(k, d);
    for (old, &new) in map.iter().enumerate() {
        for j in 0..d {
            centroids[(new, j)] = centers[old * d + j];
        }
    }
    Ok(KMeansResult {
        labels: MembershipMatrix::new(labels, k)?,
        centroids,
        objective,
        trace,
        best_restart,
    })
}

/// Top-`K` eigenpairs by absolute value of `B_h(W)`.
pub fn view_embedding(w: &SymMatrix, dm: &DistanceModel, h: f64, k: usize) -> Result<linalg::EigenPairs> {
    linalg::eig_sym_topk(&band(w, dm, h)?, k, EigenOrder::ByAbsValue)
}

/// Output of [`fuse_projectors`].
#[derive(Clone, Debug)]
pub struct Fusion {
    /// `n × K` orthonormal basis of the fused top-K eigenspace.
    pub embedding: Mat<f64>,
    /// Leading `K` eigenvalues of `Σ λ_s Û^s Û^sᵀ`, descending.
    pub eigenvalues: Vec<f64>,
    /// `(K+1)`-th eigenvalue, when the fused matrix has one.
    pub next_eigenvalue: Option<f64>,
    pub ambiguous: bool,
}

fn check_embeddings(embeddings: &[MatRef<'_, f64>], lambda: &[f64], k: usize) -> Result<usize> {
    if embeddings.is_empty() {
        return Err(Error::config("fusion needs at least one embedding"));
    }
    linalg::check_same_dim("fuse_projectors (weights per view)", embeddings.len(), lambda.len())?;
    let n = embeddings[0].nrows();
    for e in embeddings {
        linalg::check_same_dim("fuse_projectors (rows)", n, e.nrows())?;
        linalg::check_same_dim("fuse_projectors (columns)", k, e.ncols())?;
    }
    WeightVector::new(lambda.to_vec())?;
    Ok(n)
}

/// `Σ_s λ_s Û^s Û^sᵀ` formed explicitly.
pub fn fused_matrix(embeddings: &[MatRef<'_, f64>], lambda: &[f64]) -> Result<SymMatrix> {
    let k = embeddings.first().map_or(0, |e| e.ncols());
    let n = check_embeddings(embeddings, lambda, k)?;
    let mut m = Mat::<f64>::zeros(n, n);
    for (e, &l) in embeddings.iter().zip(lambda) {
        if l > 0.0 {
            m += faer::Scale(l) * (*e * e.transpose());
        }
    }
    SymMatrix::symmetrized(m.as_ref())
}

/// Top-`K` eigenvectors of `Σ_s λ_s Û^s Û^sᵀ`, computed from the SVD of the
/// stacked `[√λ_s Û^s]`; views with zero weight are dropped.
pub fn fuse_projectors(embeddings: &[MatRef<'_, f64>], lambda: &[f64], k: usize) -> Result<Fusion> {
    let n = check_embeddings(embeddings, lambda, k)?;
    let used: Vec<usize> = (0..embeddings.len()).filter(|&s| lambda[s] > 0.0).collect();
    let cols = used.len() * k;
    let stacked = Mat::from_fn(n, cols, |i, c| {
        let s = used[c / k];
        lambda[s].sqrt() * embeddings[s][(i, c % k)]
    });
    let svd = stacked
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("fusion SVD failed: {e:?}")))?;
    let sv = svd.S().column_vector();
    let r = sv.nrows();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| sv[b].partial_cmp(&sv[a]).unwrap().then(a.cmp(&b)));
    let u = svd.U();
    let mut embedding = Mat::from_fn(n, k, |i, c| u[(i, order[c])]);
    linalg::fix_signs(&mut embedding);
    let eigenvalues: Vec<f64> = order[..k].iter().map(|&c| sv[c] * sv[c]).collect();
    // Beyond the stacked rank the fused matrix has zero eigenvalues.
    let next_eigenvalue = if r > k {
        Some(sv[order[k]] * sv[order[k]])
    } else if n > k {
        Some(0.0)
    } else {
        None
    };
    let ambiguous = next_eigenvalue.is_some_and(|next| eigenvalues[k - 1] - next <= AMBIGUITY_GAP);
    if ambiguous {
        log::warn!("fused K-th and (K+1)-th eigenvalues coincide; subspace is ambiguous");
    }
    Ok(Fusion {
        embedding,
        eigenvalues,
        next_eigenvalue,
        ambiguous,
    })
}

/// Options for [`mvbsc`].
#[derive(Clone, Debug, PartialEq)]
pub struct MvbscOptions {
    pub k: usize,
    pub weight_rule: WeightRule,
    pub bandwidth_rule: BandwidthRule,
    pub kmeans: KMeansParams,
    pub seed: u64,
    /// Largest cluster size used by the bandwidth formula; `⌈n/K⌉` when unset.
    pub n_max: Option<usize>,
}

impl MvbscOptions {
    pub fn new(k: usize) -> Self {
        MvbscOptions {
            k,
            weight_rule: WeightRule::default(),
            bandwidth_rule: BandwidthRule::default(),
            kmeans: KMeansParams::default(),
            seed: 0,
            n_max: None,
        }
    }
}

/// Output of the multi-view pipeline or of a baseline.
#[derive(Clone, Debug)]
pub struct ClusteringResult {
    pub labels: MembershipMatrix,
    /// `n × K` fused embedding `Û*_λ`.
    pub embedding: Mat<f64>,
    /// `K × K` k-means centroids `Â_λ`.
    pub centroids: Mat<f64>,
    /// One weight per input view; excluded views carry zero.
    pub weights: WeightVector,
    /// One bandwidth per input view (empty for baselines).
    pub bandwidths: Vec<f64>,
    pub kmeans_objective: f64,
    /// Diagnostics of the active views.
    pub diagnostics: Vec<ViewDiagnostics>,
    pub active_views: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Bandwidths, embeddings and `γ̂` of every view, shared by all weight rules.
pub struct PreparedViews<'a> {
    views: &'a [SimilarityView],
    k: usize,
    kmeans: KMeansParams,
    seed: u64,
    pub bandwidths: Vec<f64>,
    pub embeddings: Vec<Mat<f64>>,
    pub gammas: Vec<f64>,
    pub active: Vec<usize>,
    pub warnings: Vec<String>,
}

impl<'a> PreparedViews<'a> {
    pub fn new(views: &'a [SimilarityView], dm: &DistanceModel, opts: &MvbscOptions) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::config("at least one view is required"));
        }
        let n = dm.n();
        for v in views {
            linalg::check_same_dim("mvbsc (view size vs distance model)", n, v.n())?;
        }
        let k = opts.k;
        if k == 0 || k > n {
            return Err(Error::config(format!("K = {k} must satisfy 1 <= K <= n = {n}")));
        }
        let n_max = opts.n_max.unwrap_or(n.div_ceil(k));
        let mut bandwidths = Vec::with_capacity(views.len());
        let mut embeddings = Vec::with_capacity(views.len());
        let mut gammas = Vec::with_capacity(views.len());
        for v in views {
            let h = opts.bandwidth_rule.bandwidth(dm, n_max, v.alpha, v.l_bound)?;
            let pairs = view_embedding(&v.w, dm, h, k)?;
            bandwidths.push(h);
            gammas.push(pairs.values[k - 1].abs());
            embeddings.push(pairs.vectors);
        }
        let mut warnings = Vec::new();
        let degenerate: Vec<usize> = (0..views.len())
            .filter(|&s| gammas[s] <= DEGENERATE_GAMMA_REL * views[s].l_bound.max(1.0))
            .collect();
        if !degenerate.is_empty() {
            if degenerate.len() == views.len() {
                return Err(Error::DegenerateView {
                    views: degenerate,
                    reason: "K-th eigenvalue of the banded view is zero".into(),
                });
            }
            let msg = format!("views {degenerate:?} excluded: K-th banded eigenvalue is zero");
            log::warn!("{msg}");
            warnings.push(msg);
        }
        let active = (0..views.len()).filter(|s| !degenerate.contains(s)).collect();
        Ok(PreparedViews {
            views,
            k,
            kmeans: opts.kmeans,
            seed: opts.seed,
            bandwidths,
            embeddings,
            gammas,
            active,
            warnings,
        })
    }

    pub fn m(&self) -> usize {
        self.views.len()
    }

    /// Expands weights over active views to one weight per input view.
    fn expand(&self, active_lambda: &[f64]) -> Result<WeightVector> {
        let mut full = vec![0.0; self.m()];
        for (&s, &l) in self.active.iter().zip(active_lambda) {
            full[s] = l;
        }
        WeightVector::new(full)
    }

    pub fn uniform_weights(&self) -> Result<WeightVector> {
        self.expand(WeightVector::uniform(self.active.len())?.as_slice())
    }

    /// `σ̂`, `Ω̂` and `γ̂` of every active view under partition `z`.
    pub fn diagnostics(&self, z: &MembershipMatrix) -> Result<Vec<ViewDiagnostics>> {
        self.active
            .iter()
            .map(|&s| {
                let est = estimate_sigma(&self.views[s].w, z)?;
                let k = z.k();
                Ok(ViewDiagnostics {
                    view: s,
                    sigma_hat: est.sigma_hat,
                    gamma_hat: self.gammas[s],
                    h: self.bandwidths[s],
                    omega_hat: (0..k)
                        .map(|a| (0..k).map(|b| est.omega_hat.get(a, b)).collect())
                        .collect(),
                })
            })
            .collect()
    }

    /// Fuses with weights `lambda` (one per input view) and runs k-means.
    pub fn run_with_weights(&self, lambda: &WeightVector, kmeans_stream: u64) -> Result<ClusteringResult> {
        linalg::check_same_dim("run_with_weights", self.m(), lambda.len())?;
        let mut warnings = self.warnings.clone();
        let mut l: Vec<f64> = self.active.iter().map(|&s| lambda.as_slice()[s]).collect();
        let total: f64 = l.iter().sum();
        if (total - 1.0).abs() > crate::weights::SIMPLEX_TOL {
            if total <= 0.0 {
                return Err(Error::DegenerateView {
                    views: (0..self.m()).filter(|s| !self.active.contains(s)).collect(),
                    reason: "all weight sits on excluded views".into(),
                });
            }
            let msg = format!("weights renormalized over active views {:?}", self.active);
            log::warn!("{msg}");
            warnings.push(msg);
            l = WeightVector::normalized(&l)?.into_vec();
        }
        let embeddings: Vec<MatRef<'_, f64>> =
            self.active.iter().map(|&s| self.embeddings[s].as_ref()).collect();
        let fusion = fuse_projectors(&embeddings, &l, self.k)?;
        if fusion.ambiguous {
            warnings.push("fused eigenspace is ambiguous at K".into());
        }
        let km = kmeans(
            fusion.embedding.as_ref(),
            self.k,
            self.kmeans,
            derive_seed(self.seed, kmeans_stream),
        )?;
        Ok(ClusteringResult {
            labels: km.labels,
            embedding: fusion.embedding,
            centroids: km.centroids,
            weights: self.expand(&l)?,
            bandwidths: self.bandwidths.clone(),
            kmeans_objective: km.objective,
            diagnostics: Vec::new(),
            active_views: self.active.clone(),
            warnings,
        })
    }

    /// Uniform-weight clustering whose labels feed the noise estimates.
    pub fn pilot(&self) -> Result<ClusteringResult> {
        self.run_with_weights(&self.uniform_weights()?, streams::PILOT_KMEANS)
    }

    /// Closed-form weights for `rule` from diagnostics; zero-noise views take
    /// all the mass.
    pub fn rule_weights(&self, rule: &WeightRule, diags: &[ViewDiagnostics]) -> Result<(WeightVector, Option<String>)> {
        let per_bandwidth = matches!(rule, WeightRule::Q);
        let attempt = match rule {
            WeightRule::Snr => lambda_snr(diags),
            WeightRule::Q => lambda_q(diags),
            WeightRule::Uniform => return Ok((self.uniform_weights()?, None)),
            WeightRule::Fixed(l) => {
                linalg::check_same_dim("fixed weights (one per view)", self.m(), l.len())?;
                return Ok((WeightVector::new(l.clone())?, None));
            }
        };
        match attempt {
            Ok(w) => Ok((self.expand(w.as_slice())?, None)),
            Err(Error::DegenerateView { views, reason }) if reason.contains("noise") => {
                let msg = format!("views {views:?} have zero estimated noise; weight assigned to them");
                log::warn!("{msg}");
                let w = zero_noise_weights(diags, per_bandwidth)?;
                Ok((self.expand(w.as_slice())?, Some(msg)))
            }
            Err(e) => Err(e),
        }
    }

    /// Full pipeline for one weight rule, reusing `pilot` when given.
    pub fn run(&self, rule: &WeightRule, pilot: Option<&ClusteringResult>) -> Result<ClusteringResult> {
        if rule.needs_pilot() {
            let owned;
            let pilot = match pilot {
                Some(p) => p,
                None => {
                    owned = self.pilot()?;
                    &owned
                }
            };
            let diags = self.diagnostics(&pilot.labels)?;
            let (lambda, note) = self.rule_weights(rule, &diags)?;
            let mut out = self.run_with_weights(&lambda, streams::FINAL_KMEANS)?;
            out.warnings.extend(note);
            out.diagnostics = diags;
            Ok(out)
        } else {
            let (lambda, _) = self.rule_weights(rule, &[])?;
            let mut out = self.run_with_weights(&lambda, streams::FINAL_KMEANS)?;
            out.diagnostics = self.diagnostics(&out.labels)?;
            Ok(out)
        }
    }
}

/// Runs the multi-view banded spectral clustering pipeline.
pub fn mvbsc(views: &[SimilarityView], dm: &DistanceModel, opts: &MvbscOptions) -> Result<ClusteringResult> {
    PreparedViews::new(views, dm, opts)?.run(&opts.weight_rule, None)
}

/// Uniform-weight pipeline labels used to estimate noise levels.
pub fn pilot_clustering_for_sigma(
    views: &[SimilarityView],
    dm: &DistanceModel,
    opts: &MvbscOptions,
) -> Result<MembershipMatrix> {
    Ok(PreparedViews::new(views, dm, opts)?.pilot()?.labels)
}
