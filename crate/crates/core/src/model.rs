//! Multi-view stochastic block model: partitions, prior distances, block
//! intensities, observed views and the generators behind simulation models
//! M1 to M5.

use std::collections::HashMap;
use std::fmt;
use std::hash::Hash;
use std::str::FromStr;

use faer::Mat;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, SymMatrix};
use crate::seed::rng_from_seed;

/// Hard partition of `n` nodes into `k` nonempty groups.
///
/// Labels are stored 0-based; files and reports use 1-based cluster ids.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MembershipMatrix {
    labels: Vec<usize>,
    k: usize,
}

impl MembershipMatrix {
    /// Checks that every label is below `k` and every group is populated.
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::config("a partition needs at least one group"));
        }
        let mut sizes = vec![0usize; k];
        for (i, &g) in labels.iter().enumerate() {
            if g >= k {
                return Err(Error::input(format!(
                    "node {i} has label {g}, outside 0..{k}"
                )));
            }
            sizes[g] += 1;
        }
        if let Some(empty) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::input(format!("group {empty} is empty")));
        }
        Ok(MembershipMatrix { labels, k })
    }

    /// Compacts arbitrary labels to `0..k` in order of first appearance.
    pub fn from_labels<T: Eq + Hash + Clone>(raw: &[T]) -> Result<Self> {
        let mut map: HashMap<T, usize> = HashMap::new();
        let labels = raw
            .iter()
            .map(|l| {
                let next = map.len();
                *map.entry(l.clone()).or_insert(next)
            })
            .collect();
        MembershipMatrix::new(labels, map.len())
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0usize; self.k];
        for &g in &self.labels {
            s[g] += 1;
        }
        s
    }

    pub fn n_min(&self) -> usize {
        self.sizes().into_iter().min().unwrap_or(0)
    }

    pub fn n_max(&self) -> usize {
        self.sizes().into_iter().max().unwrap_or(0)
    }

    /// Node indices of each group, ascending.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut g = vec![Vec::new(); self.k];
        for (i, &l) in self.labels.iter().enumerate() {
            g[l].push(i);
        }
        g
    }

    /// Same partition with groups renumbered by first appearance.
    pub fn canonical(&self) -> MembershipMatrix {
        MembershipMatrix::from_labels(&self.labels).expect("relabeling keeps groups nonempty")
    }

    /// Relabels node `i` of the result as node `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> MembershipMatrix {
        MembershipMatrix {
            labels: perm.iter().map(|&p| self.labels[p]).collect(),
            k: self.k,
        }
    }

    /// `Z·Δ⁻¹`: the orthonormal basis of the membership subspace.
    pub fn normalized_basis(&self) -> Mat<f64> {
        let sizes = self.sizes();
        Mat::from_fn(self.n(), self.k, |i, c| {
            if self.labels[i] == c {
                1.0 / (sizes[c] as f64).sqrt()
            } else {
                0.0
            }
        })
    }

    /// `P_Z = Z·diag(1ᵀZ)⁻¹·Zᵀ`.
    pub fn projector(&self) -> SymMatrix {
        let sizes = self.sizes();
        SymMatrix::from_upper_fn(self.n(), |i, j| {
            if self.labels[i] == self.labels[j] {
                1.0 / sizes[self.labels[i]] as f64
            } else {
                0.0
            }
        })
    }

    /// Mean node index of every group (0-based indices).
    pub fn mean_index_centroids(&self) -> Vec<f64> {
        let sizes = self.sizes();
        let mut sums = vec![0.0; self.k];
        for (i, &g) in self.labels.iter().enumerate() {
            sums[g] += i as f64;
        }
        sums.iter()
            .zip(&sizes)
            .map(|(s, &n)| s / n as f64)
            .collect()
    }
}

/// Prior pairwise distances between nodes.
#[derive(Clone, Debug)]
pub struct DistanceModel {
    d: SymMatrix,
    d0: f64,
    delta: Option<f64>,
}

impl DistanceModel {
    /// Validates nonnegativity, zero diagonal and strictly positive
    /// off-diagonal distances, and records `d0 = min_{i<j} d_ij`.
    pub fn new(d: SymMatrix) -> Result<Self> {
        let n = d.dim();
        if n < 2 {
            return Err(Error::input("a distance model needs at least two nodes"));
        }
        let mut d0 = f64::INFINITY;
        for j in 0..n {
            if d.get(j, j) != 0.0 {
                return Err(Error::input(format!(
                    "distance d({j},{j}) = {} must be 0",
                    d.get(j, j)
                )));
            }
            for i in 0..j {
                let v = d.get(i, j);
                if !v.is_finite() || v <= 0.0 {
                    return Err(Error::input(format!(
                        "distance d({i},{j}) = {v} must be finite and positive"
                    )));
                }
                d0 = d0.min(v);
            }
        }
        Ok(DistanceModel { d, d0, delta: None })
    }

    pub fn with_delta(mut self, delta: f64) -> Result<Self> {
        self.set_delta(delta)?;
        Ok(self)
    }

    pub fn set_delta(&mut self, delta: f64) -> Result<()> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(Error::config(format!("delta must be positive, got {delta}")));
        }
        if delta <= self.d0 {
            log::warn!(
                "delta = {delta} does not exceed the minimum distance d0 = {}",
                self.d0
            );
        }
        self.delta = Some(delta);
        Ok(())
    }

    /// Sets `delta` to the cluster radius of `z` (see [`Self::cluster_radius`]).
    pub fn with_delta_from_partition(mut self, z: &MembershipMatrix) -> Result<Self> {
        let r = self.cluster_radius(z)?;
        self.set_delta(r.max(self.d0 * 1e-9))?;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.d.dim()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d.get(i, j)
    }

    pub fn d0(&self) -> f64 {
        self.d0
    }

    pub fn delta(&self) -> Option<f64> {
        self.delta
    }

    pub fn matrix(&self) -> &SymMatrix {
        &self.d
    }

    pub fn max_distance(&self) -> f64 {
        self.d.max_abs()
    }

    /// Centroid node of every group: the smallest index among the minimizers
    /// of the within-group distance sum.
    pub fn centroid_nodes(&self, z: &MembershipMatrix) -> Result<Vec<usize>> {
        linalg::check_same_dim("DistanceModel::centroid_nodes", self.n(), z.n())?;
        Ok(z.groups()
            .iter()
            .map(|members| {
                let mut best = (f64::INFINITY, usize::MAX);
                for &i in members {
                    let s: f64 = members.iter().map(|&j| self.get(i, j)).sum();
                    if s < best.0 {
                        best = (s, i);
                    }
                }
                best.1
            })
            .collect())
    }

    /// `max_k max_{i ∈ V_k} d(v_i, v_{c_k})`.
    pub fn cluster_radius(&self, z: &MembershipMatrix) -> Result<f64> {
        let centroids = self.centroid_nodes(z)?;
        Ok(z.labels()
            .iter()
            .enumerate()
            .map(|(i, &g)| self.get(i, centroids[g]))
            .fold(0.0, f64::max))
    }
}

/// `d_ij = |i − j| · scale`.
pub fn index_distance(n: usize, scale: f64) -> Result<DistanceModel> {
    if n < 2 {
        return Err(Error::config("index distance needs n >= 2"));
    }
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::config(format!("distance scale must be positive, got {scale}")));
    }
    DistanceModel::new(SymMatrix::from_upper_fn(n, |i, j| (j - i) as f64 * scale))
}

/// Offset added to `V` codes so that they never mix with numeric chapters.
pub const ICD9_V_OFFSET: i64 = 1000;
/// Offset added to `E` codes.
pub const ICD9_E_OFFSET: i64 = 2000;

const ICD9_SCALE: i64 = 10_000;

/// Numeric form of an ICD9 code in units of 1e-4 (exact decimal arithmetic).
fn icd9_units(code: &str) -> Result<i64> {
    let bad = |why: &str| Error::ingestion("icd9", format!("cannot parse code {code:?}: {why}"));
    let trimmed = code.trim();
    let (offset, body) = match trimmed.chars().next() {
        Some('V') | Some('v') => (ICD9_V_OFFSET, &trimmed[1..]),
        Some('E') | Some('e') => (ICD9_E_OFFSET, &trimmed[1..]),
        Some(_) => (0, trimmed),
        None => return Err(bad("empty code")),
    };
    let (int_part, frac_part) = match body.split_once('.') {
        Some((a, b)) => (a, b),
        None => (body, ""),
    };
    if int_part.is_empty() || !int_part.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad("integer part must be digits"));
    }
    if frac_part.len() > 4 || !frac_part.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad("fractional part must be at most four digits"));
    }
    let whole: i64 = int_part.parse().map_err(|_| bad("integer part too large"))?;
    let mut frac = 0i64;
    for (p, b) in frac_part.bytes().enumerate() {
        frac += (b - b'0') as i64 * 10i64.pow(3 - p as u32);
    }
    Ok((whole + offset) * ICD9_SCALE + frac)
}

/// The numeric form of a code, e.g. `"001.1"` maps to `1.1`.
pub fn icd9_numeric(code: &str) -> Result<f64> {
    Ok(icd9_units(code)? as f64 / ICD9_SCALE as f64)
}

/// `|N(a) − N(b)| + η·I{a ≠ b, N(a) = N(b)}`.
pub fn icd9_pair_distance(a: &str, b: &str, eta: f64) -> Result<f64> {
    let (ua, ub) = (icd9_units(a)?, icd9_units(b)?);
    if a.trim() == b.trim() {
        return Ok(0.0);
    }
    if ua == ub {
        return Ok(eta);
    }
    Ok((ua - ub).abs() as f64 / ICD9_SCALE as f64)
}

/// Distance model over a list of distinct ICD9 codes.
pub fn icd9_distance(codes: &[impl AsRef<str>], eta: f64) -> Result<DistanceModel> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::config(format!("eta must be positive, got {eta}")));
    }
    let units = codes
        .iter()
        .map(|c| icd9_units(c.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let mut seen = HashMap::new();
    for (i, c) in codes.iter().enumerate() {
        if let Some(prev) = seen.insert(c.as_ref().trim(), i) {
            return Err(Error::ingestion(
                "icd9",
                format!("duplicate code {:?} at positions {prev} and {i}", c.as_ref()),
            ));
        }
    }
    DistanceModel::new(SymMatrix::from_upper_fn(codes.len(), |i, j| {
        if i == j {
            0.0
        } else if units[i] == units[j] {
            eta
        } else {
            (units[i] - units[j]).abs() as f64 / ICD9_SCALE as f64
        }
    }))
}

/// `K × K` block intensity matrix `Ω`.
#[derive(Clone, Debug)]
pub struct BlockIntensity {
    pub omega: SymMatrix,
    /// Entry bound `L`.
    pub l_bound: f64,
    /// Decay exponent of the off-diagonal mass.
    pub alpha: f64,
    /// Largest `β ≤ 1` with all eigenvalues in `[β, 1/β]`; nonpositive when
    /// `omega` is not positive definite.
    pub beta: f64,
}

impl BlockIntensity {
    pub fn new(omega: SymMatrix, alpha: f64) -> Result<Self> {
        if !omega.is_finite() {
            return Err(Error::input("block intensity has non-finite entries"));
        }
        let ev = linalg::eigenvalues(&omega)?;
        let (lo, hi) = (ev[0], ev[ev.len() - 1]);
        let beta = if lo > 0.0 { lo.min(1.0 / hi).min(1.0) } else { lo };
        Ok(BlockIntensity {
            l_bound: omega.max_abs(),
            omega,
            alpha,
            beta,
        })
    }

    pub fn k(&self) -> usize {
        self.omega.dim()
    }

    pub fn is_positive_definite(&self) -> bool {
        self.beta > 0.0
    }

    /// Checks symmetry bounds and positive definiteness.
    pub fn validate(&self) -> Result<()> {
        if self.omega.max_abs() > self.l_bound {
            return Err(Error::input("block intensity exceeds its entry bound"));
        }
        if !self.is_positive_definite() {
            return Err(Error::input(format!(
                "block intensity is not positive definite (smallest eigenvalue {})",
                self.beta
            )));
        }
        Ok(())
    }

    /// Largest ratio of `max_k Σ_{l: dist(k,l) > h} |Ω_kl|` to `L·(h/d0)^{−α}`
    /// over the grid of positive centroid distances `h`.
    pub fn decay_tail_ratio(&self, centroid_distance: &SymMatrix, d0: f64) -> Result<f64> {
        linalg::check_same_dim("decay_tail_ratio", self.k(), centroid_distance.dim())?;
        let k = self.k();
        let mut grid: Vec<f64> = (0..k)
            .flat_map(|a| (0..a).map(move |b| (a, b)))
            .map(|(a, b)| centroid_distance.get(a, b))
            .filter(|&h| h > 0.0)
            .collect();
        grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
        grid.dedup();
        let mut worst = 0.0_f64;
        for &h in &grid {
            let bound = self.l_bound * (h / d0).powf(-self.alpha);
            for a in 0..k {
                let tail: f64 = (0..k)
                    .filter(|&b| centroid_distance.get(a, b) > h)
                    .map(|b| self.omega.get(a, b).abs())
                    .sum();
                worst = worst.max(tail / bound);
            }
        }
        Ok(worst)
    }
}

/// `Ω_kk = diag_value`, `Ω_kl = offdiag_scale·|c_k − c_l|^{−(α+1)}` with `c_k`
/// the mean node index of group `k`.
pub fn omega_simulation(
    z: &MembershipMatrix,
    alpha: f64,
    diag_value: f64,
    offdiag_scale: f64,
) -> Result<BlockIntensity> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::config(format!("alpha must be >= 0, got {alpha}")));
    }
    let c = z.mean_index_centroids();
    let k = z.k();
    for a in 0..k {
        for b in 0..a {
            if c[a] == c[b] {
                return Err(Error::Numerical(format!(
                    "groups {b} and {a} share centroid {}; power-law intensity undefined",
                    c[a]
                )));
            }
        }
    }
    let omega = SymMatrix::from_upper_fn(k, |a, b| {
        if a == b {
            diag_value
        } else {
            offdiag_scale * (c[a] - c[b]).abs().powf(-(alpha + 1.0))
        }
    });
    BlockIntensity::new(omega, alpha)
}

/// Population similarity `𝒲 = Z·Ω·Zᵀ`, diagonal included.
#[derive(Clone, Debug)]
pub struct PopulationSimilarity {
    pub script_w: SymMatrix,
    pub n_max: usize,
}

impl PopulationSimilarity {
    pub fn new(z: &MembershipMatrix, omega: &BlockIntensity) -> Result<Self> {
        linalg::check_same_dim("PopulationSimilarity::new", omega.k(), z.k())?;
        let labels = z.labels();
        Ok(PopulationSimilarity {
            script_w: SymMatrix::from_upper_fn(z.n(), |i, j| {
                omega.omega.get(labels[i], labels[j])
            }),
            n_max: z.n_max(),
        })
    }
}

/// Report of the distance-tail check on a population similarity matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct TailReport {
    /// `max_{h,i} tail_i(h) / (L·n_max·((h−2δ)/d0)^{−α})`.
    pub max_ratio: f64,
    /// Grid point attaining `max_ratio`, if any grid point exists.
    pub worst_h: Option<f64>,
    pub grid_points: usize,
}

impl TailReport {
    pub fn passes(&self) -> bool {
        self.max_ratio <= 1.0
    }
}

/// Evaluates `max_i Σ_{j: d_ij > h} |𝒲_ij| ≤ L·n_max·((h−2δ)/d0)^{−α}` on every
/// observed distance `h > 2δ`. Diagonal entries are excluded from the sums.
pub fn validate_population(
    pw: &PopulationSimilarity,
    dm: &DistanceModel,
    alpha: f64,
    l_bound: f64,
) -> Result<TailReport> {
    let n = dm.n();
    linalg::check_same_dim("validate_population", n, pw.script_w.dim())?;
    let delta = dm
        .delta()
        .ok_or_else(|| Error::config("validate_population needs delta on the distance model"))?;
    let two_delta = 2.0 * delta;
    let mut grid: Vec<f64> = (0..n)
        .flat_map(|j| (0..j).map(move |i| (i, j)))
        .map(|(i, j)| dm.get(i, j))
        .filter(|&h| h > two_delta)
        .collect();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();
    if grid.is_empty() {
        return Ok(TailReport {
            max_ratio: 0.0,
            worst_h: None,
            grid_points: 0,
        });
    }
    let bounds: Vec<f64> = grid
        .iter()
        .map(|&h| l_bound * pw.n_max as f64 * ((h - two_delta) / dm.d0()).powf(-alpha))
        .collect();

    let mut worst = (0.0_f64, None);
    let mut row: Vec<(f64, f64)> = Vec::with_capacity(n);
    for i in 0..n {
        row.clear();
        row.extend(
            (0..n)
                .filter(|&j| j != i)
                .map(|j| (dm.get(i, j), pw.script_w.get(i, j).abs())),
        );
        // Walk h downward while accumulating entries with distance > h.
        row.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let mut tail = 0.0;
        let mut p = 0;
        for g in (0..grid.len()).rev() {
            let h = grid[g];
            while p < row.len() && row[p].0 > h {
                tail += row[p].1;
                p += 1;
            }
            let ratio = tail / bounds[g];
            if ratio > worst.0 {
                worst = (ratio, Some(h));
            }
        }
    }
    Ok(TailReport {
        max_ratio: worst.0,
        worst_h: worst.1,
        grid_points: grid.len(),
    })
}

/// One observed similarity matrix.
#[derive(Clone, Debug)]
pub struct SimilarityView {
    pub w: SymMatrix,
    /// Bound `L` on `|w_ij|`.
    pub l_bound: f64,
    /// Common diagonal value `ω₀`.
    pub omega0: f64,
    /// Noise standard deviation, when known (simulations).
    pub sigma: Option<f64>,
    /// Decay exponent, when known or assumed.
    pub alpha: Option<f64>,
}

impl SimilarityView {
    /// Checks a constant diagonal and the entry bound.
    pub fn new(w: SymMatrix, l_bound: f64, sigma: Option<f64>, alpha: Option<f64>) -> Result<Self> {
        let n = w.dim();
        if n == 0 {
            return Err(Error::input("empty similarity matrix"));
        }
        if !w.is_finite() {
            return Err(Error::input("similarity matrix has non-finite entries"));
        }
        let omega0 = w.get(0, 0);
        if let Some(i) = (0..n).find(|&i| w.get(i, i) != omega0) {
            return Err(Error::input(format!(
                "diagonal entry ({i},{i}) = {} differs from ({0},{0}) = {omega0}",
                w.get(i, i)
            )));
        }
        if w.max_abs() > l_bound {
            return Err(Error::input(format!(
                "entry magnitude {} exceeds the bound L = {l_bound}",
                w.max_abs()
            )));
        }
        Ok(SimilarityView {
            w,
            l_bound,
            omega0,
            sigma,
            alpha,
        })
    }

    pub fn n(&self) -> usize {
        self.w.dim()
    }
}

/// Draws `W_ij = clamp(𝒲_ij + N(0, σ²))` for `i < j`, mirrors it and sets
/// the diagonal to `diag_value`.
pub fn sample_view(
    z: &MembershipMatrix,
    omega: &BlockIntensity,
    sigma: f64,
    clip: (f64, f64),
    diag_value: f64,
    seed: u64,
) -> Result<SimilarityView> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::config(format!("noise sd must be >= 0, got {sigma}")));
    }
    let (lo, hi) = clip;
    if !(lo < hi) {
        return Err(Error::config(format!("clip range [{lo}, {hi}] is empty")));
    }
    linalg::check_same_dim("sample_view", omega.k(), z.k())?;
    let mut rng = rng_from_seed(seed);
    let normal = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::config(format!("noise distribution: {e}")))?;
    let labels = z.labels();
    let n = z.n();
    let mut w = Mat::<f64>::zeros(n, n);
    for i in 0..n {
        w[(i, i)] = diag_value;
        for j in (i + 1)..n {
            let mean = omega.omega.get(labels[i], labels[j]);
            let eps = if sigma > 0.0 { normal.sample(&mut rng) } else { 0.0 };
            let v = (mean + eps).clamp(lo, hi);
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
    }
    let l_bound = lo.abs().max(hi.abs()).max(diag_value.abs());
    SimilarityView::new(
        SymMatrix::from_mat(w)?,
        l_bound,
        Some(sigma),
        Some(omega.alpha),
    )
}

/// Contiguous blocks with heterogeneous sizes.
///
/// Relative sizes are drawn from `U(0.45, 1.45)`, rescaled to sum to `n`,
/// floored at `max(2, ⌊0.35·n/K⌋)` and rounded by largest remainder.
pub fn membership_m1(n: usize, k: usize, size_seed: u64) -> Result<MembershipMatrix> {
    if k == 0 {
        return Err(Error::config("K must be positive"));
    }
    if n < 2 * k {
        return Err(Error::config(format!(
            "n = {n} is too small for K = {k} groups of at least two nodes"
        )));
    }
    let min_size = 2usize.max((0.35 * n as f64 / k as f64).floor() as usize);
    let mut rng = rng_from_seed(size_seed);
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.45..1.45)).collect();
    let total: f64 = raw.iter().sum();
    let target: Vec<f64> = raw.iter().map(|r| r / total * n as f64).collect();
    let mut sizes: Vec<usize> = target
        .iter()
        .map(|t| (t.floor() as usize).max(min_size))
        .collect();
    let remainder = |c: usize, sizes: &[usize]| target[c] - sizes[c] as f64;
    loop {
        let sum: usize = sizes.iter().sum();
        if sum == n {
            break;
        }
        if sum < n {
            // Grow the group furthest below its target.
            let c = (0..k)
                .max_by(|&a, &b| {
                    remainder(a, &sizes)
                        .partial_cmp(&remainder(b, &sizes))
                        .unwrap()
                        .then(b.cmp(&a))
                })
                .unwrap();
            sizes[c] += 1;
        } else {
            let c = (0..k)
                .filter(|&c| sizes[c] > min_size)
                .min_by(|&a, &b| {
                    remainder(a, &sizes)
                        .partial_cmp(&remainder(b, &sizes))
                        .unwrap()
                        .then(a.cmp(&b))
                })
                .ok_or_else(|| Error::config("minimum group size cannot be met"))?;
            sizes[c] -= 1;
        }
    }
    let labels = sizes
        .iter()
        .enumerate()
        .flat_map(|(g, &s)| std::iter::repeat_n(g, s))
        .collect();
    MembershipMatrix::new(labels, k)
}

const PERTURB_RETRIES: usize = 100;

/// Reassigns each node, with probability `p`, to one of the `l` groups whose
/// mean-index centroids are nearest its own group's centroid.
pub fn perturb_membership(
    z: &MembershipMatrix,
    p: f64,
    l: usize,
    seed: u64,
) -> Result<MembershipMatrix> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::config(format!("swap probability must be in [0, 1], got {p}")));
    }
    let k = z.k();
    if l == 0 || l >= k {
        return Err(Error::config(format!(
            "adjacency span l = {l} must satisfy 1 <= l < K = {k}"
        )));
    }
    let c = z.mean_index_centroids();
    let neighbours: Vec<Vec<usize>> = (0..k)
        .map(|a| {
            let mut others: Vec<usize> = (0..k).filter(|&b| b != a).collect();
            others.sort_by(|&x, &y| {
                (c[x] - c[a])
                    .abs()
                    .partial_cmp(&(c[y] - c[a]).abs())
                    .unwrap()
                    .then(x.cmp(&y))
            });
            others.truncate(l);
            others
        })
        .collect();

    let mut rng = rng_from_seed(seed);
    for _ in 0..PERTURB_RETRIES {
        let labels: Vec<usize> = z
            .labels()
            .iter()
            .map(|&g| {
                if rng.random_bool(p) {
                    neighbours[g][rng.random_range(0..l)]
                } else {
                    g
                }
            })
            .collect();
        if let Ok(m) = MembershipMatrix::new(labels, k) {
            return Ok(m);
        }
    }
    Err(Error::config(format!(
        "perturbation emptied a group in {PERTURB_RETRIES} consecutive draws"
    )))
}

/// Simulation membership designs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SimulationModel {
    M1,
    M2,
    M3,
    M4,
    M5,
}

impl SimulationModel {
    pub const ALL: [SimulationModel; 5] = [
        SimulationModel::M1,
        SimulationModel::M2,
        SimulationModel::M3,
        SimulationModel::M4,
        SimulationModel::M5,
    ];

    /// Swap probability and adjacency span applied on top of M1.
    pub fn perturbation(self) -> Option<(f64, usize)> {
        match self {
            SimulationModel::M1 => None,
            SimulationModel::M2 => Some((0.01, 4)),
            SimulationModel::M3 => Some((0.1, 2)),
            SimulationModel::M4 => Some((0.05, 6)),
            SimulationModel::M5 => Some((0.1, 8)),
        }
    }

    /// Draws the ground-truth partition for this design.
    pub fn membership(self, n: usize, k: usize, size_seed: u64, perturb_seed: u64) -> Result<MembershipMatrix> {
        let base = membership_m1(n, k, size_seed)?;
        match self.perturbation() {
            None => Ok(base),
            Some((p, l)) => perturb_membership(&base, p, l.min(k.saturating_sub(1)).max(1), perturb_seed),
        }
    }
}

impl fmt::Display for SimulationModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for SimulationModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "M1" => Ok(SimulationModel::M1),
            "M2" => Ok(SimulationModel::M2),
            "M3" => Ok(SimulationModel::M3),
            "M4" => Ok(SimulationModel::M4),
            "M5" => Ok(SimulationModel::M5),
            other => Err(Error::config(format!("unknown model {other:?}, expected M1..M5"))),
        }
    }
}
