//! Per-view noise and signal estimates and the closed-form view weights.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, EigenOrder, SymMatrix};
use crate::model::MembershipMatrix;

/// Tolerance on `Σ λ_s = 1`.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Noise estimates at or below this fraction of `max(max|W|, 1)` count as zero.
pub const ZERO_NOISE_REL: f64 = 1e-12;

/// Estimated quantities attached to one view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewDiagnostics {
    /// Index of the view in the input list.
    pub view: usize,
    pub sigma_hat: f64,
    pub gamma_hat: f64,
    pub h: f64,
    /// Estimated block means, row-major `K × K`.
    pub omega_hat: Vec<Vec<f64>>,
}

/// Convex combination weights over views.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    /// Accepts nonnegative finite weights summing to one within [`SIMPLEX_TOL`].
    pub fn new(lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(Error::config("weight vector is empty"));
        }
        if let Some(bad) = lambdas.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return Err(Error::config(format!("weights must be finite and >= 0, got {bad}")));
        }
        let sum: f64 = lambdas.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::config(format!("weights sum to {sum}, not 1")));
        }
        Ok(WeightVector(lambdas))
    }

    /// Divides nonnegative scores by their sum.
    pub fn normalized(scores: &[f64]) -> Result<Self> {
        let sum: f64 = scores.iter().sum();
        if !(sum.is_finite() && sum > 0.0) || scores.iter().any(|s| *s < 0.0) {
            return Err(Error::Numerical(format!("cannot normalize weight scores {scores:?}")));
        }
        let mut l: Vec<f64> = scores.iter().map(|s| s / sum).collect();
        // Push the rounding residue onto the largest weight.
        let resid = 1.0 - l.iter().sum::<f64>();
        let top = (0..l.len())
            .max_by(|&a, &b| l[a].partial_cmp(&l[b]).unwrap().then(b.cmp(&a)))
            .unwrap();
        l[top] += resid;
        WeightVector::new(l)
    }

    pub fn uniform(m: usize) -> Result<Self> {
        WeightVector::normalized(&vec![1.0; m])
    }

    /// All mass on view `s`.
    pub fn indicator(m: usize, s: usize) -> Result<Self> {
        if s >= m {
            return Err(Error::config(format!("view {s} out of range for {m} views")));
        }
        let mut l = vec![0.0; m];
        l[s] = 1.0;
        WeightVector::new(l)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Result of [`estimate_sigma`].
#[derive(Clone, Debug)]
pub struct SigmaEstimate {
    pub sigma_hat: f64,
    pub omega_hat: SymMatrix,
    /// Groups whose within-group term was skipped (too few pairs).
    pub skipped_within: Vec<usize>,
}

/// Pooled within- and across-group residual variance of `w` around its block
/// means under partition `z`; diagonals are excluded.
pub fn estimate_sigma(w: &SymMatrix, z: &MembershipMatrix) -> Result<SigmaEstimate> {
    let n = w.dim();
    linalg::check_same_dim("estimate_sigma", n, z.n())?;
    let k = z.k();
    let labels = z.labels();
    let idx = |a: usize, b: usize| if a <= b { a * k + b } else { b * k + a };

    let mut sum = vec![0.0; k * k];
    let mut count = vec![0usize; k * k];
    for j in 0..n {
        for i in 0..j {
            let c = idx(labels[i], labels[j]);
            sum[c] += w.get(i, j);
            count[c] += 1;
        }
    }
    let mean: Vec<f64> = sum
        .iter()
        .zip(&count)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    let mut sse = vec![0.0; k * k];
    for j in 0..n {
        for i in 0..j {
            let c = idx(labels[i], labels[j]);
            let r = w.get(i, j) - mean[c];
            sse[c] += r * r;
        }
    }

    let mut within = 0.0;
    let mut across = 0.0;
    let mut skipped_within = Vec::new();
    for a in 0..k {
        for b in a..k {
            let c = idx(a, b);
            let denom = count[c] as f64 - 1.0;
            if denom <= 0.0 {
                if a == b {
                    skipped_within.push(a);
                }
                continue;
            }
            if a == b {
                within += sse[c] / denom;
            } else {
                across += sse[c] / denom;
            }
        }
    }
    if !skipped_within.is_empty() {
        log::warn!("within-group noise term skipped for groups {skipped_within:?} (fewer than three nodes)");
    }
    let var = 2.0 / (k * (k + 1)) as f64 * (within + across);
    let mut sigma_hat = var.max(0.0).sqrt();
    if sigma_hat <= ZERO_NOISE_REL * w.max_abs().max(1.0) {
        sigma_hat = 0.0;
    }
    let omega_hat = SymMatrix::from_upper_fn(k, |a, b| mean[idx(a, b)]);
    Ok(SigmaEstimate {
        sigma_hat,
        omega_hat,
        skipped_within,
    })
}

/// Magnitude of the `K`-th largest-in-magnitude eigenvalue.
pub fn estimate_gamma(banded: &SymMatrix, k: usize) -> Result<f64> {
    let pairs = linalg::eig_sym_topk(banded, k, EigenOrder::ByAbsValue)?;
    Ok(pairs.values[k - 1].abs())
}

fn check_diags(diags: &[ViewDiagnostics], need_h: bool) -> Result<()> {
    if diags.is_empty() {
        return Err(Error::config("no views to weight"));
    }
    let bad_gamma: Vec<usize> = diags
        .iter()
        .filter(|d| !(d.gamma_hat > 0.0))
        .map(|d| d.view)
        .collect();
    if !bad_gamma.is_empty() {
        return Err(Error::DegenerateView {
            views: bad_gamma,
            reason: "K-th eigenvalue of the banded view is zero".into(),
        });
    }
    let zero_sigma: Vec<usize> = diags
        .iter()
        .filter(|d| d.sigma_hat == 0.0)
        .map(|d| d.view)
        .collect();
    if !zero_sigma.is_empty() {
        return Err(Error::DegenerateView {
            views: zero_sigma,
            reason: "estimated noise is zero".into(),
        });
    }
    if need_h {
        if let Some(d) = diags.iter().find(|d| !(d.h > 0.0)) {
            return Err(Error::config(format!("view {} has bandwidth {} <= 0", d.view, d.h)));
        }
    }
    Ok(())
}

/// `λ_s ∝ (γ̂_s / σ̂_s)²`.
pub fn lambda_snr(diags: &[ViewDiagnostics]) -> Result<WeightVector> {
    check_diags(diags, false)?;
    let scores: Vec<f64> = diags
        .iter()
        .map(|d| (d.gamma_hat / d.sigma_hat).powi(2))
        .collect();
    WeightVector::normalized(&scores)
}

/// `λ_s ∝ h_s⁻¹ (γ̂_s / σ̂_s)²`, the minimizer of [`q_objective`].
pub fn lambda_q(diags: &[ViewDiagnostics]) -> Result<WeightVector> {
    check_diags(diags, true)?;
    if diags.iter().all(|d| d.h == diags[0].h) {
        return lambda_snr(diags);
    }
    let scores: Vec<f64> = diags
        .iter()
        .map(|d| (d.gamma_hat / d.sigma_hat).powi(2) / d.h)
        .collect();
    WeightVector::normalized(&scores)
}

/// `q_h(λ) = Σ_s (λ_s σ̂_s / γ̂_s)² h_s`.
pub fn q_objective(diags: &[ViewDiagnostics], lambda: &[f64]) -> f64 {
    diags
        .iter()
        .zip(lambda)
        .map(|(d, l)| (l * d.sigma_hat / d.gamma_hat).powi(2) * d.h)
        .sum()
}

/// Fallback when some views have zero estimated noise: the mass goes to those
/// views only, split by `γ̂²` (divided by `h` for rule `q`).
pub fn zero_noise_weights(diags: &[ViewDiagnostics], per_bandwidth: bool) -> Result<WeightVector> {
    let scores: Vec<f64> = diags
        .iter()
        .map(|d| {
            if d.sigma_hat == 0.0 {
                let g = d.gamma_hat * d.gamma_hat;
                if per_bandwidth {
                    g / d.h
                } else {
                    g
                }
            } else {
                0.0
            }
        })
        .collect();
    WeightVector::normalized(&scores)
}

/// How the pipeline chooses view weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightRule {
    Snr,
    Q,
    Uniform,
    Fixed(Vec<f64>),
}

impl Default for WeightRule {
    fn default() -> Self {
        WeightRule::Q
    }
}

impl fmt::Display for WeightRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightRule::Snr => f.write_str("snr"),
            WeightRule::Q => f.write_str("q"),
            WeightRule::Uniform => f.write_str("uniform"),
            WeightRule::Fixed(l) => {
                f.write_str("fixed:")?;
                for (i, v) in l.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{v}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for WeightRule {
    type Err = Error;

    /// `snr`, `q`, `uniform` or `fixed:<l1>,<l2>,...`.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "snr" | "SNR" => Ok(WeightRule::Snr),
            "q" => Ok(WeightRule::Q),
            "uniform" => Ok(WeightRule::Uniform),
            other => match other.strip_prefix("fixed:") {
                Some(list) => {
                    let l = list
                        .split(',')
                        .map(|t| {
                            t.trim()
                                .parse::<f64>()
                                .map_err(|_| Error::config(format!("cannot parse weight {t:?}")))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    WeightVector::new(l.clone())?;
                    Ok(WeightRule::Fixed(l))
                }
                None => Err(Error::config(format!(
                    "unknown weight rule {other:?}; expected snr, q, uniform or fixed:<weights>"
                ))),
            },
        }
    }
}

impl WeightRule {
    /// Whether the rule needs noise estimates from a pilot clustering.
    pub fn needs_pilot(&self) -> bool {
        matches!(self, WeightRule::Snr | WeightRule::Q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{membership_m1, omega_simulation, sample_view, PopulationSimilarity};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn diag(view: usize, gamma: f64, sigma: f64, h: f64) -> ViewDiagnostics {
        ViewDiagnostics {
            view,
            sigma_hat: sigma,
            gamma_hat: gamma,
            h,
            omega_hat: vec![],
        }
    }

    #[test]
    fn sigma_hand_example() {
        let w = SymMatrix::from_upper_fn(3, |i, j| match (i, j) {
            (0, 1) => 0.1,
            (0, 2) => 0.2,
            (1, 2) => 0.3,
            _ => 1.0,
        });
        let z = MembershipMatrix::new(vec![0, 0, 0], 1).unwrap();
        let est = estimate_sigma(&w, &z).unwrap();
        assert!((est.omega_hat.get(0, 0) - 0.2).abs() < 1e-15);
        assert!((est.sigma_hat.powi(2) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn sigma_zero_on_block_constant() {
        let z = membership_m1(80, 4, 2).unwrap();
        let om = omega_simulation(&z, 0.4, 1.0, 0.6).unwrap();
        let v = sample_view(&z, &om, 0.0, (-1.0, 1.0), 1.0, 0).unwrap();
        let est = estimate_sigma(&v.w, &z).unwrap();
        assert_eq!(est.sigma_hat, 0.0);
        for a in 0..4 {
            for b in 0..4 {
                assert!((est.omega_hat.get(a, b) - om.omega.get(a, b)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sigma_skips_small_groups() {
        let w = SymMatrix::from_upper_fn(5, |i, j| if i == j { 1.0 } else { (i + j) as f64 * 0.1 });
        let z = MembershipMatrix::new(vec![0, 0, 1, 1, 1], 2).unwrap();
        let est = estimate_sigma(&w, &z).unwrap();
        assert_eq!(est.skipped_within, vec![0]);
        assert!(est.sigma_hat.is_finite());
    }

    #[test]
    fn sigma_clipped_monte_carlo() {
        let z = membership_m1(500, 25, 7).unwrap();
        let om = omega_simulation(&z, 0.4, 1.0, 0.6).unwrap();
        let v = sample_view(&z, &om, 0.4, (-1.0, 1.0), 1.0, 8).unwrap();
        let s = estimate_sigma(&v.w, &z).unwrap().sigma_hat;
        assert!((0.36..=0.44).contains(&s), "sigma_hat = {s}");
    }

    #[test]
    fn sigma_consistent_without_clipping() {
        let z = membership_m1(500, 10, 9).unwrap();
        let om = omega_simulation(&z, 0.4, 1.0, 0.6).unwrap();
        let v = sample_view(&z, &om, 0.4, (-1e9, 1e9), 1.0, 10).unwrap();
        let s = estimate_sigma(&v.w, &z).unwrap().sigma_hat;
        assert!((s - 0.4).abs() / 0.4 < 0.05, "sigma_hat = {s}");
    }

    #[test]
    fn gamma_examples() {
        let d = SymMatrix::from_diagonal(&[5.0, 4.0, 3.0, 2.0]);
        assert!((estimate_gamma(&d, 3).unwrap() - 3.0).abs() < 1e-12);
        let z = MembershipMatrix::new(vec![0, 0, 1, 1, 2, 2], 3).unwrap();
        let scaled = z.projector().scaled(7.0);
        assert!((estimate_gamma(&scaled, 3).unwrap() - 7.0).abs() < 1e-12);

        let z = membership_m1(60, 3, 3).unwrap();
        let om = omega_simulation(&z, 0.4, 1.0, 0.6).unwrap();
        let pw = PopulationSimilarity::new(&z, &om).unwrap();
        let mut ev: Vec<f64> = linalg::eigenvalues(&pw.script_w).unwrap().into_iter().map(f64::abs).collect();
        ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!((estimate_gamma(&pw.script_w, 3).unwrap() - ev[2]).abs() < 1e-10);
    }

    #[test]
    fn snr_examples() {
        let l = lambda_snr(&[diag(0, 2.0, 1.0, 1.0), diag(1, 1.0, 1.0, 1.0)]).unwrap();
        assert!((l.as_slice()[0] - 0.8).abs() < 1e-15 && (l.as_slice()[1] - 0.2).abs() < 1e-15);
        let same = lambda_snr(&[diag(0, 3.0, 0.5, 1.0), diag(1, 3.0, 0.5, 1.0), diag(2, 3.0, 0.5, 1.0)]).unwrap();
        for v in same.as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(matches!(
            lambda_snr(&[diag(0, 2.0, 0.0, 1.0), diag(1, 1.0, 1.0, 1.0)]),
            Err(Error::DegenerateView { views, .. }) if views == vec![0]
        ));
    }

    #[test]
    fn q_examples() {
        let l = lambda_q(&[diag(0, 1.0, 1.0, 1.0), diag(1, 1.0, 1.0, 4.0)]).unwrap();
        assert!((l.as_slice()[0] - 0.8).abs() < 1e-15 && (l.as_slice()[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn q_beats_random_probes() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let diags: Vec<_> = (0..3)
                .map(|s| diag(s, rng.random_range(0.5..5.0), rng.random_range(0.1..1.0), rng.random_range(1.0..10.0)))
                .collect();
            let best = lambda_q(&diags).unwrap();
            let q_best = q_objective(&diags, best.as_slice());
            for _ in 0..1000 {
                let e: Vec<f64> = (0..3).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
                let s: f64 = e.iter().sum();
                let probe: Vec<f64> = e.iter().map(|x| x / s).collect();
                assert!(q_objective(&diags, &probe) >= q_best - 1e-15);
            }
            // KKT: h σ² λ / γ² equal across views.
            let kkt: Vec<f64> = diags
                .iter()
                .zip(best.as_slice())
                .map(|(d, l)| d.h * d.sigma_hat.powi(2) * l / d.gamma_hat.powi(2))
                .collect();
            for v in &kkt {
                assert!((v - kkt[0]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_noise_fallback_is_indicator() {
        let d = [diag(0, 2.0, 0.3, 1.0), diag(1, 1.0, 0.0, 1.0)];
        let l = zero_noise_weights(&d, false).unwrap();
        assert_eq!(l.as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn weight_vector_validation() {
        assert!(WeightVector::new(vec![0.5, 0.5]).is_ok());
        assert!(WeightVector::new(vec![0.5, 0.6]).is_err());
        assert!(WeightVector::new(vec![-0.1, 1.1]).is_err());
        assert_eq!(WeightVector::uniform(4).unwrap().as_slice(), &[0.25; 4]);
    }

    #[test]
    fn rule_parsing() {
        assert_eq!("snr".parse::<WeightRule>().unwrap(), WeightRule::Snr);
        assert_eq!(
            "fixed:0.5,0.3,0.2".parse::<WeightRule>().unwrap(),
            WeightRule::Fixed(vec![0.5, 0.3, 0.2])
        );
        assert_eq!(WeightRule::Fixed(vec![0.5, 0.3, 0.2]).to_string(), "fixed:0.5,0.3,0.2");
        assert!("fixed:0.5,0.6".parse::<WeightRule>().is_err());
        assert!("best".parse::<WeightRule>().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn prop_weights_on_simplex(
            g in proptest::collection::vec(0.01f64..100.0, 1..6),
            s in proptest::collection::vec(0.01f64..3.0, 6),
            h in 0.1f64..20.0,
            scale in 0.01f64..100.0,
        ) {
            let diags: Vec<_> = g.iter().enumerate().map(|(i, &gi)| diag(i, gi, s[i], h)).collect();
            let snr = lambda_snr(&diags).unwrap();
            let q = lambda_q(&diags).unwrap();
            prop_assert!((snr.as_slice().iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOL);
            prop_assert!(snr.as_slice().iter().all(|v| *v >= 0.0));
            for (a, b) in snr.as_slice().iter().zip(q.as_slice()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
            let scaled: Vec<_> = diags.iter().map(|d| diag(d.view, d.gamma_hat * scale, d.sigma_hat, d.h)).collect();
            let snr2 = lambda_snr(&scaled).unwrap();
            for (a, b) in snr.as_slice().iter().zip(snr2.as_slice()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}
