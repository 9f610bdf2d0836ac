//! Competing spectral procedures: kernel addition, graph Laplacians and
//! single-view clustering.

use std::fmt;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::cluster::{kmeans, ClusteringResult, KMeansParams};
use crate::error::{Error, Result};
use crate::linalg::{self, EigenOrder, SymMatrix};
use crate::seed::{derive_seed, streams};
use crate::weights::WeightVector;

/// `W⁺ = Σ_s W^s`.
pub fn kernel_addition(views: &[&SymMatrix]) -> Result<SymMatrix> {
    let (first, rest) = views
        .split_first()
        .ok_or_else(|| Error::config("kernel addition needs at least one view"))?;
    rest.iter().try_fold((*first).clone(), |acc, w| acc.add(w))
}

/// Graph Laplacian of the shifted adjacency `A = W − min(W)` with zero
/// diagonal. The normalized form is `I − D^{-1/2} A D^{-1/2}`, with
/// `D^{-1/2}_ii = 0` for isolated nodes.
pub fn laplacian(w: &SymMatrix, normalized: bool) -> SymMatrix {
    let n = w.dim();
    let shift = w.min_entry();
    let a = w.map(|i, j, v| if i == j { 0.0 } else { v - shift });
    let deg: Vec<f64> = (0..n).map(|i| (0..n).map(|j| a.get(i, j)).sum()).collect();
    if normalized {
        let inv: Vec<f64> = deg
            .iter()
            .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
            .collect();
        SymMatrix::from_upper_fn(n, |i, j| {
            let id = if i == j { 1.0 } else { 0.0 };
            id - inv[i] * a.get(i, j) * inv[j]
        })
    } else {
        SymMatrix::from_upper_fn(n, |i, j| if i == j { deg[i] } else { -a.get(i, j) })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralVariant {
    /// Top-K eigenvectors of `W` by absolute eigenvalue.
    Raw,
    /// Bottom-K eigenvectors of the unnormalized Laplacian.
    Laplacian,
    /// Bottom-K eigenvectors of the normalized Laplacian, rows rescaled to unit length.
    NormalizedLaplacian,
}

impl fmt::Display for SpectralVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpectralVariant::Raw => "raw",
            SpectralVariant::Laplacian => "laplacian",
            SpectralVariant::NormalizedLaplacian => "normalized_laplacian",
        })
    }
}

/// Spectral embedding of `w` for the given variant.
pub fn baseline_embedding(w: &SymMatrix, k: usize, variant: SpectralVariant) -> Result<Mat<f64>> {
    let mut u = match variant {
        SpectralVariant::Raw => linalg::eig_sym_topk(w, k, EigenOrder::ByAbsValue)?.vectors,
        SpectralVariant::Laplacian => {
            linalg::eig_sym_topk(&laplacian(w, false), k, EigenOrder::Smallest)?.vectors
        }
        SpectralVariant::NormalizedLaplacian => {
            linalg::eig_sym_topk(&laplacian(w, true), k, EigenOrder::Smallest)?.vectors
        }
    };
    if variant == SpectralVariant::NormalizedLaplacian {
        for i in 0..u.nrows() {
            let norm = (0..k).map(|c| u[(i, c)] * u[(i, c)]).sum::<f64>().sqrt();
            if norm > 0.0 {
                for c in 0..k {
                    u[(i, c)] /= norm;
                }
            }
        }
    }
    Ok(u)
}

/// Spectral clustering of one matrix followed by k-means.
pub fn spectral_cluster_baseline(
    w: &SymMatrix,
    k: usize,
    variant: SpectralVariant,
    params: KMeansParams,
    seed: u64,
) -> Result<ClusteringResult> {
    if k == 0 || k > w.dim() {
        return Err(Error::config(format!("K = {k} must satisfy 1 <= K <= n = {}", w.dim())));
    }
    let embedding = baseline_embedding(w, k, variant)?;
    let km = kmeans(
        embedding.as_ref(),
        k,
        params,
        derive_seed(seed, streams::BASELINE_KMEANS),
    )?;
    Ok(ClusteringResult {
        labels: km.labels,
        embedding,
        centroids: km.centroids,
        weights: WeightVector::new(vec![1.0])?,
        bandwidths: Vec::new(),
        kmeans_objective: km.objective,
        diagnostics: Vec::new(),
        active_views: vec![0],
        warnings: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::test_support::random_symmetric;
    use crate::model::{membership_m1, omega_simulation, sample_view, MembershipMatrix, PopulationSimilarity};
    use proptest::prelude::*;
    use rand::SeedableRng;

    #[test]
    fn kernel_addition_examples() {
        let a = SymMatrix::from_upper_fn(3, |_, _| 0.5);
        assert_eq!(kernel_addition(&[&a]).unwrap().as_ref(), a.as_ref());
        let s = kernel_addition(&[&a, &a]).unwrap();
        assert!(s.diagonal().iter().all(|&v| v == 1.0) && s.get(0, 2) == 1.0);
        assert!(kernel_addition(&[]).is_err());
        assert!(kernel_addition(&[&a, &SymMatrix::zeros(2)]).is_err());
    }

    #[test]
    fn constant_matrix_laplacian_is_zero() {
        let c = SymMatrix::from_upper_fn(4, |_, _| 0.3);
        assert_eq!(laplacian(&c, false).max_abs(), 0.0);
        let norm = laplacian(&c, true);
        assert_eq!(norm.as_ref(), SymMatrix::identity(4).as_ref());
    }

    #[test]
    fn laplacian_properties() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let w = random_symmetric(15, &mut rng);
            let l = laplacian(&w, false);
            for i in 0..15 {
                let row: f64 = (0..15).map(|j| l.get(i, j)).sum();
                assert!(row.abs() < 1e-12);
            }
            let ev = linalg::eigenvalues(&l).unwrap();
            assert!(ev[0] >= -1e-8);
            let ln = linalg::eigenvalues(&laplacian(&w, true)).unwrap();
            assert!(ln[0] >= -1e-8 && ln[14] <= 2.0 + 1e-8);
        }
    }

    #[test]
    fn block_adjacency_laplacian_recovers_components() {
        let z = MembershipMatrix::new(vec![0, 0, 0, 1, 1, 2, 2, 2, 2], 3).unwrap();
        let w = SymMatrix::from_upper_fn(9, |i, j| if z.label(i) == z.label(j) { 1.0 } else { 0.0 });
        for variant in [SpectralVariant::Raw, SpectralVariant::Laplacian, SpectralVariant::NormalizedLaplacian] {
            let r = spectral_cluster_baseline(&w, 3, variant, KMeansParams::default(), 1).unwrap();
            assert_eq!(r.labels.canonical(), z.canonical(), "{variant}");
        }
        let ev = linalg::eigenvalues(&laplacian(&w, false)).unwrap();
        assert!(ev[..3].iter().all(|v| v.abs() < 1e-10) && ev[3] > 0.5);
    }

    #[test]
    fn noiseless_raw_recovery() {
        let z = membership_m1(100, 5, 3).unwrap();
        let om = omega_simulation(&z, 0.4, 1.0, 0.6).unwrap();
        let pw = PopulationSimilarity::new(&z, &om).unwrap();
        let r = spectral_cluster_baseline(&pw.script_w, 5, SpectralVariant::Raw, KMeansParams::default(), 0).unwrap();
        assert_eq!(r.labels.canonical(), z.canonical());
    }

    #[test]
    fn ka_identical_views_share_subspace() {
        let z = membership_m1(60, 3, 4).unwrap();
        let om = omega_simulation(&z, 0.4, 1.0, 0.6).unwrap();
        let v = sample_view(&z, &om, 0.3, (-1.0, 1.0), 1.0, 5).unwrap();
        let ka = kernel_addition(&[&v.w, &v.w]).unwrap();
        assert!(ka.sub(&v.w.scaled(2.0)).unwrap().max_abs() == 0.0);
        let a = linalg::eig_sym_topk(&v.w, 3, EigenOrder::ByAbsValue).unwrap();
        let b = linalg::eig_sym_topk(&ka, 3, EigenOrder::ByAbsValue).unwrap();
        let pa = linalg::projector(a.vectors.as_ref()).unwrap();
        let pb = linalg::projector(b.vectors.as_ref()).unwrap();
        assert!(pa.sub(&pb).unwrap().max_abs() < 1e-8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn prop_laplacians_psd(seed in any::<u64>(), n in 2usize..20) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let w = random_symmetric(n, &mut rng);
            for normalized in [false, true] {
                let ev = linalg::eigenvalues(&laplacian(&w, normalized)).unwrap();
                prop_assert!(ev[0] >= -1e-8);
            }
        }
    }
}
