//! Distance-guided banding `B_h(W)` and the closed-form bandwidth.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, SymMatrix};
use crate::model::DistanceModel;

/// `B_h(W)_ij = W_ij · I(d_ij ≤ h)`.
pub fn band(w: &SymMatrix, dm: &DistanceModel, h: f64) -> Result<SymMatrix> {
    linalg::check_same_dim("band", dm.n(), w.dim())?;
    if !(h >= 0.0) {
        return Err(Error::config(format!("bandwidth must be >= 0, got {h}")));
    }
    Ok(w.map(|i, j, v| if dm.get(i, j) <= h { v } else { 0.0 }))
}

/// Constant in the denominator of the bandwidth formula.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandwidthVariant {
    /// `c = 2`.
    Strict,
    /// `c = 1`, used for the reported simulations.
    Simulation,
}

impl BandwidthVariant {
    fn denominator(self) -> f64 {
        match self {
            BandwidthVariant::Strict => 2.0,
            BandwidthVariant::Simulation => 1.0,
        }
    }
}

/// `h = 2δ + d0·(L·n_max / (c·√ln n))^{2/(2α+1)}`.
pub fn select_bandwidth(
    dm: &DistanceModel,
    n_max: usize,
    alpha: f64,
    l_bound: f64,
    n: usize,
    variant: BandwidthVariant,
) -> Result<f64> {
    let delta = dm
        .delta()
        .ok_or_else(|| Error::config("bandwidth selection needs delta on the distance model"))?;
    if n < 3 {
        return Err(Error::config(format!("bandwidth selection needs n >= 3, got {n}")));
    }
    if n_max == 0 {
        return Err(Error::config("n_max must be at least 1"));
    }
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::config(format!("alpha must be >= 0, got {alpha}")));
    }
    if !(l_bound.is_finite() && l_bound > 0.0) {
        return Err(Error::config(format!("entry bound L must be positive, got {l_bound}")));
    }
    let base = l_bound * n_max as f64 / (variant.denominator() * (n as f64).ln().sqrt());
    Ok(2.0 * delta + dm.d0() * base.powf(2.0 / (2.0 * alpha + 1.0)))
}

/// How each view's bandwidth is chosen inside the pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandwidthRule {
    Strict,
    Simulation,
    /// The same bandwidth for every view.
    Fixed(f64),
}

impl Default for BandwidthRule {
    fn default() -> Self {
        BandwidthRule::Simulation
    }
}

impl fmt::Display for BandwidthRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BandwidthRule::Strict => f.write_str("strict"),
            BandwidthRule::Simulation => f.write_str("simulation"),
            BandwidthRule::Fixed(h) => write!(f, "fixed:{h}"),
        }
    }
}

impl FromStr for BandwidthRule {
    type Err = Error;

    /// `simulation`, `strict` or `fixed:<h>`.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "simulation" => Ok(BandwidthRule::Simulation),
            "strict" => Ok(BandwidthRule::Strict),
            other => match other.strip_prefix("fixed:") {
                Some(h) => {
                    let h: f64 = h
                        .trim()
                        .parse()
                        .map_err(|_| Error::config(format!("cannot parse bandwidth {h:?}")))?;
                    if !(h.is_finite() && h >= 0.0) {
                        return Err(Error::config(format!("fixed bandwidth must be >= 0, got {h}")));
                    }
                    Ok(BandwidthRule::Fixed(h))
                }
                None => Err(Error::config(format!(
                    "unknown bandwidth rule {other:?}; expected simulation, strict or fixed:<h>"
                ))),
            },
        }
    }
}

impl BandwidthRule {
    /// Bandwidth for one view; `alpha` is required unless the rule is fixed.
    pub fn bandwidth(
        self,
        dm: &DistanceModel,
        n_max: usize,
        alpha: Option<f64>,
        l_bound: f64,
    ) -> Result<f64> {
        let variant = match self {
            BandwidthRule::Fixed(h) => return Ok(h),
            BandwidthRule::Strict => BandwidthVariant::Strict,
            BandwidthRule::Simulation => BandwidthVariant::Simulation,
        };
        let alpha = alpha.ok_or_else(|| {
            Error::config(format!("bandwidth rule {self} needs a decay exponent alpha per view"))
        })?;
        select_bandwidth(dm, n_max, alpha, l_bound, dm.n(), variant)
    }
}
