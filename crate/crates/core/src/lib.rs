//! Multi-view banded spectral clustering.
//!
//! Several noisy similarity matrices over the same nodes are banded by a prior
//! distance between nodes, embedded by their leading eigenvectors, fused with
//! data-driven view weights and clustered with k-means.
//!
//! ```
//! use mvbsc::cluster::{mvbsc, MvbscOptions};
//! use mvbsc::model::{index_distance, membership_m1, omega_simulation, sample_view};
//!
//! # fn main() -> mvbsc::Result<()> {
//! let z = membership_m1(60, 3, 1)?;
//! let omega = omega_simulation(&z, 0.5, 1.0, 0.6)?;
//! let views = vec![
//!     sample_view(&z, &omega, 0.2, (-1.0, 1.0), 1.0, 1)?,
//!     sample_view(&z, &omega, 0.5, (-1.0, 1.0), 1.0, 2)?,
//! ];
//! let dm = index_distance(60, 0.1)?.with_delta_from_partition(&z)?;
//! let out = mvbsc(&views, &dm, &MvbscOptions::new(3))?;
//! assert_eq!(out.labels.k(), 3);
//! # Ok(())
//! # }
//! ```
//!
//! The guide in `book/` walks through each stage.

pub mod banding;
pub mod baselines;
pub mod cli;
pub mod cluster;
pub mod error;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod seed;
pub mod weights;

pub use error::{Error, Result};
