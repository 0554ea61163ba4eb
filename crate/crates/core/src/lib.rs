//! High-dimensional matching on minute-level physical activity, with the
//! sensitivity analysis that such matching needs.
//!
//! The pipeline, stage by stage:
//!
//! - [`ingest`]: load activity / demographics / mortality tables, keep good
//!   days, and build an analysis [`Cohort`](ingest::Cohort).
//! - [`quantile`]: probability grids for a `(J, interval)` configuration and
//!   per-participant empirical quantile functions pooled over good days.
//! - [`distance`]: Riemann-sum 2-Wasserstein distance between quantile
//!   functions, and the full pairwise matrix.
//! - [`matching`]: one-to-one random caliper matching without replacement.
//! - [`survival`]: functional linear Cox model and the race hazard ratio.
//! - [`resample`]: day-bootstrap within-person distances versus
//!   between-person distances.
//! - [`sensitivity`]: the `(C, J, I) x R` grid and its result tables.
//! - [`simcohort`]: synthetic cohorts with known ground truth.
//!
//! Everything random is driven by explicit `u64` seeds; see [`seed`].

pub mod config;
pub mod distance;
pub mod error;
pub mod ingest;
pub mod matching;
pub mod output;
pub mod quantile;
pub mod resample;
pub mod seed;
pub mod sensitivity;
pub mod simcohort;
pub mod snapshot;
pub mod survival;

pub use error::{Error, Result};

/// Minutes in one monitored day.
pub const MINUTES_PER_DAY: usize = 1440;
