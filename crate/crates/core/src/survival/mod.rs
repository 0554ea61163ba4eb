//! Functional linear Cox regression of mortality on race, age, gender, BMI
//! and the minute-of-day activity profile.
//!
//! The profile `X_i(s)` enters through `∫ X_i(s) β(s) ds` with
//! `β(s) = Σ_k b_k φ_k(s)`, so the integral becomes `Σ_k b_k z_ik` with
//! scores `z_ik = ∫ X_i(s) φ_k(s) ds`. The baseline hazard is eliminated by
//! the partial likelihood and never estimated.

pub mod basis;
pub mod cox;
pub mod design;

pub use basis::{Basis, BasisKind, MAX_BASIS};
pub use cox::{
    fit_cox, hazard_ratio, partial_likelihood, CoxFit, CoxOptions, CoxOutcome, HazardRatio, NaFit, NaReason,
    PartialLikelihood, Ties,
};
pub use design::{functional_design, functional_profile, CoxDesign, DesignError, ScoreTable, RACE_COLUMN};
