//! Neighborhood testing analytics for childhood blood-lead surveillance.
//!
//! The pipeline has five stages, one module each:
//!
//! - [`ingest`]: parse and validate a (neighborhood, year) panel of tests,
//!   cases and child population.
//! - [`normalize`]: divide each year's case rates by that year's mean, fit
//!   testing share against population share, forecast next year's total.
//! - [`cluster`]: seed five risk profiles and refine them with k-medoids over
//!   the normalized series.
//! - [`optimize`]: build candidate allocations from weighted testing and
//!   cases shares and pick the best feasible one by exhaustive grid search.
//! - [`evaluate`]: z-test the change in projected cases and break it down by
//!   risk profile and neighborhood.
//!
//! A narrative guide lives in the `book/` directory of the repository; its
//! Rust snippets are compiled and run as doctests of this crate.
//!
//! ```
//! use leadalloc::optimize::{case_difference, finalize_tests};
//!
//! let delta = case_difference(100.0, &[0.1, 0.01], &[0.5, 0.5], &[0.8, 0.2]).unwrap();
//! assert!((delta - 2.7).abs() < 1e-12);
//! assert_eq!(finalize_tests(&[1.0 / 3.0; 3], 100), vec![34, 33, 33]);
//! ```

pub mod cluster;
pub mod evaluate;
pub mod ingest;
pub mod normalize;
pub mod optimize;

pub use cluster::{assign_risk_profiles, k_medoids, seed_medoids, ClusterAssignment, RiskLabel};
pub use evaluate::{evaluate_plan, two_proportion_ztest, EvaluationReport};
pub use ingest::{parse_panel, validate_panel, GeoId, NeighborhoodPanel, SchemaConfig, Year};
pub use normalize::{normalize_panel, NormalizedPanel};
pub use optimize::{
    compute_shares, grid_search, AllocationPlan, ConstraintConfig, GridConfig, ShareVectors,
};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/panel.md")]
    mod panel {}
    #[doc = include_str!("../../../book/src/normalization.md")]
    mod normalization {}
    #[doc = include_str!("../../../book/src/risk_profiles.md")]
    mod risk_profiles {}
    #[doc = include_str!("../../../book/src/allocation.md")]
    mod allocation {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
