//! Numerical strong-identifiability testing: derivative feature
//! matrices, a singular-value independence report, the gating
//! interaction identities, the coupled moment system with its search,
//! and the slow-sequence pathology generator.

mod features;
mod pde;
mod polysys;
mod slow;

pub use features::{
    derivative_features, draw_feature_points, strong_ident_report, FeatureLabel, FeatureMatrix,
    FeatureMode, IdentReport, Verdict,
};
pub use pde::{
    gating_interaction_residual, gating_interaction_residual_with_step,
    linear_expert_interaction_residual, linear_expert_interaction_residual_with_step,
};
pub use polysys::{
    min_unsolvable_order, polysys_residual, polysys_search, OrderBound, PolysysSearchResult,
};
pub use slow::{slow_sequence, SlowSequencePoint};
