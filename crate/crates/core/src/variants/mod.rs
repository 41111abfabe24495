//! Variants of the static mechanism: JS-style divisible quotas with random
//! report replacement, and finite rich type spaces.

pub mod js;
pub mod typespace;

pub use js::{
    approximate_quota, conditional_accuracy, js_play_and_error, js_scan, js_utility_dominance,
    shrink_factor, JSMechanism, JSQuota, JsErrorReport, ShrinkFactor,
};
pub use typespace::{
    check_type_space, cyclic_point_space, iid_type_space, verify_robust_equilibrium,
    FiniteTypeSpace, RobustEquilibriumReport, TypeSpaceAgent, TypeSpaceFlags,
};
