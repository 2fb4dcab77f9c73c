//! Oscillatory Lie-bracket feedback for partial stabilization of
//! control-affine systems, simulated under sample-and-hold semantics.
//!
//! The crate is organized around the pipeline
//! [`model`] (systems, Jacobians, brackets) → [`synthesis`] (extension matrix,
//! coefficients, control law) → [`sampling`] (sample-and-hold integration and
//! decay analysis), with [`multiagent`] applying the same law to
//! leader-following and [`scenarios`] bundling ready-to-run configurations.
// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// `SimFailure` carries the partial trajectory by value.
#![allow(clippy::result_large_err)]

pub mod error;
pub mod library;
pub mod model;
pub mod multiagent;
pub mod output;
pub mod sampling;
pub mod scenarios;
pub mod synthesis;

pub use error::{Error, ErrorClass, Result};
pub use library::FieldLibrary;
pub use model::{finite_diff_bracket, finite_diff_jacobian, ControlField, PartitionedSystem};
pub use multiagent::{
    follower_controller, formation_error, gain_condition, simulate_formation, FollowerAgent,
    FormationTrajectory, LeaderModel,
};
pub use sampling::{
    averaged_reference, decay_report, epsilon_sweep, simulate_pi_epsilon, DecayReport,
    SampledTrajectory, SimConfig, SimFailure, SweepRow,
};
pub use scenarios::{builtin_scenario, load_scenario, ScenarioBundle};
pub use synthesis::{
    control_value, extension_matrix, held_control, steering_coefficients, validate_selection,
    BracketSelection, ControllerGains, HeldControl, RankCertificate,
};
