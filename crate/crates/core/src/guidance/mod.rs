//! Guided generation: degradation operators, cost functions, the
//! gradient-skipping steering loop and its backprop baselines, masked
//! editing, and classifier training.

pub mod classifier;
pub mod cost;
pub mod degrade;
pub mod edit;
pub mod steer;

pub use classifier::{train_classifier, Classifier};
pub use cost::CostFunction;
pub use degrade::{gaussian_kernel, DegradationKind, DegradationOp, Rect};
pub use edit::{edit, edit_into, EditRequest};
pub use steer::{
    flowchef_step, full_chain_gradient, run_steering, steer, steer_backprop_full_chain,
    steer_backprop_full_chain_into, steer_backprop_stepwise, steer_backprop_stepwise_into,
    steer_into, stepwise_gradient, SteerMode, SteeringConfig, FULL_CHAIN_STORED_LIMIT,
};
