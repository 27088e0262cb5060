//! The session recommender model: relation encoder, relation-aware
//! self-attention stack, session readout, and the scoring/loss head.

pub mod config;
pub mod forward;
pub mod gru;

pub use config::{
    expected_parameter_names, init_parameters, parameter_layout, validate_inventory, Ablation,
    LossMode, ModelConfig, Readout,
};
pub use forward::{
    attention_score_matrices, bind_parameters, forward_loss, forward_scores, inspect_forward,
    instance_gradients, instance_loss_value, predict_scores, BoundParams, Inspection, Trace,
};
