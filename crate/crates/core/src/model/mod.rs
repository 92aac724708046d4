//! Encoders, matcher and the parameter set they share.

mod config;
pub mod encoders;
mod gradcheck;
pub mod matcher;
mod state;

pub use config::{Ablations, Composition, ModelConfig};
pub use encoders::Forward;
pub use gradcheck::grad_check_model;
pub use matcher::{timestamp_logits, ScoreVector};
pub use state::{DirectParams, GcnLayer, GruParams, MatcherParams, ModelParams, ModelState, TimeParams};
