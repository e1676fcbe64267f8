//! Adaptive testing with two-layer discrete Bayesian networks: exact skill
//! inference, total-score distributions, grades, monotone parameter
//! learning, test sessions and the evaluation harness.

#![allow(clippy::needless_range_loop)]

pub mod cat;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod grade;
pub mod inference;
pub mod learning;
pub mod model;
pub mod networks;
pub mod order;
pub mod score;

pub use cat::{run_scripted, Mode, Session, SessionConfig, StepRecord};
pub use data::Dataset;
pub use error::{DataError, ExperimentError, InferenceError, LearnError, ModelError, SessionError};
pub use grade::{Grade, GradeScale};
pub use inference::{Evidence, JointModel, SkillPosterior};
pub use learning::{learn, LearnConfig, Method};
pub use model::{build_model, ModelSpec, StudentModel};
pub use score::{ScoreDistribution, ScoreVariant};
