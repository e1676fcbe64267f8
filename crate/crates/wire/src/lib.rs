//! Request and response bodies of the session service.
//!
//! Probabilities are sent as JSON numbers rounded to 12 significant digits.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub id: String,
    pub skills: usize,
    pub questions: usize,
    pub max_score: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub model: String,
    /// `fixed` or `adaptive`.
    pub mode: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateInfo {
    pub state: usize,
    pub points: u32,
}

/// A question as presented to the test taker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionInfo {
    pub id: usize,
    pub label: String,
    pub states: Vec<StateInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorePayload {
    /// `P(score = j)` for `j = 0..=max`.
    pub distribution: Vec<f64>,
    pub expected: f64,
    pub most_probable: u32,
    pub credible_states: Vec<u32>,
    pub coverage: f64,
    pub lo: u32,
    pub hi: u32,
    pub grade_masses: Vec<f64>,
    pub grade_index: usize,
    pub grade_label: String,
}

/// Summary after one step; step 0 precedes any answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepPayload {
    pub step: usize,
    pub question: Option<usize>,
    pub state: Option<usize>,
    pub points: Option<u32>,
    /// Answered questions at their observed points.
    pub remaining: ScorePayload,
    /// Every question predicted from the skills.
    pub all: ScorePayload,
    pub skill_marginals: Vec<Vec<f64>>,
    pub predicted_states: Vec<usize>,
    pub next_question: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub model: String,
    pub mode: String,
    pub summary: StepPayload,
    pub next_question: Option<QuestionInfo>,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRequest {
    pub question: usize,
    pub state: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerResponse {
    pub summary: StepPayload,
    pub next_question: Option<QuestionInfo>,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionLog {
    pub session_id: String,
    pub model: String,
    pub mode: String,
    /// Seconds since the Unix epoch.
    pub created: u64,
    pub steps: Vec<StepPayload>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}
