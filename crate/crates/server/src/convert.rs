//! Conversion between core step records and wire payloads.

use moncat_core::cat::{ScoreSummary, StepRecord};
use moncat_core::grade::Grade;
use moncat_core::model::StudentModel;
use moncat_core::score::CredibleSet;
use moncat_wire::{QuestionInfo, ScorePayload, StateInfo, StepPayload};

/// Rounds to 12 significant digits.
pub fn round12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.11e}", x).parse().unwrap_or(x)
}

fn round_all(xs: &[f64]) -> Vec<f64> {
    xs.iter().copied().map(round12).collect()
}

pub fn score_payload(s: &ScoreSummary) -> ScorePayload {
    ScorePayload {
        distribution: round_all(&s.distribution),
        expected: round12(s.expected),
        most_probable: s.most_probable,
        credible_states: s.credible.states.clone(),
        coverage: round12(s.credible.coverage),
        lo: s.credible.lo,
        hi: s.credible.hi,
        grade_masses: round_all(&s.grade_masses),
        grade_index: s.grade.index,
        grade_label: s.grade.label.clone(),
    }
}

pub fn step_payload(r: &StepRecord) -> StepPayload {
    StepPayload {
        step: r.step,
        question: r.question,
        state: r.state,
        points: r.points,
        remaining: score_payload(&r.remaining),
        all: score_payload(&r.all),
        skill_marginals: r.skill_marginals.iter().map(|m| round_all(m)).collect(),
        predicted_states: r.predicted_states.clone(),
        next_question: r.next_question,
    }
}

pub fn score_summary(p: &ScorePayload) -> ScoreSummary {
    ScoreSummary {
        distribution: p.distribution.clone(),
        expected: p.expected,
        most_probable: p.most_probable,
        credible: CredibleSet {
            states: p.credible_states.clone(),
            coverage: p.coverage,
            lo: p.lo,
            hi: p.hi,
        },
        grade_masses: p.grade_masses.clone(),
        grade: Grade {
            index: p.grade_index,
            label: p.grade_label.clone(),
        },
    }
}

/// Inverse of [`step_payload`] up to rounding.
pub fn step_record(p: &StepPayload) -> StepRecord {
    StepRecord {
        step: p.step,
        question: p.question,
        state: p.state,
        points: p.points,
        remaining: score_summary(&p.remaining),
        all: score_summary(&p.all),
        skill_marginals: p.skill_marginals.clone(),
        predicted_states: p.predicted_states.clone(),
        next_question: p.next_question,
    }
}

pub fn question_info(model: &StudentModel, q: usize) -> QuestionInfo {
    let var = &model.questions()[q];
    QuestionInfo {
        id: q,
        label: var.name.clone(),
        states: var
            .points
            .iter()
            .enumerate()
            .map(|(state, &points)| StateInfo { state, points })
            .collect(),
    }
}
