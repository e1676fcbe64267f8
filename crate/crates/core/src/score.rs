//! Distribution of the total test score.
//!
//! The score node is the sum of the points of all questions. Instead of a
//! CPT over every question, the sum is evaluated through a balanced binary
//! tree of pairwise-sum nodes (parent divorcing): each internal node convolves
//! the distributions of its two children and keeps only the support
//! `0..=partial maximum`. The tree is evaluated once per joint skill
//! configuration and the results are mixed by the skill posterior.

use serde::{Deserialize, Serialize};

use crate::error::InferenceError;
use crate::inference::{skill_posterior, Evidence, JointModel, SkillPosterior};

/// Default probability mass of the credible set.
pub const DEFAULT_CREDIBLE_MASS: f64 = 0.95;

/// Slack when comparing accumulated mass against the target mass.
const MASS_SLACK: f64 = 1e-12;

/// Which questions contribute uncertainty to the score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreVariant {
    /// Answered questions count with their observed points; only the
    /// remaining questions are predicted.
    #[serde(alias = "a")]
    Remaining,
    /// Every question is predicted from the inferred skills.
    #[serde(alias = "b")]
    All,
}

/// States selected by the credible-set rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CredibleSet {
    /// Selected scores, ascending.
    pub states: Vec<u32>,
    /// Probability mass of the selected states.
    pub coverage: f64,
    pub lo: u32,
    pub hi: u32,
}

impl CredibleSet {
    /// Number of score points spanned by the hull.
    pub fn hull_width(&self) -> u32 {
        self.hi - self.lo + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreDistribution {
    /// `probs[j] = P(score = j)` for `j in 0..=max_score`.
    pub probs: Vec<f64>,
    pub expected: f64,
    pub most_probable: u32,
    pub credible: CredibleSet,
}

impl ScoreDistribution {
    pub fn from_probs(probs: Vec<f64>, mass: f64) -> Self {
        let expected = probs.iter().enumerate().map(|(j, p)| j as f64 * p).sum();
        let most_probable = probs
            .iter()
            .enumerate()
            .fold(
                (0usize, f64::NEG_INFINITY),
                |best, (j, &p)| if p > best.1 { (j, p) } else { best },
            )
            .0 as u32;
        let credible = credible_interval(&probs, mass);
        ScoreDistribution {
            probs,
            expected,
            most_probable,
            credible,
        }
    }

    pub fn max_score(&self) -> u32 {
        self.probs.len() as u32 - 1
    }
}

/// Sorts states by probability (descending, lower score first on ties) and
/// keeps the shortest prefix whose mass reaches `mass`.
pub fn credible_interval(probs: &[f64], mass: f64) -> CredibleSet {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut coverage = 0.0;
    let mut states = Vec::new();
    for j in order {
        states.push(j as u32);
        coverage += probs[j];
        if coverage >= mass - MASS_SLACK {
            break;
        }
    }
    states.sort_unstable();
    CredibleSet {
        lo: states[0],
        hi: *states.last().unwrap(),
        states,
        coverage,
    }
}

/// Exact score distribution given evidence.
pub fn score_distribution(
    jm: &JointModel,
    evidence: &Evidence,
    variant: ScoreVariant,
) -> Result<ScoreDistribution, InferenceError> {
    let posterior = skill_posterior(jm, evidence)?;
    Ok(score_distribution_with_posterior(
        jm,
        &posterior,
        evidence,
        variant,
        DEFAULT_CREDIBLE_MASS,
    ))
}

/// Score distribution for an already computed posterior.
pub fn score_distribution_with_posterior(
    jm: &JointModel,
    posterior: &SkillPosterior,
    evidence: &Evidence,
    variant: ScoreVariant,
    mass: f64,
) -> ScoreDistribution {
    let size = jm.model().max_score() as usize + 1;
    let mut probs = vec![0.0; size];
    match variant {
        ScoreVariant::All => {
            mix_into(&mut probs, &posterior.joint, jm.score_table(), 0);
        }
        ScoreVariant::Remaining => {
            let answered: Vec<(usize, usize)> = evidence.iter().collect();
            let obtained: u32 = answered.iter().map(|&(q, s)| jm.model().questions()[q].points[s]).sum();
            let remaining: Vec<usize> = (0..jm.model().num_questions())
                .filter(|q| !evidence.contains(*q))
                .collect();
            let leaves = leaf_tables(jm, &remaining);
            for (c, &w) in posterior.joint.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let dist = divorce_config(jm, &remaining, &leaves, c);
                for (j, p) in dist.iter().enumerate() {
                    probs[obtained as usize + j] += w * p;
                }
            }
        }
    }
    ScoreDistribution::from_probs(probs, mass)
}

fn mix_into(out: &mut [f64], weights: &[f64], table: &[Vec<f64>], shift: usize) {
    for (w, dist) in weights.iter().zip(table) {
        if *w == 0.0 {
            continue;
        }
        for (j, p) in dist.iter().enumerate() {
            out[shift + j] += w * p;
        }
    }
}

/// Per-question, per-CPT-row distributions over points.
fn leaf_tables(jm: &JointModel, questions: &[usize]) -> Vec<Vec<Vec<f64>>> {
    questions
        .iter()
        .map(|&q| {
            let question = &jm.model().questions()[q];
            let cpt = jm.model().cpt(q);
            cpt.rows()
                .map(|row| {
                    let mut d = vec![0.0; question.max_points() as usize + 1];
                    for (t, p) in row.iter().enumerate() {
                        d[question.points[t] as usize] += p;
                    }
                    d
                })
                .collect()
        })
        .collect()
}

fn divorce_config(jm: &JointModel, questions: &[usize], leaves: &[Vec<Vec<f64>>], config: usize) -> Vec<f64> {
    let selected: Vec<&[f64]> = questions
        .iter()
        .zip(leaves)
        .map(|(&q, rows)| rows[jm.index().parent_row(q, config)].as_slice())
        .collect();
    divorce(&selected)
}

/// Balanced pairwise-sum tree over the given leaf distributions.
pub fn divorce(leaves: &[&[f64]]) -> Vec<f64> {
    match leaves.len() {
        0 => vec![1.0],
        1 => leaves[0].to_vec(),
        n => {
            let mid = n / 2;
            convolve(&divorce(&leaves[..mid]), &divorce(&leaves[mid..]))
        }
    }
}

/// Distribution of the sum of two independent non-negative integer variables.
pub fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (o, &y) in out[i..].iter_mut().zip(b) {
            *o += x * y;
        }
    }
    out
}

/// Score distribution over all questions for every joint configuration.
pub(crate) fn per_config_distributions(jm: &JointModel) -> Vec<Vec<f64>> {
    let all: Vec<usize> = (0..jm.model().num_questions()).collect();
    let leaves = leaf_tables(jm, &all);
    (0..jm.index().size())
        .map(|c| divorce_config(jm, &all, &leaves, c))
        .collect()
}

/// Score distribution by exhaustive enumeration of every answer vector, the
/// standard approach without divorcing. Refused above `max_questions`
/// enumerated questions.
pub fn naive_score_distribution(
    jm: &JointModel,
    evidence: &Evidence,
    variant: ScoreVariant,
    max_questions: usize,
) -> Result<Vec<f64>, InferenceError> {
    let model = jm.model();
    let (enumerated, obtained): (Vec<usize>, u32) = match variant {
        ScoreVariant::All => ((0..model.num_questions()).collect(), 0),
        ScoreVariant::Remaining => (
            (0..model.num_questions()).filter(|q| !evidence.contains(*q)).collect(),
            evidence.iter().map(|(q, s)| model.questions()[q].points[s]).sum(),
        ),
    };
    if enumerated.len() > max_questions {
        return Err(InferenceError::NaiveCap {
            count: enumerated.len(),
            cap: max_questions,
        });
    }
    let posterior = skill_posterior(jm, evidence)?;
    let mut probs = vec![0.0; model.max_score() as usize + 1];
    for (c, &w) in posterior.joint.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let rows: Vec<(&[f64], &[u32])> = enumerated
            .iter()
            .map(|&q| {
                (
                    model.cpt(q).row(jm.index().parent_row(q, c)),
                    model.questions()[q].points.as_slice(),
                )
            })
            .collect();
        enumerate_answers(&rows, w, obtained as usize, &mut probs);
    }
    Ok(probs)
}

fn enumerate_answers(rows: &[(&[f64], &[u32])], prob: f64, score: usize, out: &mut [f64]) {
    match rows.split_first() {
        None => out[score] += prob,
        Some(((row, points), rest)) => {
            for (p, &pts) in row.iter().zip(*points) {
                if *p != 0.0 {
                    enumerate_answers(rest, prob * p, score + pts as usize, out);
                }
            }
        }
    }
}
