//! Partial order over parent configurations and the monotonicity check.
//!
//! For a question with parents `S^i`, configuration `s` precedes `r` when every
//! isotone parent has `s_j <= r_j` and every antitone parent has `s_j >= r_j`.
//! A CPT is monotone when the cumulative answer distribution is antitone in
//! that order: `s <= r` implies `F_k(s) >= F_k(r)` for every level `k` below
//! the top state.

use serde::{Deserialize, Serialize};

use crate::model::{Cpt, Effect, StudentModel};

/// Default tolerance used to certify monotone tables.
pub const MONOTONE_TOLERANCE: f64 = 1e-9;

/// Covering relation of the parent-configuration order of one question.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParentConfigOrder {
    radix: Vec<usize>,
    effects: Vec<Effect>,
    /// `(lower, upper)` row pairs where `upper` immediately succeeds `lower`.
    covering: Vec<(usize, usize)>,
}

/// Builds the covering pairs for a question's parent configurations.
///
/// In a product of chains the covering pairs are exactly the configurations
/// differing in one coordinate by one step in the "upwards" direction.
pub fn covering_pairs(radix: &[usize], effects: &[Effect]) -> ParentConfigOrder {
    assert_eq!(radix.len(), effects.len(), "annotation must cover every parent");
    let rows: usize = radix.iter().product();
    let mut covering = Vec::new();
    let mut config = vec![0usize; radix.len()];
    for row in 0..rows {
        decode(row, radix, &mut config);
        for (pos, (&m, &effect)) in radix.iter().zip(effects).enumerate() {
            let s = config[pos];
            let up = match effect {
                Effect::Isotone if s + 1 < m => Some(s + 1),
                Effect::Antitone if s > 0 => Some(s - 1),
                _ => None,
            };
            if let Some(up) = up {
                let mut next = config.clone();
                next[pos] = up;
                covering.push((row, encode(&next, radix)));
            }
        }
    }
    ParentConfigOrder {
        radix: radix.to_vec(),
        effects: effects.to_vec(),
        covering,
    }
}

/// Order for question `question` of `model`.
pub fn question_order(model: &StudentModel, question: usize) -> ParentConfigOrder {
    covering_pairs(model.cpt(question).radix(), model.annotation().effects(question))
}

impl ParentConfigOrder {
    pub fn covering(&self) -> &[(usize, usize)] {
        &self.covering
    }

    pub fn num_configs(&self) -> usize {
        self.radix.iter().product()
    }

    /// Whether configuration row `a` precedes-or-equals row `b`.
    pub fn precedes(&self, a: usize, b: usize) -> bool {
        let mut ca = vec![0; self.radix.len()];
        let mut cb = vec![0; self.radix.len()];
        decode(a, &self.radix, &mut ca);
        decode(b, &self.radix, &mut cb);
        ca.iter().zip(&cb).zip(&self.effects).all(|((x, y), e)| match e {
            Effect::Isotone => x <= y,
            Effect::Antitone => x >= y,
        })
    }

    /// Rows from bottom to top when the order is total, i.e. a single parent.
    pub fn chain(&self) -> Option<Vec<usize>> {
        if self.radix.len() != 1 {
            return None;
        }
        let m = self.radix[0];
        Some(match self.effects[0] {
            Effect::Isotone => (0..m).collect(),
            Effect::Antitone => (0..m).rev().collect(),
        })
    }

    /// All comparable pairs `(a, b)` with `a != b` and `a` preceding `b`.
    pub fn comparable_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.num_configs();
        let mut out = Vec::new();
        for a in 0..n {
            for b in 0..n {
                if a != b && self.precedes(a, b) {
                    out.push((a, b));
                }
            }
        }
        out
    }
}

fn decode(mut row: usize, radix: &[usize], out: &mut [usize]) {
    for (slot, &m) in out.iter_mut().zip(radix).rev() {
        *slot = row % m;
        row /= m;
    }
}

fn encode(config: &[usize], radix: &[usize]) -> usize {
    config.iter().zip(radix).fold(0, |acc, (&s, &m)| acc * m + s)
}

/// One violated inequality `F_level(lower) >= F_level(upper)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub lower: usize,
    pub upper: usize,
    pub level: usize,
    /// `F_level(upper) - F_level(lower)`, positive.
    pub magnitude: f64,
}

/// Checks the cumulative monotonicity condition for every comparable pair and
/// every level below the top state. An empty result means monotone.
pub fn is_monotone(cpt: &Cpt, order: &ParentConfigOrder, tolerance: f64) -> Vec<Violation> {
    let cumulative: Vec<Vec<f64>> = cpt.rows().map(cumulative_levels).collect();
    let mut violations = Vec::new();
    for (lower, upper) in order.comparable_pairs() {
        for level in 0..cpt.num_states() - 1 {
            let diff = cumulative[upper][level] - cumulative[lower][level];
            if diff > tolerance {
                violations.push(Violation {
                    lower,
                    upper,
                    level,
                    magnitude: diff,
                });
            }
        }
    }
    violations
}

/// Cumulative sums `F_k = sum_{t<=k} p_t` for `k` below the top state.
pub(crate) fn cumulative_levels(row: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    row[..row.len() - 1]
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect()
}

/// Violations for a question of a model, tagged with the question index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionViolation {
    pub question: usize,
    #[serde(flatten)]
    pub violation: Violation,
}

/// Runs [`is_monotone`] over every question of `model`.
pub fn certify(model: &StudentModel, tolerance: f64) -> Vec<QuestionViolation> {
    (0..model.num_questions())
        .flat_map(|q| {
            let order = question_order(model, q);
            is_monotone(model.cpt(q), &order, tolerance)
                .into_iter()
                .map(move |violation| QuestionViolation { question: q, violation })
        })
        .collect()
}
