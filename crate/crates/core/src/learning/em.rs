//! Expected sufficient statistics and the EM update.

use crate::data::Dataset;
use crate::inference::{normalize, JointModel};
use crate::model::{Cpt, StudentModel};

/// Expected counts of skill states and of (parent configuration, answer)
/// pairs, accumulated over students under the current posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedCounts {
    /// Per skill, per state.
    pub priors: Vec<Vec<f64>>,
    /// Per question, flat `rows x states` in CPT layout.
    pub cpts: Vec<Vec<f64>>,
    /// Training log-likelihood of the model the counts were taken under.
    pub log_likelihood: f64,
}

impl ExpectedCounts {
    /// Expected number of students in each parent configuration of `question`.
    pub fn row_totals(&self, model: &StudentModel, question: usize) -> Vec<f64> {
        let ns = model.cpt(question).num_states();
        self.cpts[question].chunks(ns).map(|r| r.iter().sum()).collect()
    }
}

/// E-step. Missing answers contribute their expected counts under the
/// current parameters when `include_missing` is set (needed by EM; the
/// likelihood gradient does not depend on them).
pub fn expected_counts(jm: &JointModel, data: &Dataset, include_missing: bool) -> ExpectedCounts {
    let model = jm.model();
    let index = jm.index();
    let mut priors: Vec<Vec<f64>> = model.skills().iter().map(|s| vec![0.0; s.num_states]).collect();
    let mut cpts: Vec<Vec<f64>> = model
        .cpts()
        .iter()
        .map(|c| vec![0.0; c.num_rows() * c.num_states()])
        .collect();
    let mut log_likelihood = 0.0;
    let mut w = vec![0.0; index.size()];
    let mut row_mass: Vec<Vec<f64>> = model.cpts().iter().map(|c| vec![0.0; c.num_rows()]).collect();

    for answers in data.rows() {
        w.copy_from_slice(jm.joint_prior());
        for (q, a) in answers.iter().enumerate() {
            let Some(s) = *a else { continue };
            let cpt = model.cpt(q);
            for (wc, &r) in w.iter_mut().zip(index.parent_rows(q)) {
                *wc *= cpt.row(r as usize)[s];
            }
            match normalize(&mut w) {
                Ok(total) => log_likelihood += total.ln(),
                Err(_) => {
                    log_likelihood = f64::NEG_INFINITY;
                    break;
                }
            }
        }
        if !log_likelihood.is_finite() {
            continue;
        }

        for (j, counts) in priors.iter_mut().enumerate() {
            for (c, &wc) in w.iter().enumerate() {
                counts[index.skill_state(j, c)] += wc;
            }
        }
        for (q, a) in answers.iter().enumerate() {
            if a.is_none() && !include_missing {
                continue;
            }
            let mass = &mut row_mass[q];
            mass.iter_mut().for_each(|m| *m = 0.0);
            for (&wc, &r) in w.iter().zip(index.parent_rows(q)) {
                mass[r as usize] += wc;
            }
            let cpt = model.cpt(q);
            let ns = cpt.num_states();
            let counts = &mut cpts[q];
            for (r, &m) in mass.iter().enumerate() {
                match *a {
                    Some(s) => counts[r * ns + s] += m,
                    None => {
                        for (t, p) in cpt.row(r).iter().enumerate() {
                            counts[r * ns + t] += m * p;
                        }
                    }
                }
            }
        }
    }
    ExpectedCounts {
        priors,
        cpts,
        log_likelihood,
    }
}

/// M-step: every row and prior becomes `(count + smoothing)` normalized.
pub fn maximize(template: &StudentModel, counts: &ExpectedCounts, smoothing: f64) -> StudentModel {
    let priors = counts.priors.iter().map(|c| smoothed(c, smoothing)).collect();
    let cpts = template
        .cpts()
        .iter()
        .zip(&counts.cpts)
        .map(|(cpt, flat)| {
            let rows: Vec<Vec<f64>> = flat.chunks(cpt.num_states()).map(|c| smoothed(c, smoothing)).collect();
            cpt_from_normalized(cpt, rows)
        })
        .collect();
    template.with_parameters(priors, cpts)
}

fn smoothed(counts: &[f64], eps: f64) -> Vec<f64> {
    let total: f64 = counts.iter().map(|c| c + eps).sum();
    if total > 0.0 {
        counts.iter().map(|c| (c + eps) / total).collect()
    } else {
        vec![1.0 / counts.len() as f64; counts.len()]
    }
}

pub(crate) fn cpt_from_normalized(shape: &Cpt, rows: Vec<Vec<f64>>) -> Cpt {
    let mut out = shape.clone();
    for (r, row) in rows.into_iter().enumerate() {
        out.row_mut(r).copy_from_slice(&row);
    }
    out
}

/// Result of one EM iteration.
#[derive(Debug, Clone)]
pub struct EmStep {
    pub model: StudentModel,
    /// Training log-likelihood of the input model.
    pub log_likelihood: f64,
    pub counts: ExpectedCounts,
}

/// One EM iteration.
pub fn em_step(jm: &JointModel, data: &Dataset, smoothing: f64) -> EmStep {
    let counts = expected_counts(jm, data, true);
    let model = maximize(jm.model(), &counts, smoothing);
    EmStep {
        model,
        log_likelihood: counts.log_likelihood,
        counts,
    }
}
