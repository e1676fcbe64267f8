//! Exact inference by enumeration of the joint skill space.
//!
//! Skills are a-priori independent, so the joint prior is a product of
//! marginals; answered questions multiply in one likelihood factor each.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::InferenceError;
use crate::model::StudentModel;

/// Default cap on the number of joint skill configurations.
pub const DEFAULT_JOINT_CAP: usize = 1_000_000;

/// Observed question states.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence(BTreeMap<usize, usize>);

impl Evidence {
    pub fn new() -> Self {
        Evidence::default()
    }

    /// Adds an observation after checking it against the model.
    pub fn observe(&mut self, model: &StudentModel, question: usize, state: usize) -> Result<(), InferenceError> {
        let q = model
            .questions()
            .get(question)
            .ok_or(InferenceError::UnknownQuestion(question))?;
        if state >= q.num_states() {
            return Err(InferenceError::InvalidState { question, state });
        }
        if self.0.contains_key(&question) {
            return Err(InferenceError::Duplicate(question));
        }
        self.0.insert(question, state);
        Ok(())
    }

    pub fn get(&self, question: usize) -> Option<usize> {
        self.0.get(&question).copied()
    }

    pub fn contains(&self, question: usize) -> bool {
        self.0.contains_key(&question)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.0.iter().map(|(&q, &s)| (q, s))
    }
}

/// Structure-only index of the joint skill space.
///
/// Joint configurations are enumerated row-major over skills (last skill
/// fastest). For every question the index stores the CPT row selected by
/// each joint configuration.
#[derive(Debug, Clone)]
pub struct JointIndex {
    radix: Vec<usize>,
    size: usize,
    skill_states: Vec<Vec<u8>>,
    parent_rows: Vec<Vec<u32>>,
}

impl JointIndex {
    pub fn new(model: &StudentModel, cap: usize) -> Result<Self, InferenceError> {
        let radix: Vec<usize> = model.skills().iter().map(|s| s.num_states).collect();
        let mut size = 1usize;
        for &m in &radix {
            size = size.saturating_mul(m);
            if size > cap {
                return Err(InferenceError::Capacity { size, cap });
            }
        }
        let mut skill_states = vec![Vec::with_capacity(size); radix.len()];
        let mut config = vec![0usize; radix.len()];
        for c in 0..size {
            let mut rest = c;
            for (slot, &m) in config.iter_mut().zip(&radix).rev() {
                *slot = rest % m;
                rest /= m;
            }
            for (j, &s) in config.iter().enumerate() {
                skill_states[j].push(s as u8);
            }
        }
        let parent_rows = (0..model.num_questions())
            .map(|q| {
                let parents = model.parents(q);
                let cpt = model.cpt(q);
                (0..size)
                    .map(|c| {
                        parents
                            .iter()
                            .zip(cpt.radix())
                            .fold(0usize, |acc, (&j, &m)| acc * m + skill_states[j][c] as usize)
                            as u32
                    })
                    .collect()
            })
            .collect();
        Ok(JointIndex {
            radix,
            size,
            skill_states,
            parent_rows,
        })
    }

    /// Number of joint skill configurations.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn radix(&self) -> &[usize] {
        &self.radix
    }

    /// State of `skill` in joint configuration `config`.
    pub fn skill_state(&self, skill: usize, config: usize) -> usize {
        self.skill_states[skill][config] as usize
    }

    /// CPT row of `question` selected by joint configuration `config`.
    pub fn parent_row(&self, question: usize, config: usize) -> usize {
        self.parent_rows[question][config] as usize
    }

    pub(crate) fn parent_rows(&self, question: usize) -> &[u32] {
        &self.parent_rows[question]
    }

    /// Product-of-marginals joint prior.
    pub fn joint_prior(&self, model: &StudentModel) -> Vec<f64> {
        let mut joint = vec![1.0; self.size];
        for (j, states) in self.skill_states.iter().enumerate() {
            let prior = model.prior(j);
            for (w, &s) in joint.iter_mut().zip(states) {
                *w *= prior[s as usize];
            }
        }
        joint
    }
}

/// A model bundled with its joint index and cached per-configuration data.
#[derive(Debug)]
pub struct JointModel {
    model: StudentModel,
    index: Arc<JointIndex>,
    prior: Vec<f64>,
    score_table: OnceLock<Vec<Vec<f64>>>,
}

impl JointModel {
    pub fn new(model: StudentModel) -> Result<Self, InferenceError> {
        Self::with_cap(model, DEFAULT_JOINT_CAP)
    }

    pub fn with_cap(model: StudentModel, cap: usize) -> Result<Self, InferenceError> {
        let index = Arc::new(JointIndex::new(&model, cap)?);
        Ok(Self::with_index(model, index))
    }

    /// Reuses an index built for the same structure.
    pub fn with_index(model: StudentModel, index: Arc<JointIndex>) -> Self {
        let prior = index.joint_prior(&model);
        JointModel {
            model,
            index,
            prior,
            score_table: OnceLock::new(),
        }
    }

    pub fn model(&self) -> &StudentModel {
        &self.model
    }

    pub fn index(&self) -> &JointIndex {
        &self.index
    }

    pub fn shared_index(&self) -> Arc<JointIndex> {
        self.index.clone()
    }

    pub fn joint_prior(&self) -> &[f64] {
        &self.prior
    }

    /// Score distribution over all questions for every joint configuration.
    pub(crate) fn score_table(&self) -> &[Vec<f64>] {
        self.score_table
            .get_or_init(|| crate::score::per_config_distributions(self))
    }
}

/// Posterior over the joint skill space with per-skill marginals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillPosterior {
    pub joint: Vec<f64>,
    pub marginals: Vec<Vec<f64>>,
}

impl SkillPosterior {
    fn from_joint(jm: &JointModel, joint: Vec<f64>) -> Self {
        let index = jm.index();
        let marginals = (0..jm.model().num_skills())
            .map(|j| {
                let mut m = vec![0.0; index.radix()[j]];
                for (c, &w) in joint.iter().enumerate() {
                    m[index.skill_state(j, c)] += w;
                }
                m
            })
            .collect();
        SkillPosterior { joint, marginals }
    }

    /// The prior, as a posterior with no evidence.
    pub fn prior(jm: &JointModel) -> Self {
        Self::from_joint(jm, jm.joint_prior().to_vec())
    }

    /// Conditions on one more observation.
    pub fn update(&self, jm: &JointModel, question: usize, state: usize) -> Result<Self, InferenceError> {
        let cpt = jm.model().cpt(question);
        let rows = jm.index().parent_rows(question);
        let mut joint: Vec<f64> = self
            .joint
            .iter()
            .zip(rows)
            .map(|(&w, &r)| w * cpt.row(r as usize)[state])
            .collect();
        normalize(&mut joint)?;
        Ok(Self::from_joint(jm, joint))
    }

    /// Shannon entropy (nats) of the joint distribution.
    pub fn entropy(&self) -> f64 {
        entropy(&self.joint)
    }
}

/// `P(s | e)` for the given evidence.
pub fn skill_posterior(jm: &JointModel, evidence: &Evidence) -> Result<SkillPosterior, InferenceError> {
    let mut joint = jm.joint_prior().to_vec();
    for (q, s) in evidence.iter() {
        let cpt = jm.model().cpt(q);
        for (w, &r) in joint.iter_mut().zip(jm.index().parent_rows(q)) {
            *w *= cpt.row(r as usize)[s];
        }
        // Renormalize per factor so long evidence vectors cannot underflow.
        normalize(&mut joint)?;
    }
    normalize(&mut joint)?;
    Ok(SkillPosterior::from_joint(jm, joint))
}

/// Predictive distribution of one question under a skill posterior.
pub fn question_predictive(jm: &JointModel, posterior: &SkillPosterior, question: usize) -> Vec<f64> {
    let cpt = jm.model().cpt(question);
    let mut out = vec![0.0; cpt.num_states()];
    for (&w, &r) in posterior.joint.iter().zip(jm.index().parent_rows(question)) {
        if w == 0.0 {
            continue;
        }
        for (o, p) in out.iter_mut().zip(cpt.row(r as usize)) {
            *o += w * p;
        }
    }
    out
}

/// Log-likelihood of one (possibly partial) answer vector, missing answers
/// marginalized.
pub fn student_log_likelihood(jm: &JointModel, answers: &[Option<usize>]) -> f64 {
    let mut joint = jm.joint_prior().to_vec();
    let mut log_scale = 0.0;
    for (q, a) in answers.iter().enumerate() {
        let Some(s) = *a else { continue };
        let cpt = jm.model().cpt(q);
        let mut total = 0.0;
        for (w, &r) in joint.iter_mut().zip(jm.index().parent_rows(q)) {
            *w *= cpt.row(r as usize)[s];
            total += *w;
        }
        if total <= 0.0 {
            return f64::NEG_INFINITY;
        }
        log_scale += total.ln();
        joint.iter_mut().for_each(|w| *w /= total);
    }
    log_scale
}

/// Total log-likelihood of a dataset.
pub fn log_likelihood(jm: &JointModel, data: &Dataset) -> Result<f64, InferenceError> {
    if data.is_empty() {
        return Err(InferenceError::EmptyDataset);
    }
    Ok(data.rows().iter().map(|row| student_log_likelihood(jm, row)).sum())
}

pub(crate) fn normalize(p: &mut [f64]) -> Result<f64, InferenceError> {
    let total: f64 = p.iter().sum();
    if total.is_nan() || total <= 0.0 || !total.is_finite() {
        return Err(InferenceError::Contradiction);
    }
    p.iter_mut().for_each(|x| *x /= total);
    Ok(total)
}

pub(crate) fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}
