//! Bipartite skill/question student models.
//!
//! A [`StudentModel`] has a layer of latent ordinal skills and a layer of
//! observed questions. Every edge runs from a skill to a question, and each
//! question carries a conditional probability table over the joint states of
//! its parents. Parent configurations are enumerated row-major with the last
//! listed parent varying fastest.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Tolerance for "sums to one" checks on probability vectors.
pub const PROB_TOLERANCE: f64 = 1e-9;

/// Direction in which a parent skill influences a question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Effect {
    /// Higher skill states shift the answer distribution towards more points.
    Isotone,
    /// Higher skill states shift the answer distribution towards fewer points.
    Antitone,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkillVar {
    pub name: String,
    pub num_states: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuestionVar {
    pub name: String,
    /// Points awarded for each state; `points[0] == 0` and strictly increasing.
    pub points: Vec<u32>,
}

impl QuestionVar {
    pub fn num_states(&self) -> usize {
        self.points.len()
    }

    pub fn max_points(&self) -> u32 {
        *self.points.last().unwrap_or(&0)
    }
}

/// Conditional probability table of one question.
///
/// Rows are stored flat; row `r` holds `P(X = t | parents = config(r))` for
/// `t in 0..num_states`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cpt {
    radix: Vec<usize>,
    num_states: usize,
    probs: Vec<f64>,
}

impl Cpt {
    /// Uniform table for the given parent state counts.
    pub fn uniform(radix: Vec<usize>, num_states: usize) -> Self {
        let rows: usize = radix.iter().product();
        let p = 1.0 / num_states as f64;
        Cpt {
            radix,
            num_states,
            probs: vec![p; rows * num_states],
        }
    }

    /// Builds a table from explicit rows, validating shape and normalization.
    pub fn from_rows(radix: Vec<usize>, rows: &[Vec<f64>]) -> Result<Self, String> {
        let expected: usize = radix.iter().product();
        if rows.len() != expected {
            return Err(format!("expected {} rows, found {}", expected, rows.len()));
        }
        let num_states = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut probs = Vec::with_capacity(expected * num_states);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != num_states {
                return Err(format!("row {} has {} entries, expected {}", i, row.len(), num_states));
            }
            check_distribution(row).map_err(|e| format!("row {}: {}", i, e))?;
            probs.extend_from_slice(row);
        }
        Ok(Cpt {
            radix,
            num_states,
            probs,
        })
    }

    pub fn num_rows(&self) -> usize {
        self.probs.len() / self.num_states.max(1)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    /// State counts of the parents, in parent order.
    pub fn radix(&self) -> &[usize] {
        &self.radix
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.probs[r * self.num_states..(r + 1) * self.num_states]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let n = self.num_states;
        &mut self.probs[r * n..(r + 1) * n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks(self.num_states)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(|r| r.to_vec()).collect()
    }

    /// Parent states of row `r` (last parent varies fastest).
    pub fn config_of(&self, mut r: usize) -> Vec<usize> {
        let mut config = vec![0; self.radix.len()];
        for (slot, &m) in config.iter_mut().zip(&self.radix).rev() {
            *slot = r % m;
            r /= m;
        }
        config
    }

    /// Row index of a parent configuration.
    pub fn index_of(&self, config: &[usize]) -> usize {
        config.iter().zip(&self.radix).fold(0, |acc, (&s, &m)| acc * m + s)
    }
}

/// Per-question partition of parents into isotone and antitone effects.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonotonicityAnnotation {
    effects: Vec<Vec<Effect>>,
}

impl MonotonicityAnnotation {
    pub fn new(effects: Vec<Vec<Effect>>) -> Self {
        MonotonicityAnnotation { effects }
    }

    /// Effects of the parents of `question`, aligned with the parent list.
    pub fn effects(&self, question: usize) -> &[Effect] {
        &self.effects[question]
    }

    /// Parent positions with an isotone effect.
    pub fn isotone(&self, question: usize) -> Vec<usize> {
        self.positions(question, Effect::Isotone)
    }

    /// Parent positions with an antitone effect.
    pub fn antitone(&self, question: usize) -> Vec<usize> {
        self.positions(question, Effect::Antitone)
    }

    fn positions(&self, question: usize, which: Effect) -> Vec<usize> {
        self.effects[question]
            .iter()
            .enumerate()
            .filter(|(_, &e)| e == which)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Declarative model description, the input to [`build_model`].
///
/// Edges refer to variables by name. Priors and CPTs are optional and default
/// to uniform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub skills: Vec<SkillSpec>,
    pub questions: Vec<QuestionSpec>,
    pub edges: Vec<EdgeSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillSpec {
    pub name: String,
    pub states: usize,
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        with = "crate::data::decimal::opt_vec"
    )]
    pub prior: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionSpec {
    pub name: String,
    pub points: Vec<u32>,
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        with = "crate::data::decimal::opt_mat"
    )]
    pub cpt: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub from: String,
    pub to: String,
    pub effect: Effect,
}

/// The bipartite student model. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentModel {
    skills: Vec<SkillVar>,
    questions: Vec<QuestionVar>,
    parents: Vec<Vec<usize>>,
    annotation: MonotonicityAnnotation,
    priors: Vec<Vec<f64>>,
    cpts: Vec<Cpt>,
}

/// Validates a description and builds the model.
pub fn build_model(spec: &ModelSpec) -> Result<StudentModel, ModelError> {
    let invalid = |name: &str, reason: String| ModelError::Invalid {
        variable: name.to_string(),
        reason,
    };

    let mut names: HashMap<&str, Node> = HashMap::new();
    let mut skills = Vec::with_capacity(spec.skills.len());
    for (j, s) in spec.skills.iter().enumerate() {
        if s.states < 2 {
            return Err(invalid(
                &s.name,
                format!("skill needs at least 2 states, has {}", s.states),
            ));
        }
        if names.insert(&s.name, Node::Skill(j)).is_some() {
            return Err(invalid(&s.name, "duplicate variable name".into()));
        }
        skills.push(SkillVar {
            name: s.name.clone(),
            num_states: s.states,
        });
    }
    let mut questions = Vec::with_capacity(spec.questions.len());
    for (i, q) in spec.questions.iter().enumerate() {
        if q.points.len() < 2 {
            return Err(invalid(
                &q.name,
                format!("question needs at least 2 states, has {}", q.points.len()),
            ));
        }
        if q.points[0] != 0 {
            return Err(invalid(&q.name, "state 0 must carry 0 points".into()));
        }
        if q.points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid(&q.name, "point values must be strictly increasing".into()));
        }
        if names.insert(&q.name, Node::Question(i)).is_some() {
            return Err(invalid(&q.name, "duplicate variable name".into()));
        }
        questions.push(QuestionVar {
            name: q.name.clone(),
            points: q.points.clone(),
        });
    }

    let mut parents = vec![Vec::new(); questions.len()];
    let mut effects = vec![Vec::new(); questions.len()];
    for e in &spec.edges {
        let from = names
            .get(e.from.as_str())
            .ok_or_else(|| invalid(&e.from, "edge references unknown variable".into()))?;
        let to = names
            .get(e.to.as_str())
            .ok_or_else(|| invalid(&e.to, "edge references unknown variable".into()))?;
        let (j, i) = match (*from, *to) {
            (Node::Skill(j), Node::Question(i)) => (j, i),
            (Node::Skill(_), Node::Skill(_)) => {
                return Err(invalid(
                    &e.to,
                    format!("edge {} -> {} targets a skill; skills have no parents", e.from, e.to),
                ))
            }
            (Node::Question(_), _) => {
                return Err(invalid(
                    &e.from,
                    format!(
                        "edge {} -> {} starts at a question; edges must go from skills to questions",
                        e.from, e.to
                    ),
                ))
            }
        };
        if parents[i].contains(&j) {
            return Err(invalid(&e.to, format!("duplicate parent {}", e.from)));
        }
        parents[i].push(j);
        effects[i].push(e.effect);
    }

    let mut priors = Vec::with_capacity(skills.len());
    for (s, spec_s) in skills.iter().zip(&spec.skills) {
        let prior = match &spec_s.prior {
            Some(p) => {
                if p.len() != s.num_states {
                    return Err(invalid(
                        &s.name,
                        format!("prior has {} entries, expected {}", p.len(), s.num_states),
                    ));
                }
                check_distribution(p).map_err(|e| invalid(&s.name, format!("prior: {}", e)))?;
                p.clone()
            }
            None => vec![1.0 / s.num_states as f64; s.num_states],
        };
        priors.push(prior);
    }

    let mut cpts = Vec::with_capacity(questions.len());
    for (i, q) in questions.iter().enumerate() {
        if parents[i].is_empty() {
            return Err(invalid(&q.name, "question has no parent skill".into()));
        }
        let radix: Vec<usize> = parents[i].iter().map(|&j| skills[j].num_states).collect();
        let cpt = match &spec.questions[i].cpt {
            Some(rows) => {
                let cpt = Cpt::from_rows(radix, rows).map_err(|e| invalid(&q.name, format!("cpt: {}", e)))?;
                if cpt.num_states() != q.num_states() {
                    return Err(invalid(
                        &q.name,
                        format!(
                            "cpt rows have {} states, question has {}",
                            cpt.num_states(),
                            q.num_states()
                        ),
                    ));
                }
                cpt
            }
            None => Cpt::uniform(radix, q.num_states()),
        };
        cpts.push(cpt);
    }

    Ok(StudentModel {
        skills,
        questions,
        parents,
        annotation: MonotonicityAnnotation::new(effects),
        priors,
        cpts,
    })
}

#[derive(Clone, Copy)]
enum Node {
    Skill(usize),
    Question(usize),
}

impl StudentModel {
    pub fn skills(&self) -> &[SkillVar] {
        &self.skills
    }

    pub fn questions(&self) -> &[QuestionVar] {
        &self.questions
    }

    pub fn num_skills(&self) -> usize {
        self.skills.len()
    }

    pub fn num_questions(&self) -> usize {
        self.questions.len()
    }

    /// Parent skill indices of a question, in CPT order.
    pub fn parents(&self, question: usize) -> &[usize] {
        &self.parents[question]
    }

    pub fn annotation(&self) -> &MonotonicityAnnotation {
        &self.annotation
    }

    pub fn prior(&self, skill: usize) -> &[f64] {
        &self.priors[skill]
    }

    pub fn priors(&self) -> &[Vec<f64>] {
        &self.priors
    }

    pub fn cpt(&self, question: usize) -> &Cpt {
        &self.cpts[question]
    }

    pub fn cpts(&self) -> &[Cpt] {
        &self.cpts
    }

    /// Maximum attainable total score.
    pub fn max_score(&self) -> u32 {
        self.questions.iter().map(QuestionVar::max_points).sum()
    }

    /// Same structure with new parameters. Shapes are checked; normalization
    /// is the caller's responsibility (learning code always normalizes).
    pub fn with_parameters(&self, priors: Vec<Vec<f64>>, cpts: Vec<Cpt>) -> StudentModel {
        assert_eq!(priors.len(), self.priors.len());
        assert_eq!(cpts.len(), self.cpts.len());
        for (a, b) in cpts.iter().zip(&self.cpts) {
            assert_eq!(a.radix(), b.radix());
            assert_eq!(a.num_states(), b.num_states());
        }
        StudentModel {
            priors,
            cpts,
            ..self.clone()
        }
    }

    /// Model with uniform parameters on the same structure.
    pub fn uniform(&self) -> StudentModel {
        let priors = self
            .skills
            .iter()
            .map(|s| vec![1.0 / s.num_states as f64; s.num_states])
            .collect();
        let cpts = self
            .cpts
            .iter()
            .map(|c| Cpt::uniform(c.radix().to_vec(), c.num_states()))
            .collect();
        self.with_parameters(priors, cpts)
    }

    /// Sub-model keeping only the first `count` questions.
    pub fn restrict_questions(&self, count: usize) -> StudentModel {
        let count = count.min(self.questions.len());
        let effects = (0..count).map(|i| self.annotation.effects(i).to_vec()).collect();
        StudentModel {
            skills: self.skills.clone(),
            questions: self.questions[..count].to_vec(),
            parents: self.parents[..count].to_vec(),
            annotation: MonotonicityAnnotation::new(effects),
            priors: self.priors.clone(),
            cpts: self.cpts[..count].to_vec(),
        }
    }

    /// Description that rebuilds this model exactly.
    pub fn to_spec(&self) -> ModelSpec {
        let skills = self
            .skills
            .iter()
            .zip(&self.priors)
            .map(|(s, p)| SkillSpec {
                name: s.name.clone(),
                states: s.num_states,
                prior: Some(p.clone()),
            })
            .collect();
        let questions = self
            .questions
            .iter()
            .zip(&self.cpts)
            .map(|(q, c)| QuestionSpec {
                name: q.name.clone(),
                points: q.points.clone(),
                cpt: Some(c.to_rows()),
            })
            .collect();
        let mut edges = Vec::new();
        for (i, q) in self.questions.iter().enumerate() {
            for (&j, &effect) in self.parents[i].iter().zip(self.annotation.effects(i)) {
                edges.push(EdgeSpec {
                    from: self.skills[j].name.clone(),
                    to: q.name.clone(),
                    effect,
                });
            }
        }
        ModelSpec {
            skills,
            questions,
            edges,
        }
    }
}

/// Checks that `p` is a probability vector.
pub fn check_distribution(p: &[f64]) -> Result<(), String> {
    if p.is_empty() {
        return Err("empty probability vector".into());
    }
    if let Some(x) = p.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(format!("invalid probability {}", x));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > PROB_TOLERANCE {
        return Err(format!("probabilities sum to {}", sum));
    }
    Ok(())
}
