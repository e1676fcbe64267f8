//! Parameter learning: EM, gradient ascent and their monotone variants.
//!
//! | method  | procedure                                                       |
//! |---------|-----------------------------------------------------------------|
//! | `em`    | EM with pseudo-count smoothing                                  |
//! | `grad`  | likelihood gradient ascent in softmax coordinates               |
//! | `irem`  | EM followed by an isotonic projection after every iteration     |
//! | `qirem` | EM to convergence, then projected EM until the likelihood settles |
//! | `rgrad` | gradient ascent on likelihood minus a growing monotonicity penalty, then one projection |
//!
//! Every method runs from `restarts` seeded Dirichlet(1) starting points,
//! shared across methods, and keeps the restart with the best training
//! log-likelihood (among monotone results for the monotone methods).

pub mod em;
pub mod gradient;
pub mod isotonic;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::LearnError;
use crate::inference::{JointIndex, JointModel, DEFAULT_JOINT_CAP};
use crate::model::{Cpt, StudentModel};
use crate::order::{certify, question_order, ParentConfigOrder, QuestionViolation, MONOTONE_TOLERANCE};

pub use em::{em_step, expected_counts, maximize, EmStep, ExpectedCounts};
pub use gradient::{gradient_step, log_likelihood_gradient, monotonicity_penalty, GradientStep, Logits};
pub use isotonic::{isotonic_dag, isotonic_project, pava};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Em,
    Grad,
    Irem,
    Qirem,
    Rgrad,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Em, Method::Grad, Method::Irem, Method::Qirem, Method::Rgrad];

    /// Whether the method guarantees a monotone result.
    pub fn is_monotone(self) -> bool {
        matches!(self, Method::Irem | Method::Qirem | Method::Rgrad)
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Em => "em",
            Method::Grad => "grad",
            Method::Irem => "irem",
            Method::Qirem => "qirem",
            Method::Rgrad => "rgrad",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method {:?} (expected em, grad, irem, qirem or rgrad)", s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnConfig {
    pub method: Method,
    pub max_iterations: usize,
    /// Converged when `|dLL| < tolerance * (1 + |LL|)`.
    pub tolerance: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Pseudo-count added to every expected count in the M-step.
    pub smoothing: f64,
    /// Penalty weights for `rgrad`, applied in order.
    pub penalty_schedule: Vec<f64>,
    /// Ascent iterations per penalty weight.
    pub penalty_iterations: usize,
    /// `qirem`: project every this many refinement iterations.
    pub projection_period: usize,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            method: Method::Em,
            max_iterations: 500,
            tolerance: 1e-6,
            restarts: 10,
            seed: 0,
            smoothing: 1e-3,
            penalty_schedule: vec![1.0, 10.0, 100.0],
            penalty_iterations: 200,
            projection_period: 1,
        }
    }
}

impl LearnConfig {
    pub fn for_method(method: Method) -> Self {
        LearnConfig {
            method,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |m: &str| Err(LearnError::Config(m.to_string()));
        if self.restarts < 1 {
            return bad("restarts must be at least 1");
        }
        if self.smoothing.is_nan() || self.smoothing <= 0.0 {
            return bad("smoothing pseudo-count must be positive");
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return bad("tolerance must be positive");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive");
        }
        if self.projection_period == 0 {
            return bad("projection_period must be positive");
        }
        if self.method == Method::Rgrad && (self.penalty_schedule.is_empty() || self.penalty_iterations == 0) {
            return bad("rgrad needs a non-empty penalty schedule and penalty_iterations > 0");
        }
        if self.penalty_schedule.iter().any(|w| w.is_nan() || *w <= 0.0) {
            return bad("penalty weights must be positive");
        }
        Ok(())
    }
}

/// One restart's outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartReport {
    pub restart: usize,
    /// Training log-likelihood per iteration; the last entry belongs to the
    /// returned parameters.
    pub trace: Vec<f64>,
    pub final_log_likelihood: f64,
    pub iterations: usize,
    pub feasible: bool,
    pub max_violation: f64,
}

#[derive(Debug, Clone)]
pub struct LearnResult {
    pub model: StudentModel,
    pub winner: usize,
    pub restarts: Vec<RestartReport>,
    /// Monotonicity violations of the winner at tolerance 1e-9.
    pub certificate: Vec<QuestionViolation>,
}

impl LearnResult {
    pub fn trace(&self) -> &[f64] {
        &self.restarts[self.winner].trace
    }

    pub fn log_likelihood(&self) -> f64 {
        self.restarts[self.winner].final_log_likelihood
    }

    pub fn report(&self, config: &LearnConfig) -> LearnReport {
        LearnReport {
            config: config.clone(),
            winner: self.winner,
            final_log_likelihood: self.log_likelihood(),
            restarts: self.restarts.clone(),
            certificate: self.certificate.clone(),
        }
    }
}

/// JSON report of a learning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnReport {
    pub config: LearnConfig,
    pub winner: usize,
    pub final_log_likelihood: f64,
    pub restarts: Vec<RestartReport>,
    pub certificate: Vec<QuestionViolation>,
}

/// Random parameters: every prior and CPT row drawn from Dirichlet(1).
pub fn random_parameters<R: Rng>(structure: &StudentModel, rng: &mut R) -> StudentModel {
    let priors = structure
        .skills()
        .iter()
        .map(|s| dirichlet_one(s.num_states, rng))
        .collect();
    let cpts = structure
        .cpts()
        .iter()
        .map(|c| {
            let mut cpt = c.clone();
            for r in 0..cpt.num_rows() {
                let row = dirichlet_one(cpt.num_states(), rng);
                cpt.row_mut(r).copy_from_slice(&row);
            }
            cpt
        })
        .collect();
    structure.with_parameters(priors, cpts)
}

pub(crate) fn dirichlet_one<R: Rng>(k: usize, rng: &mut R) -> Vec<f64> {
    let draws: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(Exp1) + 1e-300).collect();
    let s: f64 = draws.iter().sum();
    draws.into_iter().map(|x| x / s).collect()
}

/// Seed of restart `r`, identical for every method.
pub fn restart_seed(seed: u64, restart: usize) -> u64 {
    // splitmix64 of the pair
    let mut z = seed ^ (restart as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Projects every CPT of `model`, weighting rows by the expected
/// parent-configuration counts.
pub fn project_model(model: &StudentModel, counts: &ExpectedCounts, orders: &[ParentConfigOrder]) -> StudentModel {
    let cpts: Vec<Cpt> = (0..model.num_questions())
        .map(|q| isotonic_project(model.cpt(q), &orders[q], &counts.row_totals(model, q)))
        .collect();
    model.with_parameters(model.priors().to_vec(), cpts)
}

/// Learns parameters for `structure` from `data`.
pub fn learn(data: &Dataset, structure: &StudentModel, config: &LearnConfig) -> Result<LearnResult, LearnError> {
    config.validate()?;
    if data.is_empty() {
        return Err(crate::error::InferenceError::EmptyDataset.into());
    }
    if data.num_questions() != structure.num_questions() {
        return Err(LearnError::Config(format!(
            "dataset has {} questions, structure has {}",
            data.num_questions(),
            structure.num_questions()
        )));
    }
    let index = Arc::new(JointIndex::new(structure, DEFAULT_JOINT_CAP)?);
    let orders: Vec<ParentConfigOrder> = (0..structure.num_questions())
        .map(|q| question_order(structure, q))
        .collect();
    let run = Run {
        data,
        index,
        orders: &orders,
        config,
    };

    let outcomes: Vec<(StudentModel, RestartReport)> = (0..config.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(restart_seed(config.seed, r));
            let start = random_parameters(structure, &mut rng);
            run.restart(r, start)
        })
        .collect();

    let candidates = outcomes
        .iter()
        .enumerate()
        .filter(|(_, (_, rep))| !config.method.is_monotone() || rep.feasible);
    let mut winner: Option<usize> = None;
    for (i, (_, rep)) in candidates {
        if winner.is_none_or(|w| rep.final_log_likelihood > outcomes[w].1.final_log_likelihood) {
            winner = Some(i);
        }
    }
    let Some(winner) = winner else {
        let diagnostics = outcomes
            .iter()
            .map(|(_, rep)| format!("restart {}: {:.3e}", rep.restart, rep.max_violation))
            .collect::<Vec<_>>()
            .join(", ");
        return Err(LearnError::Infeasible {
            restarts: config.restarts,
            diagnostics,
        });
    };
    let model = outcomes[winner].0.clone();
    let certificate = certify(&model, MONOTONE_TOLERANCE);
    Ok(LearnResult {
        model,
        winner,
        restarts: outcomes.into_iter().map(|(_, r)| r).collect(),
        certificate,
    })
}

struct Run<'a> {
    data: &'a Dataset,
    index: Arc<JointIndex>,
    orders: &'a [ParentConfigOrder],
    config: &'a LearnConfig,
}

impl Run<'_> {
    fn joint(&self, model: StudentModel) -> JointModel {
        JointModel::with_index(model, self.index.clone())
    }

    fn converged(&self, prev: f64, cur: f64) -> bool {
        (cur - prev).abs() < self.config.tolerance * (1.0 + cur.abs())
    }

    fn restart(&self, restart: usize, start: StudentModel) -> (StudentModel, RestartReport) {
        let mut trace = Vec::new();
        let model = match self.config.method {
            Method::Em => self.em(start, &mut trace, None),
            Method::Irem => self.em(start, &mut trace, Some(1)),
            Method::Qirem => {
                let fitted = self.em(start, &mut trace, None);
                self.em(fitted, &mut trace, Some(self.config.projection_period))
            }
            Method::Grad => self.ascend(start, &mut trace, &[0.0], self.config.max_iterations),
            Method::Rgrad => {
                let fitted = self.ascend(
                    start,
                    &mut trace,
                    &self.config.penalty_schedule,
                    self.config.penalty_iterations,
                );
                let counts = expected_counts(&self.joint(fitted.clone()), self.data, true);
                let projected = project_model(&fitted, &counts, self.orders);
                trace.push(expected_counts(&self.joint(projected.clone()), self.data, false).log_likelihood);
                projected
            }
        };
        let model = if self.config.method.is_monotone() {
            self.ensure_feasible(model, &mut trace)
        } else {
            model
        };
        let violations = certify(&model, MONOTONE_TOLERANCE);
        let max_violation = violations.iter().map(|v| v.violation.magnitude).fold(0.0, f64::max);
        let report = RestartReport {
            restart,
            final_log_likelihood: *trace.last().unwrap_or(&f64::NEG_INFINITY),
            iterations: trace.len(),
            trace,
            feasible: violations.is_empty(),
            max_violation,
        };
        (model, report)
    }

    /// EM iterations; with `project_every = Some(k)` the M-step result is
    /// projected every `k` iterations.
    fn em(&self, start: StudentModel, trace: &mut Vec<f64>, project_every: Option<usize>) -> StudentModel {
        let mut model = start;
        let mut prev = f64::NEG_INFINITY;
        for it in 0..self.config.max_iterations {
            let jm = self.joint(model);
            let step = em_step(&jm, self.data, self.config.smoothing);
            trace.push(step.log_likelihood);
            let model_now = jm_into_model(jm);
            if it > 0 && self.converged(prev, step.log_likelihood) {
                return model_now;
            }
            prev = step.log_likelihood;
            model = match project_every {
                Some(k) if (it + 1) % k == 0 => project_model(&step.model, &step.counts, self.orders),
                _ => step.model,
            };
        }
        let ll = expected_counts(&self.joint(model.clone()), self.data, false).log_likelihood;
        trace.push(ll);
        model
    }

    /// Gradient ascent through the given penalty weights (`0` is plain
    /// likelihood), `iterations` steps at most per weight.
    fn ascend(&self, start: StudentModel, trace: &mut Vec<f64>, weights: &[f64], iterations: usize) -> StudentModel {
        let mut logits = Logits::from_model(&start);
        let mut step = 1.0 / self.data.len() as f64;
        for &weight in weights {
            let objective = gradient::Objective {
                template: &start,
                index: self.index.clone(),
                data: self.data,
                orders: self.orders,
                weight,
            };
            for it in 0..iterations {
                let out = gradient::ascent_step(&objective, &logits, step);
                if trace.is_empty() {
                    trace.push(objective.evaluate(&logits).log_likelihood);
                }
                trace.push(out.log_likelihood);
                logits = out.logits;
                step = out.next_step.min(1e3);
                if out.converged || (it > 0 && self.converged(out.value_before, out.value)) {
                    break;
                }
            }
        }
        logits.to_model(&start)
    }

    /// Projects once more if a result is not certified monotone.
    fn ensure_feasible(&self, model: StudentModel, trace: &mut Vec<f64>) -> StudentModel {
        if certify(&model, MONOTONE_TOLERANCE).is_empty() {
            return model;
        }
        let counts = expected_counts(&self.joint(model.clone()), self.data, true);
        let projected = project_model(&model, &counts, self.orders);
        trace.push(expected_counts(&self.joint(projected.clone()), self.data, false).log_likelihood);
        projected
    }
}

fn jm_into_model(jm: JointModel) -> StudentModel {
    jm.model().clone()
}
