//! Log-likelihood gradient ascent in softmax coordinates.
//!
//! Every prior and CPT row is `softmax(logits)`. By Fisher's identity the
//! gradient of the training log-likelihood with respect to the logits of a
//! row is `expected counts - row total * probabilities`, computed from the
//! same E-step as EM.

use std::sync::Arc;

use crate::data::Dataset;
use crate::inference::{student_log_likelihood, JointIndex, JointModel};
use crate::learning::em::{cpt_from_normalized, expected_counts};
use crate::model::StudentModel;
use crate::order::{cumulative_levels, ParentConfigOrder};

/// Unconstrained parameters: logits shaped like the model's priors and CPTs.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    pub priors: Vec<Vec<f64>>,
    /// Per question, flat `rows x states`.
    pub cpts: Vec<Vec<f64>>,
}

impl Logits {
    pub fn from_model(model: &StudentModel) -> Self {
        let log = |p: &f64| p.max(1e-300).ln();
        Logits {
            priors: model.priors().iter().map(|p| p.iter().map(log).collect()).collect(),
            cpts: model
                .cpts()
                .iter()
                .map(|c| c.rows().flat_map(|r| r.iter().map(log)).collect())
                .collect(),
        }
    }

    pub fn to_model(&self, template: &StudentModel) -> StudentModel {
        let priors = self.priors.iter().map(|l| softmax(l)).collect();
        let cpts = template
            .cpts()
            .iter()
            .zip(&self.cpts)
            .map(|(shape, flat)| {
                let rows = flat.chunks(shape.num_states()).map(softmax).collect();
                cpt_from_normalized(shape, rows)
            })
            .collect();
        template.with_parameters(priors, cpts)
    }

    pub fn zeros_like(&self) -> Self {
        Logits {
            priors: self.priors.iter().map(|v| vec![0.0; v.len()]).collect(),
            cpts: self.cpts.iter().map(|v| vec![0.0; v.len()]).collect(),
        }
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.priors.iter().chain(&self.cpts).flatten()
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.priors.iter_mut().chain(self.cpts.iter_mut()).flatten()
    }

    /// `self + step * direction`.
    pub fn stepped(&self, direction: &Logits, step: f64) -> Logits {
        let mut out = self.clone();
        for (x, d) in out.values_mut().zip(direction.values()) {
            *x += step * d;
        }
        out
    }

    pub fn flat(&self) -> Vec<f64> {
        self.values().copied().collect()
    }

    pub fn set_flat(&mut self, i: usize, v: f64) {
        *self.values_mut().nth(i).expect("index in range") = v;
    }

    pub fn max_abs(&self) -> f64 {
        self.values().fold(0.0, |m, x| m.max(x.abs()))
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

/// Training log-likelihood and its gradient with respect to the logits.
pub fn log_likelihood_gradient(jm: &JointModel, data: &Dataset) -> (f64, Logits) {
    let model = jm.model();
    let counts = expected_counts(jm, data, false);
    let priors = counts
        .priors
        .iter()
        .zip(model.priors())
        .map(|(c, p)| {
            let total: f64 = c.iter().sum();
            c.iter().zip(p).map(|(ci, pi)| ci - total * pi).collect()
        })
        .collect();
    let cpts = counts
        .cpts
        .iter()
        .zip(model.cpts())
        .map(|(flat, cpt)| {
            let ns = cpt.num_states();
            let mut g = vec![0.0; flat.len()];
            for (r, row) in cpt.rows().enumerate() {
                let c = &flat[r * ns..(r + 1) * ns];
                let total: f64 = c.iter().sum();
                for t in 0..ns {
                    g[r * ns + t] = c[t] - total * row[t];
                }
            }
            g
        })
        .collect();
    (counts.log_likelihood, Logits { priors, cpts })
}

/// Squared-hinge penalty on cumulative-order violations over all covering
/// pairs and levels, and its gradient with respect to the CPT logits.
pub fn monotonicity_penalty(model: &StudentModel, orders: &[ParentConfigOrder]) -> (f64, Vec<Vec<f64>>) {
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(model.num_questions());
    for (q, order) in orders.iter().enumerate() {
        let cpt = model.cpt(q);
        let ns = cpt.num_states();
        let cumulative: Vec<Vec<f64>> = cpt.rows().map(cumulative_levels).collect();
        // d penalty / d probability
        let mut dprob = vec![0.0; cpt.num_rows() * ns];
        for &(lower, upper) in order.covering() {
            for k in 0..ns - 1 {
                let v = cumulative[upper][k] - cumulative[lower][k];
                if v > 0.0 {
                    value += v * v;
                    for t in 0..=k {
                        dprob[upper * ns + t] += 2.0 * v;
                        dprob[lower * ns + t] -= 2.0 * v;
                    }
                }
            }
        }
        // Chain rule through the row softmax.
        let mut g = vec![0.0; dprob.len()];
        for (r, row) in cpt.rows().enumerate() {
            let d = &dprob[r * ns..(r + 1) * ns];
            let inner: f64 = row.iter().zip(d).map(|(p, x)| p * x).sum();
            for t in 0..ns {
                g[r * ns + t] = row[t] * (d[t] - inner);
            }
        }
        grads.push(g);
    }
    (value, grads)
}

/// Objective `LL - weight * penalty` used by gradient ascent; `weight = 0`
/// (or no orders) is plain likelihood.
pub(crate) struct Objective<'a> {
    pub template: &'a StudentModel,
    pub index: Arc<JointIndex>,
    pub data: &'a Dataset,
    pub orders: &'a [ParentConfigOrder],
    pub weight: f64,
}

/// Value of the objective with its likelihood part.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Evaluation {
    pub value: f64,
    pub log_likelihood: f64,
}

impl Objective<'_> {
    pub fn evaluate(&self, logits: &Logits) -> Evaluation {
        let model = logits.to_model(self.template);
        let jm = JointModel::with_index(model, self.index.clone());
        let ll: f64 = self.data.rows().iter().map(|r| student_log_likelihood(&jm, r)).sum();
        let pen = if self.weight > 0.0 {
            monotonicity_penalty(jm.model(), self.orders).0
        } else {
            0.0
        };
        Evaluation {
            value: ll - self.weight * pen,
            log_likelihood: ll,
        }
    }

    pub fn gradient(&self, logits: &Logits) -> (Evaluation, Logits) {
        let model = logits.to_model(self.template);
        let jm = JointModel::with_index(model, self.index.clone());
        let (ll, mut grad) = log_likelihood_gradient(&jm, self.data);
        let mut value = ll;
        if self.weight > 0.0 {
            let (pen, pgrad) = monotonicity_penalty(jm.model(), self.orders);
            value -= self.weight * pen;
            for (g, p) in grad.cpts.iter_mut().zip(pgrad) {
                for (gi, pi) in g.iter_mut().zip(p) {
                    *gi -= self.weight * pi;
                }
            }
        }
        (
            Evaluation {
                value,
                log_likelihood: ll,
            },
            grad,
        )
    }
}

/// Outcome of one ascent step.
#[derive(Debug, Clone)]
pub struct GradientStep {
    pub logits: Logits,
    /// Objective value before the step.
    pub value_before: f64,
    /// Objective value after the step.
    pub value: f64,
    /// Training log-likelihood after the step.
    pub log_likelihood: f64,
    /// Step size to try next.
    pub next_step: f64,
    /// No ascent found within the halving budget.
    pub converged: bool,
}

/// Maximum number of step halvings in the backtracking line search.
pub const MAX_HALVINGS: usize = 30;

pub(crate) fn ascent_step(objective: &Objective<'_>, logits: &Logits, step: f64) -> GradientStep {
    let (before, grad) = objective.gradient(logits);
    let mut step = step;
    for _ in 0..=MAX_HALVINGS {
        let candidate = logits.stepped(&grad, step);
        let eval = objective.evaluate(&candidate);
        if eval.value.is_finite() && eval.value >= before.value {
            return GradientStep {
                logits: candidate,
                value_before: before.value,
                value: eval.value,
                log_likelihood: eval.log_likelihood,
                next_step: step * 2.0,
                converged: false,
            };
        }
        step *= 0.5;
    }
    GradientStep {
        logits: logits.clone(),
        value_before: before.value,
        value: before.value,
        log_likelihood: before.log_likelihood,
        next_step: step,
        converged: true,
    }
}

/// One plain-likelihood ascent step with backtracking line search; the
/// training log-likelihood never decreases.
pub fn gradient_step(template: &StudentModel, logits: &Logits, data: &Dataset, step: f64) -> GradientStep {
    let index =
        Arc::new(JointIndex::new(template, crate::inference::DEFAULT_JOINT_CAP).expect("joint space within cap"));
    let objective = Objective {
        template,
        index,
        data,
        orders: &[],
        weight: 0.0,
    };
    ascent_step(&objective, logits, step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::random_parameters;
    use crate::networks::small_network;
    use crate::order::question_order;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn symmetric_stationary_point() {
        // Uniform model and a dataset symmetric in every answer.
        let m = small_network(1, 2);
        let jm = JointModel::new(m).unwrap();
        let data = Dataset::complete(2, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]).unwrap();
        let (_, g) = log_likelihood_gradient(&jm, &data);
        let norm: f64 = g.flat().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm <= 1e-8, "{}", norm);
    }

    #[test]
    fn single_parameter_direction() {
        // One skill fixed at state 0, one question answered 1 three times out
        // of four: the MLE is 0.75 so the logit of state 1 must increase from
        // a uniform start, and the likelihood must improve.
        let m = small_network(1, 1);
        let mut priors = m.priors().to_vec();
        priors[0] = vec![1.0, 0.0];
        let m = m.with_parameters(priors, m.cpts().to_vec());
        let data = Dataset::complete(1, vec![vec![1], vec![1], vec![1], vec![0]]).unwrap();
        let logits = Logits::from_model(&m);
        let jm = JointModel::new(m.clone()).unwrap();
        let (_, g) = log_likelihood_gradient(&jm, &data);
        assert!(g.cpts[0][1] > 0.0 && g.cpts[0][0] < 0.0);
        assert_eq!(g.cpts[0][2], 0.0);
        let step = gradient_step(&m, &logits, &data, 0.25);
        assert!(!step.converged);
        assert!(step.log_likelihood > step.value_before);
        let p = step.logits.to_model(&m).cpt(0).row(0)[1];
        assert!(p > 0.5 && p < 0.75 + 1e-9);
    }

    #[test]
    fn penalty_zero_on_monotone_and_positive_otherwise() {
        let m = small_network(1, 1);
        let orders = vec![question_order(&m, 0)];
        let mono = Logits {
            priors: vec![vec![0.0, 0.0]],
            cpts: vec![vec![1.0, 0.0, 0.0, 1.0]],
        };
        assert_eq!(monotonicity_penalty(&mono.to_model(&m), &orders).0, 0.0);
        let bad = Logits {
            priors: vec![vec![0.0, 0.0]],
            cpts: vec![vec![0.0, 1.0, 1.0, 0.0]],
        };
        assert!(monotonicity_penalty(&bad.to_model(&m), &orders).0 > 0.0);
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        let m = small_network(2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_parameters(&m, &mut rng);
        let orders: Vec<_> = (0..m.num_questions()).map(|q| question_order(&m, q)).collect();
        let logits = Logits::from_model(&m);
        let (_, grads) = monotonicity_penalty(&m, &orders);
        let h = 1e-6;
        for q in 0..m.num_questions() {
            for i in 0..logits.cpts[q].len() {
                let mut plus = logits.clone();
                plus.cpts[q][i] += h;
                let mut minus = logits.clone();
                minus.cpts[q][i] -= h;
                let fd = (monotonicity_penalty(&plus.to_model(&m), &orders).0
                    - monotonicity_penalty(&minus.to_model(&m), &orders).0)
                    / (2.0 * h);
                assert!(
                    (fd - grads[q][i]).abs() < 1e-6,
                    "q{} i{}: {} vs {}",
                    q,
                    i,
                    fd,
                    grads[q][i]
                );
            }
        }
    }
}
