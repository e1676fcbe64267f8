//! Metrics, the learning/testing experiment, synthetic data and the
//! inference timing benchmark.
//!
//! Per-step metrics of one session, for a student with answer vector `x*`
//! and total score `o*`:
//!
//! * accuracy: share of questions whose most probable state equals `x*_i`
//!   (answered questions count as correct);
//! * score error: `|o* - E[O]|` for variants A and B;
//! * grade error: `sum_i |g* - i| P(bin i)` with `g*` the bin of `o*`.
//!
//! Curves are flat means over all sessions of a (method, size, mode) cell.

use std::sync::Arc;
use std::time::Instant;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Gamma;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cat::{run_scripted, Mode, SessionConfig, StepRecord};
use crate::data::Dataset;
use crate::error::{ExperimentError, SessionError};
use crate::grade::{grade_error_from_masses, GradeScale};
use crate::inference::{log_likelihood, Evidence, JointIndex, JointModel, DEFAULT_JOINT_CAP};
use crate::learning::{isotonic_project, learn, restart_seed, LearnConfig, Method};
use crate::model::{Effect, StudentModel};
use crate::order::question_order;
use crate::score::{naive_score_distribution, score_distribution, ScoreVariant};

/// Default e^g threshold for the crossing analysis.
pub const DEFAULT_THRESHOLD: f64 = 0.5;
/// Default naive-enumeration cap of the timing benchmark.
pub const DEFAULT_MAX_NAIVE: usize = 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    ScoreErrorA,
    ScoreErrorB,
    GradeErrorA,
    GradeErrorB,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Accuracy,
        Metric::ScoreErrorA,
        Metric::ScoreErrorB,
        Metric::GradeErrorA,
        Metric::GradeErrorB,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::ScoreErrorA => "score_error_a",
            Metric::ScoreErrorB => "score_error_b",
            Metric::GradeErrorA => "grade_error_a",
            Metric::GradeErrorB => "grade_error_b",
        }
    }
}

/// Total points of an answer vector.
pub fn observed_score(model: &StudentModel, answers: &[usize]) -> u32 {
    answers
        .iter()
        .enumerate()
        .map(|(q, &s)| model.questions()[q].points[s])
        .sum()
}

pub fn answer_accuracy(record: &StepRecord, answers: &[usize]) -> f64 {
    let hits = record
        .predicted_states
        .iter()
        .zip(answers)
        .filter(|(p, a)| p == a)
        .count();
    hits as f64 / answers.len() as f64
}

pub fn score_error(record: &StepRecord, variant: ScoreVariant, observed: u32) -> f64 {
    (observed as f64 - record.summary(variant).expected).abs()
}

pub fn step_grade_error(record: &StepRecord, variant: ScoreVariant, observed_bin: usize) -> f64 {
    grade_error_from_masses(&record.summary(variant).grade_masses, observed_bin)
}

/// All metrics of one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub accuracy: f64,
    pub score_error_a: f64,
    pub score_error_b: f64,
    pub grade_error_a: f64,
    pub grade_error_b: f64,
}

impl StepMetrics {
    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Accuracy => self.accuracy,
            Metric::ScoreErrorA => self.score_error_a,
            Metric::ScoreErrorB => self.score_error_b,
            Metric::GradeErrorA => self.grade_error_a,
            Metric::GradeErrorB => self.grade_error_b,
        }
    }
}

/// Metrics of every step of a session log, from the log and the true
/// answers alone. A log that stopped early is padded with its last step up
/// to `answers.len() + 1` entries.
pub fn session_metrics(
    log: &[StepRecord],
    answers: &[usize],
    model: &StudentModel,
    scale: &GradeScale,
) -> Vec<StepMetrics> {
    let observed = observed_score(model, answers);
    let bin = scale.bin_of(observed).expect("grade scale covers the score range");
    let mut out: Vec<StepMetrics> = log
        .iter()
        .map(|r| StepMetrics {
            accuracy: answer_accuracy(r, answers),
            score_error_a: score_error(r, ScoreVariant::Remaining, observed),
            score_error_b: score_error(r, ScoreVariant::All, observed),
            grade_error_a: step_grade_error(r, ScoreVariant::Remaining, bin),
            grade_error_b: step_grade_error(r, ScoreVariant::All, bin),
        })
        .collect();
    while out.len() < answers.len() + 1 {
        let last = *out.last().expect("non-empty log");
        out.push(last);
    }
    out
}

/// Mean and standard error per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl Curve {
    pub fn from_values(sessions: &[Vec<StepMetrics>], metric: Metric) -> Self {
        let steps = sessions.first().map_or(0, Vec::len);
        let n = sessions.len() as f64;
        let mut mean = vec![0.0; steps];
        let mut stderr = vec![0.0; steps];
        for k in 0..steps {
            let m = sessions.iter().map(|s| s[k].get(metric)).sum::<f64>() / n;
            let var = if sessions.len() > 1 {
                sessions.iter().map(|s| (s[k].get(metric) - m).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            mean[k] = m;
            stderr[k] = (var / n).sqrt();
        }
        Curve { mean, stderr }
    }

    /// First step whose mean is below `threshold`.
    pub fn first_below(&self, threshold: f64) -> Option<usize> {
        self.mean.iter().position(|&m| m < threshold)
    }

    /// CSV with columns `step,mean,stderr`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,mean,stderr\n");
        for (k, (m, e)) in self.mean.iter().zip(&self.stderr).enumerate() {
            s.push_str(&format!("{},{},{}\n", k, m, e));
        }
        s
    }
}

/// Every metric curve of a set of sessions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCurves {
    pub sessions: usize,
    pub accuracy: Curve,
    pub score_error_a: Curve,
    pub score_error_b: Curve,
    pub grade_error_a: Curve,
    pub grade_error_b: Curve,
}

impl MetricCurves {
    pub fn from_sessions(sessions: &[Vec<StepMetrics>]) -> Self {
        MetricCurves {
            sessions: sessions.len(),
            accuracy: Curve::from_values(sessions, Metric::Accuracy),
            score_error_a: Curve::from_values(sessions, Metric::ScoreErrorA),
            score_error_b: Curve::from_values(sessions, Metric::ScoreErrorB),
            grade_error_a: Curve::from_values(sessions, Metric::GradeErrorA),
            grade_error_b: Curve::from_values(sessions, Metric::GradeErrorB),
        }
    }

    pub fn get(&self, metric: Metric) -> &Curve {
        match metric {
            Metric::Accuracy => &self.accuracy,
            Metric::ScoreErrorA => &self.score_error_a,
            Metric::ScoreErrorB => &self.score_error_b,
            Metric::GradeErrorA => &self.grade_error_a,
            Metric::GradeErrorB => &self.grade_error_b,
        }
    }
}

/// Simulates a session per student and returns the per-step metrics, in
/// cohort order.
pub fn simulate_cohort(
    jm: &Arc<JointModel>,
    cohort: &[Vec<usize>],
    config: &SessionConfig,
) -> Result<Vec<Vec<StepMetrics>>, SessionError> {
    cohort
        .par_iter()
        .map(|answers| {
            let log = run_scripted(jm.clone(), answers, config.clone())?;
            Ok(session_metrics(&log, answers, jm.model(), &config.grade_scale))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub sizes: Vec<usize>,
    pub replications: usize,
    pub cohort: usize,
    pub methods: Vec<Method>,
    /// Empty: learning and held-out likelihood only.
    pub modes: Vec<Mode>,
    pub seed: u64,
    pub threshold: f64,
    /// Learning settings; the method field is overridden per method.
    pub learn: LearnConfig,
    /// Defaults to the scale for the structure's maximum score.
    pub grade_scale: Option<GradeScale>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            sizes: vec![10, 40, 160],
            replications: 10,
            cohort: 100,
            methods: Method::ALL.to_vec(),
            modes: vec![Mode::Fixed, Mode::Adaptive],
            seed: 0,
            threshold: DEFAULT_THRESHOLD,
            learn: LearnConfig::default(),
            grade_scale: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Config(m.to_string()));
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return bad("learning-set sizes must be non-empty and positive");
        }
        if self.methods.is_empty() {
            return bad("at least one learning method is required");
        }
        if self.replications == 0 {
            return bad("replications must be positive");
        }
        if self.cohort == 0 {
            return bad("test cohort must be non-empty");
        }
        self.learn.validate()?;
        Ok(())
    }
}

/// Outcome of learning one method on one training draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub size: usize,
    pub replication: usize,
    pub method: Method,
    pub winner: usize,
    pub train_log_likelihood: f64,
    /// Mean log-likelihood per test student.
    pub heldout_log_likelihood: f64,
    pub monotone: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveReport {
    pub method: Method,
    pub size: usize,
    pub mode: Mode,
    pub curves: MetricCurves,
    /// First step with mean variant-A grade error below the threshold.
    pub crossing_a: Option<usize>,
    /// Same for variant B.
    pub crossing_b: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub test_students: Vec<usize>,
    pub runs: Vec<RunReport>,
    pub curves: Vec<CurveReport>,
}

fn draw_seed(seed: u64, size: usize, replication: usize) -> u64 {
    restart_seed(restart_seed(seed, size), replication)
}

/// Runs the protocol: a test cohort of complete rows is set aside, then for
/// every size and replication a training set is drawn from the remaining
/// rows, every method is learned on it (same restart seeds for all methods)
/// and, for every mode, the cohort is simulated with the learned model.
pub fn run_experiment(
    data: &Dataset,
    structure: &StudentModel,
    config: &ExperimentConfig,
) -> Result<ExperimentReport, ExperimentError> {
    config.validate()?;
    if data.num_questions() != structure.num_questions() {
        return Err(ExperimentError::Config(format!(
            "dataset has {} questions, structure has {}",
            data.num_questions(),
            structure.num_questions()
        )));
    }
    let scale = config
        .grade_scale
        .clone()
        .unwrap_or_else(|| GradeScale::default_for(structure.max_score()));
    scale
        .validate(structure.max_score())
        .map_err(|e| ExperimentError::Config(e.to_string()))?;

    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    let mut test_students = Vec::new();
    let mut pool = Vec::new();
    for i in order {
        if test_students.len() < config.cohort && data.complete_row(i).is_some() {
            test_students.push(i);
        } else {
            pool.push(i);
        }
    }
    if test_students.len() < config.cohort {
        return Err(ExperimentError::Sizing(format!(
            "{} complete rows, test cohort needs {}",
            test_students.len(),
            config.cohort
        )));
    }
    let largest = *config.sizes.iter().max().unwrap();
    if pool.len() < largest {
        return Err(ExperimentError::Sizing(format!(
            "{} rows left after the test cohort, largest learning set is {}",
            pool.len(),
            largest
        )));
    }
    let test = data.subset(&test_students);
    let cohort: Vec<Vec<usize>> = test_students.iter().map(|&i| data.complete_row(i).unwrap()).collect();
    let index = Arc::new(JointIndex::new(structure, DEFAULT_JOINT_CAP)?);

    let mut runs = Vec::new();
    let mut sessions: Vec<Vec<Vec<Vec<StepMetrics>>>> =
        vec![vec![Vec::new(); config.modes.len()]; config.methods.len() * config.sizes.len()];
    for (si, &size) in config.sizes.iter().enumerate() {
        for replication in 0..config.replications {
            let seed = draw_seed(config.seed, size, replication);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let drawn: Vec<usize> = sample(&mut rng, pool.len(), size)
                .into_iter()
                .map(|k| pool[k])
                .collect();
            let train = data.subset(&drawn);
            for (mi, &method) in config.methods.iter().enumerate() {
                let learn_config = LearnConfig {
                    method,
                    seed,
                    ..config.learn.clone()
                };
                let result = learn(&train, structure, &learn_config)?;
                let jm = Arc::new(JointModel::with_index(result.model.clone(), index.clone()));
                let heldout = log_likelihood(&jm, &test)? / test.len() as f64;
                runs.push(RunReport {
                    size,
                    replication,
                    method,
                    winner: result.winner,
                    train_log_likelihood: result.log_likelihood(),
                    heldout_log_likelihood: heldout,
                    monotone: result.certificate.is_empty(),
                });
                for (oi, &mode) in config.modes.iter().enumerate() {
                    let session_config = SessionConfig {
                        grade_scale: scale.clone(),
                        ..SessionConfig::new(&jm, mode)
                    };
                    let metrics = simulate_cohort(&jm, &cohort, &session_config)?;
                    sessions[si * config.methods.len() + mi][oi].extend(metrics);
                }
            }
        }
    }

    let mut curves = Vec::new();
    for (si, &size) in config.sizes.iter().enumerate() {
        for (mi, &method) in config.methods.iter().enumerate() {
            for (oi, &mode) in config.modes.iter().enumerate() {
                let c = MetricCurves::from_sessions(&sessions[si * config.methods.len() + mi][oi]);
                curves.push(CurveReport {
                    method,
                    size,
                    mode,
                    crossing_a: c.grade_error_a.first_below(config.threshold),
                    crossing_b: c.grade_error_b.first_below(config.threshold),
                    curves: c,
                });
            }
        }
    }
    Ok(ExperimentReport {
        config: config.clone(),
        test_students,
        runs,
        curves,
    })
}

fn gamma_vector<R: Rng>(k: usize, alpha: f64, rng: &mut R) -> Vec<f64> {
    let g = Gamma::new(alpha, 1.0).expect("positive shape");
    let draws: Vec<f64> = (0..k).map(|_| rng.sample(g) + 1e-300).collect();
    let s: f64 = draws.iter().sum();
    draws.into_iter().map(|x| x / s).collect()
}

/// A random monotone model on `structure`.
///
/// Rows are drawn from Dirichlet(1), sorted by expected state and assigned
/// to parent configurations by ascending effective level (sum of parent
/// states, antitone parents reversed), then projected onto the monotone
/// set. Priors are drawn from Dirichlet(2).
pub fn random_monotone_model<R: Rng>(structure: &StudentModel, rng: &mut R) -> StudentModel {
    let priors = structure
        .skills()
        .iter()
        .map(|s| gamma_vector(s.num_states, 2.0, rng))
        .collect();
    let cpts = (0..structure.num_questions())
        .map(|q| {
            let shape = structure.cpt(q);
            let ns = shape.num_states();
            let mut rows: Vec<Vec<f64>> = (0..shape.num_rows()).map(|_| gamma_vector(ns, 1.0, rng)).collect();
            let mean = |r: &Vec<f64>| r.iter().enumerate().map(|(t, p)| t as f64 * p).sum::<f64>();
            rows.sort_by(|a, b| mean(a).total_cmp(&mean(b)));
            let effects = structure.annotation().effects(q);
            let level = |r: usize| -> usize {
                shape
                    .config_of(r)
                    .iter()
                    .zip(shape.radix())
                    .zip(effects)
                    .map(|((&s, &m), e)| if *e == Effect::Isotone { s } else { m - 1 - s })
                    .sum()
            };
            let mut configs: Vec<usize> = (0..shape.num_rows()).collect();
            configs.sort_by_key(|&r| (level(r), r));
            let mut cpt = shape.clone();
            for (row, &r) in rows.iter().zip(&configs) {
                cpt.row_mut(r).copy_from_slice(row);
            }
            isotonic_project(&cpt, &question_order(structure, q), &vec![1.0; shape.num_rows()])
        })
        .collect();
    structure.with_parameters(priors, cpts)
}

fn categorical<R: Rng>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|&x| x > 0.0).unwrap_or(0)
}

/// Samples `n` complete answer vectors: skills from the priors, answers
/// from the CPT rows.
pub fn sample_dataset<R: Rng>(model: &StudentModel, n: usize, rng: &mut R) -> Dataset {
    let rows = (0..n)
        .map(|_| {
            let skills: Vec<usize> = model.priors().iter().map(|p| categorical(p, rng)).collect();
            (0..model.num_questions())
                .map(|q| {
                    let cpt = model.cpt(q);
                    let config: Vec<usize> = model.parents(q).iter().map(|&j| skills[j]).collect();
                    categorical(cpt.row(cpt.index_of(&config)), rng)
                })
                .collect()
        })
        .collect();
    Dataset::complete(model.num_questions(), rows).expect("sampled rows are complete")
}

/// Synthetic dataset of `n` students and its ground-truth model.
pub fn generate_synthetic(structure: &StudentModel, seed: u64, n: usize) -> (Dataset, StudentModel) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = random_monotone_model(structure, &mut rng);
    let data = sample_dataset(&truth, n, &mut rng);
    (data, truth)
}

/// One row of the timing table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub questions: usize,
    /// Median wall time of the divorcing evaluation.
    pub divorcing_seconds: f64,
    /// Median wall time of naive enumeration; `None` above the cap.
    pub naive_seconds: Option<f64>,
    /// Largest absolute difference between the two distributions.
    pub max_abs_difference: Option<f64>,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Times the variant-B prior score distribution on the first `k` questions
/// of `model` for each `k` in `counts`, by divorcing and by naive
/// enumeration (skipped above `max_naive`). Medians over `repeats` runs.
pub fn timing_benchmark(
    model: &StudentModel,
    counts: &[usize],
    max_naive: usize,
    repeats: usize,
) -> Result<Vec<TimingRow>, ExperimentError> {
    if counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ExperimentError::Config(
            "question counts must be strictly ascending".into(),
        ));
    }
    if let Some(&k) = counts.iter().find(|&&k| k == 0 || k > model.num_questions()) {
        return Err(ExperimentError::Config(format!(
            "question count {} outside 1..={}",
            k,
            model.num_questions()
        )));
    }
    let repeats = repeats.max(1);
    let evidence = Evidence::new();
    let mut rows = Vec::with_capacity(counts.len());
    for &k in counts {
        let sub = model.restrict_questions(k);
        let index = Arc::new(JointIndex::new(&sub, DEFAULT_JOINT_CAP)?);
        let mut times = Vec::with_capacity(repeats);
        let mut divorced = Vec::new();
        for _ in 0..repeats {
            let jm = JointModel::with_index(sub.clone(), index.clone());
            let start = Instant::now();
            let d = score_distribution(&jm, &evidence, ScoreVariant::All)?;
            times.push(start.elapsed().as_secs_f64());
            divorced = d.probs;
        }
        let (naive_seconds, max_abs_difference) = if k <= max_naive {
            let jm = JointModel::with_index(sub.clone(), index.clone());
            let mut times = Vec::with_capacity(repeats);
            let mut naive = Vec::new();
            for _ in 0..repeats {
                let start = Instant::now();
                naive = naive_score_distribution(&jm, &evidence, ScoreVariant::All, max_naive)?;
                times.push(start.elapsed().as_secs_f64());
            }
            let diff = naive
                .iter()
                .zip(&divorced)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            (Some(median(times)), Some(diff))
        } else {
            (None, None)
        };
        rows.push(TimingRow {
            questions: k,
            divorcing_seconds: median(times),
            naive_seconds,
            max_abs_difference,
        });
    }
    Ok(rows)
}
