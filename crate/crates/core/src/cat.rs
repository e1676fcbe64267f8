//! Test sessions: evidence, question selection and per-step summaries.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{DataError, SessionError};
use crate::grade::{argmax_lowest, Grade, GradeScale};
use crate::inference::{entropy, question_predictive, Evidence, JointModel, SkillPosterior};
use crate::score::{score_distribution_with_posterior, CredibleSet, ScoreVariant, DEFAULT_CREDIBLE_MASS};

/// Selection improvement needed to replace the current best candidate.
const TIE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Fixed,
    Adaptive,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Fixed => "fixed",
            Mode::Adaptive => "adaptive",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fixed" => Ok(Mode::Fixed),
            "adaptive" => Ok(Mode::Adaptive),
            _ => Err(format!("unknown mode {:?} (expected fixed or adaptive)", s)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub mode: Mode,
    /// Question order for fixed mode; id order when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_order: Option<Vec<usize>>,
    #[serde(default = "default_mass")]
    pub credible_mass: f64,
    pub grade_scale: GradeScale,
    /// Stop once the entropy (nats) of the variant-B grade distribution
    /// falls below this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_entropy: Option<f64>,
}

fn default_mass() -> f64 {
    DEFAULT_CREDIBLE_MASS
}

impl SessionConfig {
    /// Full-length session with the default grade scale for the model.
    pub fn new(jm: &JointModel, mode: Mode) -> Self {
        SessionConfig {
            mode,
            fixed_order: None,
            credible_mass: DEFAULT_CREDIBLE_MASS,
            grade_scale: GradeScale::default_for(jm.model().max_score()),
            stop_entropy: None,
        }
    }

    fn validate(&self, jm: &JointModel) -> Result<(), SessionError> {
        let n = jm.model().num_questions();
        if let Some(order) = &self.fixed_order {
            let mut seen = vec![false; n];
            for &q in order {
                if q >= n || std::mem::replace(&mut seen[q], true) {
                    return Err(SessionError::Config(format!(
                        "fixed order is not a permutation of 0..{}",
                        n
                    )));
                }
            }
            if order.len() != n {
                return Err(SessionError::Config(format!(
                    "fixed order has {} entries, model has {} questions",
                    order.len(),
                    n
                )));
            }
        }
        if !(self.credible_mass > 0.0 && self.credible_mass <= 1.0) {
            return Err(SessionError::Config("credible mass must be in (0, 1]".into()));
        }
        self.grade_scale
            .validate(jm.model().max_score())
            .map_err(|e| SessionError::Config(e.to_string()))
    }
}

/// Summary of one score-distribution variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub distribution: Vec<f64>,
    pub expected: f64,
    pub most_probable: u32,
    pub credible: CredibleSet,
    pub grade_masses: Vec<f64>,
    pub grade: Grade,
}

/// One session log entry. Step 0 is the state before any answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Question answered in this step.
    pub question: Option<usize>,
    pub state: Option<usize>,
    pub points: Option<u32>,
    /// Variant A: answered questions count as observed.
    pub remaining: ScoreSummary,
    /// Variant B: every question predicted from the skills.
    pub all: ScoreSummary,
    pub skill_marginals: Vec<Vec<f64>>,
    /// Most probable state per question (observed state when answered).
    pub predicted_states: Vec<usize>,
    /// Question selected next, `None` when the session is finished.
    pub next_question: Option<usize>,
}

impl StepRecord {
    pub fn summary(&self, variant: ScoreVariant) -> &ScoreSummary {
        match variant {
            ScoreVariant::Remaining => &self.remaining,
            ScoreVariant::All => &self.all,
        }
    }
}

/// A single test session over a shared model.
#[derive(Debug, Clone)]
pub struct Session {
    jm: Arc<JointModel>,
    config: SessionConfig,
    evidence: Evidence,
    posterior: SkillPosterior,
    log: Vec<StepRecord>,
}

impl Session {
    pub fn new(jm: Arc<JointModel>, config: SessionConfig) -> Result<Self, SessionError> {
        config.validate(&jm)?;
        let posterior = SkillPosterior::prior(&jm);
        let mut session = Session {
            jm,
            config,
            evidence: Evidence::new(),
            posterior,
            log: Vec::new(),
        };
        let record = session.record(None);
        session.log.push(record);
        Ok(session)
    }

    pub fn joint_model(&self) -> &Arc<JointModel> {
        &self.jm
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn evidence(&self) -> &Evidence {
        &self.evidence
    }

    pub fn posterior(&self) -> &SkillPosterior {
        &self.posterior
    }

    pub fn log(&self) -> &[StepRecord] {
        &self.log
    }

    pub fn last(&self) -> &StepRecord {
        self.log.last().expect("log starts with step 0")
    }

    /// Next question to ask, `None` once finished.
    pub fn next_question(&self) -> Option<usize> {
        self.last().next_question
    }

    pub fn is_finished(&self) -> bool {
        self.next_question().is_none()
    }

    /// Records an answer. Any unanswered question may be answered; on error
    /// the session is unchanged.
    pub fn submit_answer(&mut self, question: usize, state: usize) -> Result<&StepRecord, SessionError> {
        if self.is_finished() {
            return Err(SessionError::Finished);
        }
        let model = self.jm.model();
        let q = model
            .questions()
            .get(question)
            .ok_or(SessionError::UnknownQuestion(question))?;
        if self.evidence.contains(question) {
            return Err(SessionError::AlreadyAnswered(question));
        }
        if state >= q.num_states() {
            return Err(SessionError::InvalidState { question, state });
        }
        let posterior = self.posterior.update(&self.jm, question, state)?;
        self.evidence.observe(model, question, state)?;
        self.posterior = posterior;
        let record = self.record(Some((question, state)));
        self.log.push(record);
        Ok(self.last())
    }

    fn record(&self, answer: Option<(usize, usize)>) -> StepRecord {
        let jm = &*self.jm;
        let model = jm.model();
        let summary = |variant| {
            let d = score_distribution_with_posterior(
                jm,
                &self.posterior,
                &self.evidence,
                variant,
                self.config.credible_mass,
            );
            let grade_masses = self.config.grade_scale.bin_masses(&d.probs);
            let grade = self.config.grade_scale.grade(argmax_lowest(&grade_masses));
            ScoreSummary {
                distribution: d.probs,
                expected: d.expected,
                most_probable: d.most_probable,
                credible: d.credible,
                grade_masses,
                grade,
            }
        };
        let remaining = summary(ScoreVariant::Remaining);
        let all = summary(ScoreVariant::All);
        let predicted_states = (0..model.num_questions())
            .map(|q| match self.evidence.get(q) {
                Some(s) => s,
                None => argmax_lowest(&question_predictive(jm, &self.posterior, q)),
            })
            .collect();
        let stop = self.config.stop_entropy.is_some_and(|h| entropy(&all.grade_masses) < h);
        let next_question = if stop { None } else { self.select() };
        StepRecord {
            step: self.evidence.len(),
            question: answer.map(|a| a.0),
            state: answer.map(|a| a.1),
            points: answer.map(|(q, s)| model.questions()[q].points[s]),
            remaining,
            all,
            skill_marginals: self.posterior.marginals.clone(),
            predicted_states,
            next_question,
        }
    }

    fn select(&self) -> Option<usize> {
        let n = self.jm.model().num_questions();
        match self.config.mode {
            Mode::Fixed => match &self.config.fixed_order {
                Some(order) => order.iter().copied().find(|&q| !self.evidence.contains(q)),
                None => (0..n).find(|&q| !self.evidence.contains(q)),
            },
            Mode::Adaptive => {
                let mut best: Option<(usize, f64)> = None;
                for q in (0..n).filter(|&q| !self.evidence.contains(q)) {
                    let h = expected_entropy(&self.jm, &self.posterior, q);
                    if best.is_none_or(|(_, b)| h < b - TIE_SLACK) {
                        best = Some((q, h));
                    }
                }
                best.map(|(q, _)| q)
            }
        }
    }
}

/// Expected joint-skill entropy after observing `question`:
/// `sum_t P(X = t | e) * H(S | e, X = t)`.
pub fn expected_entropy(jm: &JointModel, posterior: &SkillPosterior, question: usize) -> f64 {
    let cpt = jm.model().cpt(question);
    let rows = jm.index().parent_rows(question);
    let mut total = 0.0;
    for t in 0..cpt.num_states() {
        // With w_c = P(c | e) P(t | c) and p = sum w_c, the term is
        // p ln p - sum w_c ln w_c.
        let mut p = 0.0;
        let mut wlnw = 0.0;
        for (&pc, &r) in posterior.joint.iter().zip(rows) {
            let w = pc * cpt.row(r as usize)[t];
            if w > 0.0 {
                p += w;
                wlnw += w * w.ln();
            }
        }
        if p > 0.0 {
            total += p * p.ln() - wlnw;
        }
    }
    total
}

/// Runs a full session answering every selected question from `answers`.
pub fn run_scripted(
    jm: Arc<JointModel>,
    answers: &[usize],
    config: SessionConfig,
) -> Result<Vec<StepRecord>, SessionError> {
    let n = jm.model().num_questions();
    if answers.len() != n {
        return Err(SessionError::AnswerLength {
            expected: n,
            found: answers.len(),
        });
    }
    let mut session = Session::new(jm, config)?;
    while let Some(q) = session.next_question() {
        session.submit_answer(q, answers[q])?;
    }
    Ok(session.log)
}

/// Writes a session log as JSON lines.
pub fn write_log<W: Write>(mut writer: W, log: &[StepRecord]) -> std::io::Result<()> {
    for record in log {
        serde_json::to_writer(&mut writer, record)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a JSON-lines session log.
pub fn read_log<R: BufRead>(reader: R) -> Result<Vec<StepRecord>, DataError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| DataError::Row {
            row: i + 1,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| DataError::Row {
            row: i + 1,
            reason: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::skill_posterior;
    use crate::learning::random_parameters;
    use crate::model::{build_model, EdgeSpec, Effect, ModelSpec, QuestionSpec, SkillSpec};
    use crate::networks::small_network;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(questions: Vec<Vec<Vec<f64>>>) -> Arc<JointModel> {
        let names: Vec<String> = (0..questions.len()).map(|i| format!("Q{}", i)).collect();
        let m = build_model(&ModelSpec {
            skills: vec![SkillSpec {
                name: "S".into(),
                states: 2,
                prior: None,
            }],
            questions: questions
                .into_iter()
                .zip(&names)
                .map(|(cpt, name)| QuestionSpec {
                    name: name.clone(),
                    points: vec![0, 1],
                    cpt: Some(cpt),
                })
                .collect(),
            edges: names
                .iter()
                .map(|n| EdgeSpec {
                    from: "S".into(),
                    to: n.clone(),
                    effect: Effect::Isotone,
                })
                .collect(),
        })
        .unwrap();
        Arc::new(JointModel::new(m).unwrap())
    }

    fn random_joint(seed: u64, skills: usize, questions: usize) -> Arc<JointModel> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_parameters(&small_network(skills, questions), &mut rng);
        Arc::new(JointModel::new(m).unwrap())
    }

    #[test]
    fn identical_questions_tie_to_lower_id() {
        let row = vec![vec![0.8, 0.2], vec![0.3, 0.7]];
        let jm = model(vec![row.clone(), row]);
        let s = Session::new(jm.clone(), SessionConfig::new(&jm, Mode::Adaptive)).unwrap();
        assert_eq!(s.next_question(), Some(0));
    }

    #[test]
    fn informative_question_preferred() {
        let jm = model(vec![
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            vec![vec![0.9, 0.1], vec![0.1, 0.9]],
        ]);
        let s = Session::new(jm.clone(), SessionConfig::new(&jm, Mode::Adaptive)).unwrap();
        assert_eq!(s.next_question(), Some(1));
    }

    #[test]
    fn selection_matches_brute_force() {
        for seed in 0..20 {
            let jm = random_joint(seed, 2, 3);
            let mut s = Session::new(jm.clone(), SessionConfig::new(&jm, Mode::Adaptive)).unwrap();
            while let Some(chosen) = s.next_question() {
                let mut best = (usize::MAX, f64::INFINITY);
                for q in (0..3).filter(|&q| !s.evidence().contains(q)) {
                    let pred = question_predictive(&jm, s.posterior(), q);
                    let h: f64 = (0..2)
                        .map(|t| {
                            let mut e = s.evidence().clone();
                            e.observe(jm.model(), q, t).unwrap();
                            pred[t] * skill_posterior(&jm, &e).unwrap().entropy()
                        })
                        .sum();
                    if h < best.1 - 1e-12 {
                        best = (q, h);
                    }
                }
                assert_eq!(chosen, best.0, "seed {}", seed);
                assert!((expected_entropy(&jm, s.posterior(), chosen) - best.1).abs() < 1e-12);
                s.submit_answer(chosen, (seed as usize + chosen) % 2).unwrap();
            }
        }
    }

    #[test]
    fn fixed_mode_follows_id_order() {
        let jm = random_joint(1, 2, 5);
        let log = run_scripted(jm.clone(), &[1, 0, 1, 1, 0], SessionConfig::new(&jm, Mode::Fixed)).unwrap();
        let asked: Vec<usize> = log.iter().filter_map(|r| r.question).collect();
        assert_eq!(asked, vec![0, 1, 2, 3, 4]);
        assert_eq!(log.len(), 6);
    }

    #[test]
    fn custom_fixed_order() {
        let jm = random_joint(1, 2, 3);
        let mut config = SessionConfig::new(&jm, Mode::Fixed);
        config.fixed_order = Some(vec![2, 0, 1]);
        let log = run_scripted(jm.clone(), &[1, 0, 1], config.clone()).unwrap();
        let asked: Vec<usize> = log.iter().filter_map(|r| r.question).collect();
        assert_eq!(asked, vec![2, 0, 1]);
        config.fixed_order = Some(vec![2, 2, 1]);
        assert!(Session::new(jm, config).is_err());
    }

    #[test]
    fn full_evidence_collapses_remaining_variant() {
        let jm = Arc::new(
            JointModel::new(random_parameters(
                &crate::networks::exam_network(),
                &mut ChaCha8Rng::seed_from_u64(2),
            ))
            .unwrap(),
        );
        let answers: Vec<usize> = (0..37).map(|q| q % 2).collect();
        let obtained: u32 = answers
            .iter()
            .enumerate()
            .map(|(q, &s)| jm.model().questions()[q].points[s])
            .sum();
        for mode in [Mode::Fixed, Mode::Adaptive] {
            let log = run_scripted(jm.clone(), &answers, SessionConfig::new(&jm, mode)).unwrap();
            assert_eq!(log.len(), 38);
            let last = log.last().unwrap();
            assert_eq!(last.remaining.credible.states, vec![obtained]);
            assert!((last.remaining.distribution[obtained as usize] - 1.0).abs() < 1e-12);
            assert_eq!(last.predicted_states, answers);
            assert!(last.next_question.is_none());
        }
    }

    #[test]
    fn sequential_matches_batch_posterior() {
        let jm = random_joint(4, 2, 4);
        let mut s = Session::new(jm.clone(), SessionConfig::new(&jm, Mode::Fixed)).unwrap();
        s.submit_answer(2, 1).unwrap();
        s.submit_answer(0, 0).unwrap();
        let batch = skill_posterior(&jm, s.evidence()).unwrap();
        for (a, b) in s.posterior().joint.iter().zip(&batch.joint) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejected_answers_leave_state_unchanged() {
        let jm = random_joint(5, 2, 3);
        let mut s = Session::new(jm.clone(), SessionConfig::new(&jm, Mode::Adaptive)).unwrap();
        s.submit_answer(1, 1).unwrap();
        let before = s.log().to_vec();
        assert_eq!(s.submit_answer(1, 0).unwrap_err(), SessionError::AlreadyAnswered(1));
        assert_eq!(
            s.submit_answer(0, 2).unwrap_err(),
            SessionError::InvalidState { question: 0, state: 2 }
        );
        assert_eq!(s.submit_answer(7, 0).unwrap_err(), SessionError::UnknownQuestion(7));
        assert_eq!(s.log(), &before[..]);
        s.submit_answer(0, 0).unwrap();
        s.submit_answer(2, 0).unwrap();
        assert_eq!(s.submit_answer(2, 0).unwrap_err(), SessionError::Finished);
    }

    #[test]
    fn answer_length_checked() {
        let jm = random_joint(5, 2, 3);
        let err = run_scripted(jm.clone(), &[0, 1], SessionConfig::new(&jm, Mode::Fixed)).unwrap_err();
        assert_eq!(err, SessionError::AnswerLength { expected: 3, found: 2 });
    }

    #[test]
    fn early_stop_on_grade_entropy() {
        let jm = random_joint(6, 2, 6);
        let mut config = SessionConfig::new(&jm, Mode::Adaptive);
        config.stop_entropy = Some(10.0);
        let log = run_scripted(jm, &[0; 6], config).unwrap();
        assert_eq!(log.len(), 1);
        assert!(log[0].next_question.is_none());
    }

    #[test]
    fn log_round_trips_through_json_lines() {
        let jm = random_joint(7, 2, 4);
        let log = run_scripted(jm.clone(), &[1, 1, 0, 1], SessionConfig::new(&jm, Mode::Adaptive)).unwrap();
        let mut buf = Vec::new();
        write_log(&mut buf, &log).unwrap();
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 5);
        assert_eq!(read_log(&buf[..]).unwrap(), log);
    }

    #[test]
    fn logs_are_deterministic() {
        let jm = random_joint(8, 2, 5);
        let a = run_scripted(jm.clone(), &[1, 0, 0, 1, 1], SessionConfig::new(&jm, Mode::Adaptive)).unwrap();
        let b = run_scripted(jm.clone(), &[1, 0, 0, 1, 1], SessionConfig::new(&jm, Mode::Adaptive)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("adaptive".parse::<Mode>().unwrap(), Mode::Adaptive);
        assert!("random".parse::<Mode>().is_err());
    }
}
