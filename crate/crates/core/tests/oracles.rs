//! Brute-force checks of inference and learning against the full joint
//! distribution over skills and answers.

#![allow(clippy::needless_range_loop)]

use std::sync::Arc;

use moncat_core::cat::{run_scripted, Mode, SessionConfig};
use moncat_core::data::Dataset;
use moncat_core::evaluation::{generate_synthetic, sample_dataset};
use moncat_core::inference::{
    log_likelihood, question_predictive, skill_posterior, student_log_likelihood, Evidence, JointModel,
};
use moncat_core::learning::{expected_counts, learn, random_parameters, LearnConfig, Method};
use moncat_core::model::{build_model, EdgeSpec, Effect, ModelSpec, QuestionSpec, SkillSpec, StudentModel};
use moncat_core::networks::exam_network;
use moncat_core::score::{score_distribution, ScoreVariant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two skills (2 and 3 states) and five questions with mixed state counts,
/// one and two parents and an antitone edge.
fn mixed_structure() -> StudentModel {
    let skill = |name: &str, states| SkillSpec {
        name: name.into(),
        states,
        prior: None,
    };
    let question = |name: &str, points: Vec<u32>| QuestionSpec {
        name: name.into(),
        points,
        cpt: None,
    };
    let edge = |from: &str, to: &str, effect| EdgeSpec {
        from: from.into(),
        to: to.into(),
        effect,
    };
    build_model(&ModelSpec {
        skills: vec![skill("A", 2), skill("B", 3)],
        questions: vec![
            question("q0", vec![0, 1]),
            question("q1", vec![0, 1, 2]),
            question("q2", vec![0, 2]),
            question("q3", vec![0, 1, 3]),
            question("q4", vec![0, 1]),
        ],
        edges: vec![
            edge("A", "q0", Effect::Isotone),
            edge("B", "q1", Effect::Isotone),
            edge("A", "q2", Effect::Isotone),
            edge("B", "q2", Effect::Isotone),
            edge("A", "q3", Effect::Isotone),
            edge("B", "q3", Effect::Antitone),
            edge("B", "q4", Effect::Isotone),
        ],
    })
    .unwrap()
}

/// Every skill configuration with its prior probability.
fn configs(model: &StudentModel) -> Vec<(Vec<usize>, f64)> {
    let mut out = vec![(Vec::new(), 1.0)];
    for j in 0..model.num_skills() {
        out = out
            .into_iter()
            .flat_map(|(c, p)| {
                model.prior(j).iter().enumerate().map(move |(k, &pk)| {
                    let mut c = c.clone();
                    c.push(k);
                    (c, p * pk)
                })
            })
            .collect();
    }
    out
}

fn row_of(model: &StudentModel, q: usize, config: &[usize]) -> usize {
    let states: Vec<usize> = model.parents(q).iter().map(|&j| config[j]).collect();
    model.cpt(q).index_of(&states)
}

/// Unnormalized `P(c, e)` for every configuration.
fn joint_with_evidence(model: &StudentModel, answers: &[Option<usize>]) -> Vec<(Vec<usize>, f64)> {
    configs(model)
        .into_iter()
        .map(|(c, mut p)| {
            for (q, a) in answers.iter().enumerate() {
                if let Some(s) = *a {
                    p *= model.cpt(q).row(row_of(model, q, &c))[s];
                }
            }
            (c, p)
        })
        .collect()
}

fn random_answers<R: Rng>(model: &StudentModel, rng: &mut R) -> Vec<Option<usize>> {
    model
        .questions()
        .iter()
        .map(|q| rng.random_bool(0.6).then(|| rng.random_range(0..q.num_states())))
        .collect()
}

fn evidence_of(model: &StudentModel, answers: &[Option<usize>]) -> Evidence {
    let mut e = Evidence::new();
    for (q, a) in answers.iter().enumerate() {
        if let Some(s) = *a {
            e.observe(model, q, s).unwrap();
        }
    }
    e
}

#[test]
fn posterior_predictive_and_likelihood_match_full_joint() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let structure = mixed_structure();
    for _ in 0..50 {
        let model = random_parameters(&structure, &mut rng);
        let jm = JointModel::new(model.clone()).unwrap();
        let answers = random_answers(&model, &mut rng);
        let joint = joint_with_evidence(&model, &answers);
        let total: f64 = joint.iter().map(|(_, p)| p).sum();

        let ll = student_log_likelihood(&jm, &answers);
        assert!((ll - total.ln()).abs() < 1e-12, "{} vs {}", ll, total.ln());

        let post = skill_posterior(&jm, &evidence_of(&model, &answers)).unwrap();
        for j in 0..model.num_skills() {
            for k in 0..model.skills()[j].num_states {
                let want: f64 = joint.iter().filter(|(c, _)| c[j] == k).map(|(_, p)| p).sum::<f64>() / total;
                assert!((post.marginals[j][k] - want).abs() < 1e-12);
            }
        }
        for q in 0..model.num_questions() {
            let got = question_predictive(&jm, &post, q);
            for (s, g) in got.iter().enumerate() {
                let want: f64 = joint
                    .iter()
                    .map(|(c, p)| p * model.cpt(q).row(row_of(&model, q, c))[s])
                    .sum::<f64>()
                    / total;
                assert!((g - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn expected_counts_match_full_joint() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let structure = mixed_structure();
    let model = random_parameters(&structure, &mut rng);
    let rows: Vec<Vec<Option<usize>>> = (0..40)
        .map(|_| loop {
            let a = random_answers(&model, &mut rng);
            if a.iter().any(Option::is_some) {
                break a;
            }
        })
        .collect();
    let data = Dataset::new(model.num_questions(), rows.clone()).unwrap();
    let jm = JointModel::new(model.clone()).unwrap();
    let counts = expected_counts(&jm, &data, true);

    let mut priors: Vec<Vec<f64>> = model.skills().iter().map(|s| vec![0.0; s.num_states]).collect();
    let mut cpts: Vec<Vec<f64>> = model
        .cpts()
        .iter()
        .map(|c| vec![0.0; c.num_rows() * c.num_states()])
        .collect();
    let mut ll = 0.0;
    for answers in &rows {
        let joint = joint_with_evidence(&model, answers);
        let total: f64 = joint.iter().map(|(_, p)| p).sum();
        ll += total.ln();
        for (c, p) in &joint {
            let w = p / total;
            for (j, &k) in c.iter().enumerate() {
                priors[j][k] += w;
            }
            for (q, a) in answers.iter().enumerate() {
                let cpt = model.cpt(q);
                let r = row_of(&model, q, c);
                let ns = cpt.num_states();
                match *a {
                    Some(s) => cpts[q][r * ns + s] += w,
                    None => {
                        for s in 0..ns {
                            cpts[q][r * ns + s] += w * cpt.row(r)[s];
                        }
                    }
                }
            }
        }
    }
    assert!((counts.log_likelihood - ll).abs() < 1e-10);
    for (got, want) in counts.priors.iter().flatten().zip(priors.iter().flatten()) {
        assert!((got - want).abs() < 1e-10);
    }
    for (got, want) in counts.cpts.iter().flatten().zip(cpts.iter().flatten()) {
        assert!((got - want).abs() < 1e-10, "{} vs {}", got, want);
    }
}

#[test]
fn expected_score_is_sum_of_expected_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let structure = mixed_structure();
    for _ in 0..50 {
        let model = random_parameters(&structure, &mut rng);
        let jm = JointModel::new(model.clone()).unwrap();
        let answers = random_answers(&model, &mut rng);
        let evidence = evidence_of(&model, &answers);
        let post = skill_posterior(&jm, &evidence).unwrap();
        let expected_points = |q: usize| -> f64 {
            question_predictive(&jm, &post, q)
                .iter()
                .zip(&model.questions()[q].points)
                .map(|(p, &pts)| p * pts as f64)
                .sum()
        };

        let all = score_distribution(&jm, &evidence, ScoreVariant::All).unwrap();
        let want_all: f64 = (0..model.num_questions()).map(expected_points).sum();
        assert!((all.expected - want_all).abs() < 1e-9);

        let remaining = score_distribution(&jm, &evidence, ScoreVariant::Remaining).unwrap();
        let want_remaining: f64 = answers
            .iter()
            .enumerate()
            .map(|(q, a)| match *a {
                Some(s) => model.questions()[q].points[s] as f64,
                None => expected_points(q),
            })
            .sum();
        assert!((remaining.expected - want_remaining).abs() < 1e-9);
    }
}

#[test]
fn likelihood_ignores_question_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = random_parameters(&mixed_structure(), &mut rng);
    let data = sample_dataset(&model, 200, &mut rng);

    let mut spec = model.to_spec();
    spec.questions.reverse();
    let reversed = build_model(&spec).unwrap();
    let rows: Vec<Vec<Option<usize>>> = data.rows().iter().map(|r| r.iter().rev().copied().collect()).collect();
    let reversed_data = Dataset::new(model.num_questions(), rows).unwrap();

    let a = log_likelihood(&JointModel::new(model).unwrap(), &data).unwrap();
    let b = log_likelihood(&JointModel::new(reversed).unwrap(), &reversed_data).unwrap();
    assert!((a - b).abs() < 1e-9 * a.abs(), "{} vs {}", a, b);
}

/// One binary skill, eight binary questions that separate the two skill
/// levels strongly.
fn separated_truth() -> StudentModel {
    let rows = |lo: f64, hi: f64| Some(vec![vec![1.0 - lo, lo], vec![1.0 - hi, hi]]);
    build_model(&ModelSpec {
        skills: vec![SkillSpec {
            name: "S".into(),
            states: 2,
            prior: Some(vec![0.45, 0.55]),
        }],
        questions: (0..8)
            .map(|i| QuestionSpec {
                name: format!("q{}", i),
                points: vec![0, 1],
                cpt: rows(0.08 + 0.02 * i as f64, 0.92 - 0.03 * i as f64),
            })
            .collect(),
        edges: (0..8)
            .map(|i| EdgeSpec {
                from: "S".into(),
                to: format!("q{}", i),
                effect: Effect::Isotone,
            })
            .collect(),
    })
    .unwrap()
}

/// Largest parameter difference, allowing the two skill levels to be
/// swapped.
fn max_error(learned: &StudentModel, truth: &StudentModel) -> f64 {
    let mut best = f64::INFINITY;
    for flip in [false, true] {
        let map = |r: usize| if flip { 1 - r } else { r };
        let mut err: f64 = 0.0;
        for (k, p) in truth.prior(0).iter().enumerate() {
            err = err.max((learned.prior(0)[map(k)] - p).abs());
        }
        for q in 0..truth.num_questions() {
            for r in 0..2 {
                for (a, b) in learned.cpt(q).row(map(r)).iter().zip(truth.cpt(q).row(r)) {
                    err = err.max((a - b).abs());
                }
            }
        }
        best = best.min(err);
    }
    best
}

#[test]
fn em_and_rgrad_recover_parameters() {
    let truth = separated_truth();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data = sample_dataset(&truth, 1000, &mut rng);
    let structure = truth.uniform();
    for method in [Method::Em, Method::Rgrad] {
        let config = LearnConfig {
            restarts: 3,
            seed: 11,
            ..LearnConfig::for_method(method)
        };
        let result = learn(&data, &structure, &config).unwrap();
        let err = max_error(&result.model, &truth);
        assert!(err <= 0.05, "{}: max abs error {}", method, err);
    }
}

#[test]
fn credible_hull_narrows_on_average() {
    let (data, truth) = generate_synthetic(&exam_network(), 13, 150);
    let jm = Arc::new(JointModel::new(truth).unwrap());
    let n = jm.model().num_questions();
    for mode in [Mode::Fixed, Mode::Adaptive] {
        let config = SessionConfig::new(&jm, mode);
        let mut width_a = vec![0.0; n + 1];
        let mut width_b = vec![0.0; n + 1];
        for i in 0..data.len() {
            let answers = data.complete_row(i).unwrap();
            let log = run_scripted(jm.clone(), &answers, config.clone()).unwrap();
            for (k, r) in log.iter().enumerate() {
                width_a[k] += r.remaining.credible.hull_width() as f64 / data.len() as f64;
                width_b[k] += r.all.credible.hull_width() as f64 / data.len() as f64;
            }
        }
        assert!((width_a[n] - 1.0).abs() < 1e-9);
        assert!(width_a[0] > 10.0);
        for w in [&width_a, &width_b] {
            assert!(w[n] < w[0], "{:?}", w);
            assert!(w[n / 2] < w[0]);
            let increases = w.windows(2).filter(|p| p[1] > p[0] + 0.5).count();
            assert!(increases == 0, "{} {:?}: {:?}", mode, increases, w);
        }
    }
}
