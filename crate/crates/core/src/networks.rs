//! Built-in network structures.

use crate::model::{build_model, EdgeSpec, Effect, ModelSpec, QuestionSpec, SkillSpec, StudentModel};

/// Number of questions in the exam-scale network.
pub const EXAM_QUESTIONS: usize = 37;
/// Number of skills in the exam-scale network.
pub const EXAM_SKILLS: usize = 7;

/// A representative exam-scale network: 7 binary skills, 37 questions worth
/// 52 points in total (24 one-point, 11 two-point and 2 three-point items),
/// each question with one to three isotone parents. Parameters are uniform.
pub fn exam_network() -> StudentModel {
    build_model(&exam_spec()).expect("built-in network is valid")
}

pub fn exam_spec() -> ModelSpec {
    let skills = (1..=EXAM_SKILLS)
        .map(|j| SkillSpec {
            name: format!("S{}", j),
            states: 2,
            prior: None,
        })
        .collect();
    let mut questions = Vec::with_capacity(EXAM_QUESTIONS);
    let mut edges = Vec::new();
    for i in 0..EXAM_QUESTIONS {
        let max_points = match i {
            15 | 30 => 3,
            3 | 6 | 9 | 12 | 18 | 21 | 24 | 27 | 33 | 35 | 36 => 2,
            _ => 1,
        };
        let name = format!("Q{}", i + 1);
        questions.push(QuestionSpec {
            name: name.clone(),
            points: (0..=max_points).collect(),
            cpt: None,
        });
        let mut parents = vec![i % EXAM_SKILLS];
        if i % 2 == 1 {
            let second = (i * 3 + 1) % EXAM_SKILLS;
            parents.push(if parents.contains(&second) {
                (second + 1) % EXAM_SKILLS
            } else {
                second
            });
        }
        if i % 5 == 4 {
            let third = (i + 3) % EXAM_SKILLS;
            if !parents.contains(&third) {
                parents.push(third);
            }
        }
        for j in parents {
            edges.push(EdgeSpec {
                from: format!("S{}", j + 1),
                to: name.clone(),
                effect: Effect::Isotone,
            });
        }
    }
    ModelSpec {
        skills,
        questions,
        edges,
    }
}

/// A small structure: `skills` binary skills and `questions` binary
/// one-point questions, question `i` attached to skill `i % skills` and, for
/// odd `i`, also to skill `(i + 1) % skills`.
pub fn small_network(skills: usize, questions: usize) -> StudentModel {
    let spec = ModelSpec {
        skills: (0..skills)
            .map(|j| SkillSpec {
                name: format!("S{}", j + 1),
                states: 2,
                prior: None,
            })
            .collect(),
        questions: (0..questions)
            .map(|i| QuestionSpec {
                name: format!("Q{}", i + 1),
                points: vec![0, 1],
                cpt: None,
            })
            .collect(),
        edges: (0..questions)
            .flat_map(|i| {
                let mut ps = vec![i % skills];
                if i % 2 == 1 && skills > 1 {
                    ps.push((i + 1) % skills);
                }
                ps.into_iter().map(move |j| EdgeSpec {
                    from: format!("S{}", j + 1),
                    to: format!("Q{}", i + 1),
                    effect: Effect::Isotone,
                })
            })
            .collect(),
    };
    build_model(&spec).expect("small network is valid")
}
