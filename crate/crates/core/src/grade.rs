//! Grade scales, expected grade and grade classification error.

use serde::{Deserialize, Serialize};

use crate::error::DataError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradeBin {
    pub min: u32,
    pub max: u32,
    pub label: String,
}

/// Ordered, contiguous partition of the score range into grade bins.
///
/// Bin positions (0-based here) are what the grade error measures distance
/// in, so the configured order matters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradeScale {
    pub bins: Vec<GradeBin>,
}

/// Index and label of a grade bin.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grade {
    pub index: usize,
    pub label: String,
}

impl GradeScale {
    /// The national mathematics exam scale: 0-16 points grade 5 up to 44-52
    /// points grade 1, ordered by ascending points.
    pub fn national_exam() -> Self {
        let bins = [(0, 16, "5"), (17, 25, "4"), (26, 34, "3"), (35, 43, "2"), (44, 52, "1")]
            .into_iter()
            .map(|(min, max, label)| GradeBin {
                min,
                max,
                label: label.to_string(),
            })
            .collect();
        GradeScale { bins }
    }

    /// `count` bins of near-equal width over `0..=max_score`, labelled like
    /// the exam scale (the top bin is "1").
    pub fn even(max_score: u32, count: usize) -> Self {
        let count = count.clamp(1, max_score as usize + 1);
        let span = max_score as usize + 1;
        let bins = (0..count)
            .map(|i| GradeBin {
                min: (i * span / count) as u32,
                max: ((i + 1) * span / count - 1) as u32,
                label: (count - i).to_string(),
            })
            .collect();
        GradeScale { bins }
    }

    /// The exam scale when the maximum score is 52, otherwise five even bins.
    pub fn default_for(max_score: u32) -> Self {
        if max_score == 52 {
            Self::national_exam()
        } else {
            Self::even(max_score, 5)
        }
    }

    /// Checks that the bins partition `0..=max_score` contiguously.
    pub fn validate(&self, max_score: u32) -> Result<(), DataError> {
        let first = self
            .bins
            .first()
            .ok_or_else(|| DataError::GradeScale("no bins".into()))?;
        if first.min != 0 {
            return Err(DataError::GradeScale(format!(
                "first bin starts at {}, expected 0",
                first.min
            )));
        }
        for (i, b) in self.bins.iter().enumerate() {
            if b.min > b.max {
                return Err(DataError::GradeScale(format!(
                    "bin {} has min {} > max {}",
                    i, b.min, b.max
                )));
            }
            if let Some(next) = self.bins.get(i + 1) {
                if next.min != b.max + 1 {
                    return Err(DataError::GradeScale(format!(
                        "bins {} and {} are not contiguous ({} then {})",
                        i,
                        i + 1,
                        b.max,
                        next.min
                    )));
                }
            }
        }
        let last = self.bins.last().unwrap();
        if last.max != max_score {
            return Err(DataError::GradeScale(format!(
                "last bin ends at {}, model maximum score is {}",
                last.max, max_score
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    /// Bin containing `score`.
    pub fn bin_of(&self, score: u32) -> Option<usize> {
        self.bins.iter().position(|b| b.min <= score && score <= b.max)
    }

    /// Probability mass of each bin.
    pub fn bin_masses(&self, probs: &[f64]) -> Vec<f64> {
        self.bins
            .iter()
            .map(|b| {
                let hi = (b.max as usize).min(probs.len().saturating_sub(1));
                if b.min as usize > hi {
                    0.0
                } else {
                    probs[b.min as usize..=hi].iter().sum()
                }
            })
            .collect()
    }

    pub fn grade(&self, index: usize) -> Grade {
        Grade {
            index,
            label: self.bins[index].label.clone(),
        }
    }
}

/// Bin with the largest mass; ties go to the lower bin index.
pub fn expected_grade(probs: &[f64], scale: &GradeScale) -> Grade {
    let masses = scale.bin_masses(probs);
    scale.grade(argmax_lowest(&masses))
}

/// `sum_i |observed - i| * mass_i` over bin positions.
pub fn grade_error(probs: &[f64], scale: &GradeScale, observed: usize) -> f64 {
    grade_error_from_masses(&scale.bin_masses(probs), observed)
}

pub fn grade_error_from_masses(masses: &[f64], observed: usize) -> f64 {
    masses
        .iter()
        .enumerate()
        .map(|(i, m)| (observed as f64 - i as f64).abs() * m)
        .sum()
}

/// Index of the largest value, first occurrence on ties.
pub(crate) fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
