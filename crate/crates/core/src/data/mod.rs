//! Dataset CSV files and JSON model / grade-scale documents.
//!
//! Dataset CSV: a header row of `q<id>` columns (0-based question ids, any
//! order, absent columns treated as missing), one student per row, state
//! indices as integers, an empty cell for a missing answer.

pub mod decimal;

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::DataError;
use crate::grade::GradeScale;
use crate::model::{build_model, ModelSpec, StudentModel};

/// Answer matrix: one row per student, `None` for a missing answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    num_questions: usize,
    rows: Vec<Vec<Option<usize>>>,
}

impl Dataset {
    pub fn new(num_questions: usize, rows: Vec<Vec<Option<usize>>>) -> Result<Self, DataError> {
        for (i, row) in rows.iter().enumerate() {
            if row.len() != num_questions {
                return Err(DataError::Row {
                    row: i + 1,
                    reason: format!("{} values, expected {}", row.len(), num_questions),
                });
            }
            if row.iter().all(Option::is_none) {
                return Err(DataError::Row {
                    row: i + 1,
                    reason: "no answers".into(),
                });
            }
        }
        Ok(Dataset { num_questions, rows })
    }

    /// Builds a dataset of complete answer vectors.
    pub fn complete(num_questions: usize, rows: Vec<Vec<usize>>) -> Result<Self, DataError> {
        Self::new(
            num_questions,
            rows.into_iter().map(|r| r.into_iter().map(Some).collect()).collect(),
        )
    }

    pub fn num_questions(&self) -> usize {
        self.num_questions
    }

    pub fn rows(&self) -> &[Vec<Option<usize>>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows at the given indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            num_questions: self.num_questions,
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// The answer vector of row `i` when no answer is missing.
    pub fn complete_row(&self, i: usize) -> Option<Vec<usize>> {
        self.rows[i].iter().copied().collect()
    }

    /// Checks every value against the model's state counts.
    pub fn validate(&self, model: &StudentModel) -> Result<(), DataError> {
        if self.num_questions != model.num_questions() {
            return Err(DataError::Header(format!(
                "dataset has {} questions, model has {}",
                self.num_questions,
                model.num_questions()
            )));
        }
        for (i, row) in self.rows.iter().enumerate() {
            for (q, v) in row.iter().enumerate() {
                if let Some(s) = v {
                    let n = model.questions()[q].num_states();
                    if *s >= n {
                        return Err(DataError::Row {
                            row: i + 1,
                            reason: format!("q{}: state {} out of range 0..{}", q, s, n),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Parses a dataset CSV. Row numbers in errors count data rows from 1.
pub fn parse_dataset<R: Read>(reader: R, model: &StudentModel) -> Result<Dataset, DataError> {
    let n = model.num_questions();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| DataError::Header(e.to_string()))?.clone();
    let mut columns = Vec::with_capacity(headers.len());
    let mut seen = vec![false; n];
    for h in headers.iter() {
        let id = h
            .strip_prefix('q')
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&id| id < n)
            .ok_or_else(|| DataError::Header(format!("unknown column {:?}", h)))?;
        if std::mem::replace(&mut seen[id], true) {
            return Err(DataError::Header(format!("duplicate column {:?}", h)));
        }
        columns.push(id);
    }
    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row_no = i + 1;
        let record = record.map_err(|e| DataError::Row {
            row: row_no,
            reason: e.to_string(),
        })?;
        let mut row = vec![None; n];
        for (cell, &q) in record.iter().zip(&columns) {
            if cell.is_empty() {
                continue;
            }
            let s: usize = cell.parse().map_err(|_| DataError::Row {
                row: row_no,
                reason: format!("q{}: not a state index: {:?}", q, cell),
            })?;
            let states = model.questions()[q].num_states();
            if s >= states {
                return Err(DataError::Row {
                    row: row_no,
                    reason: format!("q{}: state {} out of range 0..{}", q, s, states),
                });
            }
            row[q] = Some(s);
        }
        if row.iter().all(Option::is_none) {
            return Err(DataError::Row {
                row: row_no,
                reason: "no answers".into(),
            });
        }
        rows.push(row);
    }
    Dataset::new(n, rows)
}

pub fn read_dataset(path: &Path, model: &StudentModel) -> Result<Dataset, DataError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    parse_dataset(file, model)
}

/// Writes a dataset with columns in question-id order.
pub fn write_dataset_to<W: Write>(writer: W, data: &Dataset) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    let other = |e: csv::Error| DataError::Other(e.to_string());
    w.write_record((0..data.num_questions).map(|q| format!("q{}", q)))
        .map_err(other)?;
    for row in &data.rows {
        w.write_record(row.iter().map(|v| v.map(|s| s.to_string()).unwrap_or_default()))
            .map_err(other)?;
    }
    w.flush().map_err(|e| DataError::Other(e.to_string()))
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<(), DataError> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    write_dataset_to(file, data)
}

/// Parses and validates a model document.
pub fn parse_model(json: &str) -> Result<StudentModel, DataError> {
    let spec: ModelSpec = from_json(json)?;
    Ok(build_model(&spec)?)
}

pub fn model_to_json(model: &StudentModel) -> String {
    let mut s = serde_json::to_string_pretty(&model.to_spec()).expect("model serializes");
    s.push('\n');
    s
}

pub fn read_model(path: &Path) -> Result<StudentModel, DataError> {
    parse_model(&fs::read_to_string(path).map_err(|e| io_err(path, e))?)
}

pub fn write_model(path: &Path, model: &StudentModel) -> Result<(), DataError> {
    fs::write(path, model_to_json(model)).map_err(|e| io_err(path, e))
}

pub fn parse_grade_scale(json: &str) -> Result<GradeScale, DataError> {
    from_json(json)
}

pub fn read_grade_scale(path: &Path) -> Result<GradeScale, DataError> {
    parse_grade_scale(&fs::read_to_string(path).map_err(|e| io_err(path, e))?)
}

/// Deserializes JSON, reporting failures with the JSON path of the problem.
pub fn from_json<T: serde::de::DeserializeOwned>(json: &str) -> Result<T, DataError> {
    let de = &mut serde_json::Deserializer::from_str(json);
    serde_path_to_error::deserialize(de).map_err(|e| DataError::Schema {
        path: e.path().to_string(),
        reason: e.inner().to_string(),
    })
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::exam_network;

    fn small_model() -> StudentModel {
        exam_network().restrict_questions(3)
    }

    #[test]
    fn three_rows() {
        let m = small_model();
        let csv = "q0,q1,q2\n0,1,0\n1,,1\n0,0,\n";
        let d = parse_dataset(csv.as_bytes(), &m).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.rows()[1], vec![Some(1), None, Some(1)]);
    }

    #[test]
    fn out_of_range_reports_row() {
        let m = small_model();
        let csv = "q0,q1,q2\n0,1,0\n1,7,1\n";
        match parse_dataset(csv.as_bytes(), &m) {
            Err(DataError::Row { row, reason }) => {
                assert_eq!(row, 2);
                assert!(reason.contains("q1"));
            }
            other => panic!("unexpected {:?}", other),
        }
    }

    #[test]
    fn unknown_column() {
        let m = small_model();
        assert!(matches!(
            parse_dataset("q0,q9\n0,0\n".as_bytes(), &m),
            Err(DataError::Header(_))
        ));
        assert!(matches!(
            parse_dataset("q0,x\n0,0\n".as_bytes(), &m),
            Err(DataError::Header(_))
        ));
    }

    #[test]
    fn malformed_row_reports_number() {
        let m = small_model();
        let err = parse_dataset("q0,q1,q2\n0,1,0\n0,1\n".as_bytes(), &m).unwrap_err();
        assert!(matches!(err, DataError::Row { row: 2, .. }), "{:?}", err);
        let err = parse_dataset("q0,q1,q2\n0,a,0\n".as_bytes(), &m).unwrap_err();
        assert!(matches!(err, DataError::Row { row: 1, .. }), "{:?}", err);
    }

    #[test]
    fn column_order_is_free() {
        let m = small_model();
        let a = parse_dataset("q0,q1,q2\n0,1,0\n".as_bytes(), &m).unwrap();
        let b = parse_dataset("q2,q0,q1\n0,0,1\n".as_bytes(), &m).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dataset_round_trip() {
        let m = small_model();
        let d = Dataset::new(3, vec![vec![Some(0), None, Some(1)], vec![Some(1), Some(1), Some(0)]]).unwrap();
        let mut buf = Vec::new();
        write_dataset_to(&mut buf, &d).unwrap();
        assert_eq!(parse_dataset(buf.as_slice(), &m).unwrap(), d);
    }

    #[test]
    fn missing_effect_is_schema_error() {
        let json = r#"{
          "skills": [{"name": "S", "states": 2}],
          "questions": [{"name": "Q", "points": [0, 1]}],
          "edges": [{"from": "S", "to": "Q"}]
        }"#;
        match parse_model(json) {
            Err(DataError::Schema { path, reason }) => {
                assert_eq!(path, "edges[0]");
                assert!(reason.contains("effect"), "{}", reason);
            }
            other => panic!("unexpected {:?}", other),
        }
    }

    #[test]
    fn bad_decimal_points_at_path() {
        let json = r#"{
          "skills": [{"name": "S", "states": 2, "prior": ["0.5", "abc"]}],
          "questions": [{"name": "Q", "points": [0, 1]}],
          "edges": [{"from": "S", "to": "Q", "effect": "isotone"}]
        }"#;
        match parse_model(json) {
            Err(DataError::Schema { path, .. }) => assert_eq!(path, "skills[0].prior"),
            other => panic!("unexpected {:?}", other),
        }
    }

    #[test]
    fn hand_written_minimal_model() {
        let json = r#"{
          "skills": [{"name": "S", "states": 2, "prior": ["0.4", "0.6"]}],
          "questions": [{"name": "Q", "points": [0, 2], "cpt": [["0.7", "0.3"], [0.1, 0.9]]}],
          "edges": [{"from": "S", "to": "Q", "effect": "isotone"}]
        }"#;
        let m = parse_model(json).unwrap();
        assert_eq!(m.prior(0), &[0.4, 0.6]);
        assert_eq!(m.cpt(0).row(1), &[0.1, 0.9]);
        assert_eq!(m.max_score(), 2);
    }

    #[test]
    fn grade_scale_json() {
        let s = GradeScale::national_exam();
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(parse_grade_scale(&json).unwrap(), s);
    }
}
