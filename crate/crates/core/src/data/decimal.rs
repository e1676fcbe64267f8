//! Serde helpers storing probabilities as decimal strings.
//!
//! Rust's float formatting emits the shortest string that parses back to the
//! same `f64`, so values survive a write/read cycle bit-for-bit. Plain JSON
//! numbers are accepted on input for hand-written files.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Deserialize)]
#[serde(untagged)]
enum Decimal {
    Text(String),
    Number(f64),
}

impl Decimal {
    fn value<E: serde::de::Error>(self) -> Result<f64, E> {
        match self {
            Decimal::Number(x) => Ok(x),
            Decimal::Text(s) => s
                .trim()
                .parse::<f64>()
                .map_err(|_| E::custom(format!("invalid decimal {:?}", s))),
        }
    }
}

fn to_strings(v: &[f64]) -> Vec<String> {
    v.iter().map(|x| x.to_string()).collect()
}

pub mod vec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        to_strings(v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<Decimal>::deserialize(d)?
            .into_iter()
            .map(Decimal::value)
            .collect()
    }
}

pub mod opt_vec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<Vec<f64>>, s: S) -> Result<S::Ok, S::Error> {
        v.as_ref().map(|v| to_strings(v)).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<f64>>, D::Error> {
        match Option::<Vec<Decimal>>::deserialize(d)? {
            None => Ok(None),
            Some(v) => v
                .into_iter()
                .map(Decimal::value)
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
        }
    }
}

pub mod opt_mat {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<Vec<Vec<f64>>>, s: S) -> Result<S::Ok, S::Error> {
        v.as_ref()
            .map(|rows| rows.iter().map(|r| to_strings(r)).collect::<Vec<_>>())
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<Vec<f64>>>, D::Error> {
        match Option::<Vec<Vec<Decimal>>>::deserialize(d)? {
            None => Ok(None),
            Some(rows) => rows
                .into_iter()
                .map(|r| r.into_iter().map(Decimal::value).collect::<Result<Vec<_>, _>>())
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
        }
    }
}
