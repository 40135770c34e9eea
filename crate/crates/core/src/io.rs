//! Plain-text exchange formats for fronts and schedules.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::problem::ScheduleTensor;
use crate::sampler::FrontPoint;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("front file has no rows")]
    Empty,
    #[error("schedule data has {got} entries, shape needs {expected}")]
    BadLength { expected: usize, got: usize },
}

pub const FRONT_HEADER: &str = "w1,w2,e_blend,e_yield,feasible";

/// One row of a front file. Weights are absent for optimizers that do not use them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontRow {
    pub w1: Option<f64>,
    pub w2: Option<f64>,
    pub e_blend: f64,
    pub e_yield: f64,
    pub feasible: bool,
}

impl FrontRow {
    pub fn point(&self) -> [f64; 2] {
        [self.e_blend, self.e_yield]
    }
}

pub fn front_rows(points: &[FrontPoint]) -> Vec<FrontRow> {
    points
        .iter()
        .map(|p| FrontRow {
            w1: p.weight.map(|w| w.w_blend),
            w2: p.weight.map(|w| w.w_yield),
            e_blend: p.objectives.e_blend,
            e_yield: p.objectives.e_yield,
            feasible: p.objectives.feasible,
        })
        .collect()
}

/// Front file text; floats use the shortest round-trip representation.
pub fn front_to_csv(points: &[FrontPoint]) -> String {
    let mut s = format!("{FRONT_HEADER}\n");
    for r in front_rows(points) {
        let w = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{},{},{},{}", w(r.w1), w(r.w2), r.e_blend, r.e_yield, r.feasible);
    }
    s
}

pub fn front_from_csv(text: &str) -> Result<Vec<FrontRow>, FormatError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let rows = reader.deserialize().collect::<Result<Vec<FrontRow>, _>>()?;
    if rows.is_empty() {
        return Err(FormatError::Empty);
    }
    Ok(rows)
}

pub fn schedule_to_json(s: &ScheduleTensor) -> String {
    serde_json::to_string(s).expect("schedule serializes")
}

pub fn schedule_from_json(text: &str) -> Result<ScheduleTensor, FormatError> {
    let s: ScheduleTensor = serde_json::from_str(text)?;
    let expected = s.n_ct * s.n_pt * s.n_periods;
    if s.data.len() != expected {
        return Err(FormatError::BadLength { expected, got: s.data.len() });
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{ObjectiveValue, Weights};

    #[test]
    fn front_round_trip() {
        let s = ScheduleTensor::zeros(1, 1, 2);
        let objectives = ObjectiveValue { e_blend: 0.1, e_yield: 2.5, e_const: 0.0, feasible: true };
        let pts = vec![
            FrontPoint { schedule: s.clone(), objectives, weight: Some(Weights { w_blend: 0.3, w_yield: 0.7 }) },
            FrontPoint { schedule: s, objectives, weight: None },
        ];
        let text = front_to_csv(&pts);
        assert!(text.starts_with(FRONT_HEADER));
        assert_eq!(front_from_csv(&text).unwrap(), front_rows(&pts));
        assert!(matches!(front_from_csv(&format!("{FRONT_HEADER}\n")), Err(FormatError::Empty)));
    }

    #[test]
    fn schedule_round_trip() {
        let mut s = ScheduleTensor::zeros(2, 3, 4);
        s.set(1, 2, 3, 0.123456789);
        assert_eq!(schedule_from_json(&schedule_to_json(&s)).unwrap(), s);
        let short = r#"{"n_ct":1,"n_pt":2,"n_periods":2,"data":[0.0,0.0,0.0]}"#;
        assert!(matches!(schedule_from_json(short), Err(FormatError::BadLength { expected: 4, got: 3 })));
    }
}
