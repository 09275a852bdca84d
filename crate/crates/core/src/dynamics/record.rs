//! Tabular experiment records shared by all protocols.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One swept coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub name: String,
    pub units: String,
    pub values: Vec<f64>,
}

impl Axis {
    pub fn new(name: &str, units: &str, values: Vec<f64>) -> Self {
        Axis {
            name: name.into(),
            units: units.into(),
            values,
        }
    }
}

/// Measured quantities on the outer product of `axes`, stored row-major
/// (last axis fastest). Keys starting with `p` followed by `_` or a digit
/// are populations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub protocol: String,
    pub axes: Vec<Axis>,
    pub data: BTreeMap<String, Vec<f64>>,
    /// Shots per point; 0 for exact probabilities.
    pub shots: u32,
    pub seed: u64,
    pub device: String,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

fn is_population(key: &str) -> bool {
    let mut c = key.chars();
    c.next() == Some('p') && matches!(c.next(), Some('_') | Some('0'..='9'))
}

impl ExperimentRecord {
    /// Number of points on the grid.
    pub fn points(&self) -> usize {
        self.axes.iter().map(|a| a.values.len()).product()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.points();
        for (k, v) in &self.data {
            if v.len() != n {
                return Err(Error::Contract(format!(
                    "`{k}` has {} values for {n} grid points",
                    v.len()
                )));
            }
            if is_population(k) {
                if let Some(bad) = v.iter().find(|p| !(-1e-9..=1.0 + 1e-9).contains(*p)) {
                    return Err(Error::Contract(format!(
                        "population `{k}` = {bad} outside [0, 1]"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn column(&self, key: &str) -> Result<&[f64]> {
        self.data
            .get(key)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Contract(format!("record has no `{key}` column")))
    }
}
