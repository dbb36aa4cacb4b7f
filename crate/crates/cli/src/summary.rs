//! Ensemble summaries, acceptance checks, and mergeable per-replicate tables.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use wavelab_core::stats::{LineFit, Summary};

use crate::config::{Check, ExperimentConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    pub name: String,
    pub mean: f64,
    pub variance: f64,
    pub std_err: f64,
    pub count: usize,
}

impl StatRow {
    pub fn new(name: impl Into<String>, s: &Summary) -> Self {
        Self { name: name.into(), mean: s.mean, variance: s.variance, std_err: s.std_err, count: s.count }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeRow {
    pub name: String,
    pub slope: f64,
    pub slope_se: f64,
    pub points: usize,
}

impl SlopeRow {
    pub fn new(name: impl Into<String>, fit: &LineFit) -> Self {
        Self { name: name.into(), slope: fit.slope, slope_se: fit.slope_se, points: fit.points }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub metric: String,
    pub value: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleSummary {
    pub experiment: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub statistics: Vec<StatRow>,
    pub slopes: Vec<SlopeRow>,
    /// Scalar results addressable by acceptance checks.
    pub metrics: BTreeMap<String, f64>,
    pub checks: Vec<CheckResult>,
    pub warnings: Vec<String>,
    /// `None` when the config declares no checks.
    pub passed: Option<bool>,
}

impl EnsembleSummary {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }

    pub fn stat(&self, name: &str) -> Option<&StatRow> {
        self.statistics.iter().find(|s| s.name == name)
    }

    pub fn slope(&self, name: &str) -> Option<&SlopeRow> {
        self.slopes.iter().find(|s| s.name == name)
    }

    /// Evaluates the declared checks and sets `passed`.
    pub fn evaluate(&mut self, checks: &[Check]) {
        self.checks = checks
            .iter()
            .map(|c| {
                let value = self.metric(&c.metric);
                let passed = value.is_some_and(|v| {
                    c.min.is_none_or(|lo| v >= lo) && c.max.is_none_or(|hi| v <= hi)
                });
                CheckResult { metric: c.metric.clone(), value, min: c.min, max: c.max, passed }
            })
            .collect();
        self.passed = (!checks.is_empty()).then(|| self.checks.iter().all(|c| c.passed));
    }
}

/// A CSV-shaped table. Numbers are stored in their shortest round-trip form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        self.push_text(row.iter().map(|v| v.to_string()).collect());
    }

    pub fn push_text(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// Numeric value of cell `(row, col)`.
    pub fn value(&self, row: usize, col: &str) -> Option<f64> {
        let j = self.header.iter().position(|h| h == col)?;
        self.rows.get(row)?.get(j)?.parse().ok()
    }
}

/// Per-replicate rows keyed by seed. Merging is a union, so partial runs can
/// be combined in any order and grouping.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReplicateSet {
    pub columns: Vec<String>,
    pub rows: BTreeMap<u64, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MergeError {
    #[error("column layouts differ: {0:?} vs {1:?}")]
    Columns(Vec<String>, Vec<String>),
    #[error("seed {0} appears twice with different values")]
    Conflict(u64),
    #[error("replicate table is not numeric: {0}")]
    Parse(String),
}

impl ReplicateSet {
    /// From a replicate table whose first two columns are `replicate, seed`.
    pub fn from_table(table: &Table) -> Result<Self, MergeError> {
        if table.header.len() < 2 || table.header[..2] != ["replicate", "seed"] {
            return Err(MergeError::Parse(format!("expected 'replicate,seed,…' header, got {:?}", table.header)));
        }
        let mut rows = BTreeMap::new();
        for r in &table.rows {
            let seed: u64 = r[1].parse().map_err(|_| MergeError::Parse(format!("seed '{}'", r[1])))?;
            let values = r[2..]
                .iter()
                .map(|c| c.parse::<f64>().map_err(|_| MergeError::Parse(format!("cell '{c}'"))))
                .collect::<Result<Vec<_>, _>>()?;
            rows.insert(seed, values);
        }
        Ok(Self { columns: table.header[2..].to_vec(), rows })
    }

    pub fn merge(mut self, other: ReplicateSet) -> Result<Self, MergeError> {
        if self.rows.is_empty() && self.columns.is_empty() {
            return Ok(other);
        }
        if (!other.rows.is_empty() || !other.columns.is_empty())
            && self.columns != other.columns {
                return Err(MergeError::Columns(self.columns, other.columns));
            }
        for (seed, row) in other.rows {
            match self.rows.get(&seed) {
                Some(existing) if existing.iter().map(|v| v.to_bits()).ne(row.iter().map(|v| v.to_bits())) => {
                    return Err(MergeError::Conflict(seed))
                }
                Some(_) => {}
                None => {
                    self.rows.insert(seed, row);
                }
            }
        }
        Ok(self)
    }

    /// Column-wise summaries in seed order.
    pub fn summaries(&self) -> Vec<StatRow> {
        self.columns
            .iter()
            .enumerate()
            .filter_map(|(j, name)| {
                let xs: Vec<f64> = self.rows.values().map(|r| r[j]).collect();
                Summary::of(&xs).ok().map(|s| StatRow::new(name.clone(), &s))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn set(seeds: &[u64]) -> ReplicateSet {
        ReplicateSet {
            columns: vec!["a".into(), "b".into()],
            rows: seeds.iter().map(|&s| (s, vec![s as f64 * 0.5, (s as f64).sqrt()])).collect(),
        }
    }

    #[test]
    fn conflicting_rows_rejected() {
        let mut b = set(&[1]);
        b.rows.get_mut(&1).unwrap()[0] = 99.0;
        assert_eq!(set(&[1, 2]).merge(b), Err(MergeError::Conflict(1)));
        let mut c = set(&[3]);
        c.columns[0] = "z".into();
        assert!(matches!(set(&[1]).merge(c), Err(MergeError::Columns(..))));
    }

    proptest! {
        #[test]
        fn merge_is_order_independent(
            a in proptest::collection::vec(0u64..40, 0..15),
            b in proptest::collection::vec(0u64..40, 0..15),
            c in proptest::collection::vec(0u64..40, 0..15),
        ) {
            let left = set(&a).merge(set(&b)).unwrap().merge(set(&c)).unwrap();
            let right = set(&c).merge(set(&a).merge(set(&b)).unwrap()).unwrap();
            prop_assert_eq!(&left, &right);
            prop_assert_eq!(left.summaries(), right.summaries());
        }
    }
}
