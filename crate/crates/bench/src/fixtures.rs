//! Published per-eval success tables, shipped as fixture data for the
//! aggregation checks.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::harness::aggregate;
use crate::BenchError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRow {
    pub category: String,
    pub evals: Vec<f64>,
    /// The average exactly as printed; its decimals set the precision.
    pub printed_avg: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureTable {
    pub model: String,
    pub rows: Vec<FixtureRow>,
}

#[derive(Deserialize)]
struct FixtureFile {
    tables: Vec<FixtureTable>,
}

pub fn load_fixture(path: &Path) -> Result<Vec<FixtureTable>, BenchError> {
    let file: FixtureFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    Ok(file.tables)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellCheck {
    pub model: String,
    pub category: String,
    pub printed: String,
    /// Our mean rendered with the printed number of decimals.
    pub computed: String,
    pub std: f64,
}

impl CellCheck {
    pub fn matches(&self) -> bool {
        self.printed == self.computed
    }
}

/// Recompute every average of `tables` and compare at printed precision.
pub fn check_fixture(tables: &[FixtureTable]) -> Result<Vec<CellCheck>, BenchError> {
    let mut out = Vec::new();
    for t in tables {
        for r in &t.rows {
            let (avg, std) = aggregate(&r.evals)?;
            let decimals = r.printed_avg.split_once('.').map_or(0, |(_, d)| d.len());
            out.push(CellCheck {
                model: t.model.clone(),
                category: r.category.clone(),
                printed: r.printed_avg.clone(),
                computed: format!("{avg:.decimals$}"),
                std,
            });
        }
    }
    Ok(out)
}
