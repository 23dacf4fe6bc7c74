//! Experiment reports: named tables, judged checks and their emission as CSV
//! and JSON.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::config::Params;
use crate::error::HarnessError;

/// A named table of numeric columns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len(), "row width for table `{}`", self.name);
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    /// CSV with a header row. Numbers use the shortest representation that
    /// parses back to the same `f64`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| HarnessError::Output(e.to_string());
        w.write_record(&self.columns).map_err(err)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|x| format!("{x:?}"))).map_err(err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }
}

/// How a check compares its value with its bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    AtMost,
    AtLeast,
}

/// A pass/fail judgement together with the tolerance it used.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub relation: Relation,
    pub bound: f64,
    pub passed: bool,
}

impl Check {
    /// Passes when `value <= bound`.
    pub fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self { name: name.into(), value, relation: Relation::AtMost, bound, passed: value <= bound }
    }

    /// Passes when `value >= bound`.
    pub fn at_least(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self { name: name.into(), value, relation: Relation::AtLeast, bound, passed: value >= bound }
    }

    /// Counts violations; passes when there are none.
    pub fn no_violations(name: impl Into<String>, violations: usize) -> Self {
        Self::at_most(name, violations as f64, 0.0)
    }

    pub fn describe(&self) -> String {
        let op = match self.relation {
            Relation::AtMost => "<=",
            Relation::AtLeast => ">=",
        };
        format!(
            "{} {}: {:.6e} {} {:.6e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            op,
            self.bound
        )
    }
}

/// Echo of the resolved configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigEcho {
    pub experiment: String,
    pub seed: u64,
    pub replicas: usize,
    pub params: Params,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub config: ConfigEcho,
    pub tables: Vec<Table>,
    pub summary: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    pub duration_secs: f64,
}

impl ExperimentReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn summary_value(&self, key: &str) -> Option<f64> {
        self.summary.get(key).copied()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Collects the pieces of a report while an experiment runs.
#[derive(Debug, Default)]
pub struct ReportBuilder {
    pub tables: Vec<Table>,
    pub summary: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
}

impl ReportBuilder {
    pub fn table(&mut self, t: Table) {
        self.tables.push(t);
    }

    pub fn value(&mut self, key: &str, v: f64) {
        self.summary.insert(key.into(), v);
    }

    pub fn check(&mut self, c: Check) {
        self.checks.push(c);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trips_floats() {
        let mut t = Table::new("x", &["a", "b"]);
        let vals = [0.1 + 0.2, 1e-300, -7.0, std::f64::consts::PI];
        t.push(vec![vals[0], vals[1]]);
        t.push(vec![vals[2], vals[3]]);
        let text = t.to_csv_string();
        let parsed: Vec<f64> = text.lines().skip(1).flat_map(|l| l.split(',').map(|s| s.parse::<f64>().unwrap()).collect::<Vec<_>>()).collect();
        assert_eq!(parsed, vals);
        assert!(text.starts_with("a,b\n"));
    }

    #[test]
    fn checks_carry_bounds() {
        assert!(Check::at_most("e", 1e-9, 1e-8).passed);
        assert!(!Check::at_least("r", 0.5, 0.9).passed);
        assert!(Check::no_violations("v", 0).passed);
        assert!(!Check::at_most("nan", f64::NAN, 1.0).passed);
        assert!(Check::at_most("e", 2.0, 1.0).describe().starts_with("FAIL e"));
    }
}
