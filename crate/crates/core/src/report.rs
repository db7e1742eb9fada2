//! Machine-readable results: named checks and the run report.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    /// Not run; counts as a failure.
    Skipped(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    /// The statement being tested.
    pub anchor: String,
    pub value: f64,
    pub reference: f64,
    pub status: Status,
    pub detail: String,
    /// Wall-clock time spent on the check.
    pub seconds: f64,
}

impl Check {
    pub fn new(name: &str, anchor: &str, value: f64, reference: f64, pass: bool) -> Self {
        Self {
            name: name.into(),
            anchor: anchor.into(),
            value,
            reference,
            status: if pass { Status::Pass } else { Status::Fail },
            detail: String::new(),
            seconds: 0.0,
        }
    }

    pub fn skipped(name: &str, anchor: &str, why: String) -> Self {
        Self {
            name: name.into(),
            anchor: anchor.into(),
            value: f64::NAN,
            reference: f64::NAN,
            status: Status::Skipped(why),
            detail: String::new(),
            seconds: 0.0,
        }
    }

    /// A check that could not be computed.
    pub fn failed(name: &str, anchor: &str, err: impl fmt::Display) -> Self {
        let mut c = Self::new(name, anchor, f64::NAN, f64::NAN, false);
        c.detail = format!("error: {err}");
        c
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match &self.status {
            Status::Pass => "PASS".to_string(),
            Status::Fail => "FAIL".to_string(),
            Status::Skipped(why) => format!("FAIL (skipped: {why})"),
        };
        write!(
            f,
            "{tag:<6} {:<28} value={:<12.6e} reference={:<12.6e} {:.2}s",
            self.name, self.value, self.reference, self.seconds
        )?;
        if !self.detail.is_empty() {
            write!(f, "  {}", self.detail)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub version: String,
    pub command: String,
    /// Resolved configuration, defaults filled in.
    pub config: serde_json::Value,
    pub checks: Vec<Check>,
    /// Free-form results of the command.
    pub values: BTreeMap<String, serde_json::Value>,
    pub wall_clock_secs: f64,
}

impl RunReport {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config,
            checks: Vec::new(),
            values: BTreeMap::new(),
            wall_clock_secs: 0.0,
        }
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn value(&mut self, key: &str, v: impl Serialize) {
        self.values.insert(
            key.into(),
            serde_json::to_value(v).unwrap_or(serde_json::Value::Null),
        );
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }
}

/// Writes a header and rows as comma-separated text.
pub fn write_csv(path: impl AsRef<Path>, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skipped_counts_as_failure() {
        let mut r = RunReport::new("accept", serde_json::Value::Null);
        r.checks.push(Check::new("a", "x", 1.0, 2.0, true));
        assert!(r.all_pass());
        r.checks.push(Check::skipped("b", "y", "cap".into()));
        assert!(!r.all_pass());
        assert!(r.checks[1].to_string().contains("skipped: cap"));
    }

    #[test]
    fn json_round_trip() {
        let mut r = RunReport::new("eta", serde_json::json!({"seed": 1}));
        r.value("eta", 0.5);
        r.checks.push(Check::new("a", "x", 1.0, 2.0, false));
        let back: RunReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back.values["eta"], serde_json::json!(0.5));
        assert_eq!(back.checks[0].status, Status::Fail);
    }
}
