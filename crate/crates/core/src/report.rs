//! Run reports: config echo, checks with tolerances, results.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::error::{LabError, Result};

pub const SCHEMA: &str = "lorlab-report/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Comparison {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
    #[serde(rename = "==")]
    Equals,
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub measured: Value,
    pub comparison: Comparison,
    pub tolerance: Value,
    /// Primary checks decide the exit status; the rest are diagnostics.
    pub primary: bool,
}

fn number(v: f64) -> Value {
    if v.is_finite() {
        Value::from(v)
    } else if v.is_nan() {
        Value::Null
    } else if v > 0.0 {
        Value::from("+inf")
    } else {
        Value::from("-inf")
    }
}

impl Check {
    pub fn at_most(name: &str, measured: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            passed: measured <= tolerance,
            measured: number(measured),
            comparison: Comparison::AtMost,
            tolerance: number(tolerance),
            primary: true,
        }
    }

    pub fn at_least(name: &str, measured: f64, bound: f64) -> Self {
        Check {
            name: name.into(),
            passed: measured >= bound,
            measured: number(measured),
            comparison: Comparison::AtLeast,
            tolerance: number(bound),
            primary: true,
        }
    }

    pub fn equals(name: &str, measured: &str, expected: &str) -> Self {
        Check {
            name: name.into(),
            passed: measured == expected,
            measured: Value::from(measured),
            comparison: Comparison::Equals,
            tolerance: Value::from(expected),
            primary: true,
        }
    }

    pub fn flag(name: &str, value: bool) -> Self {
        Check::equals(name, if value { "true" } else { "false" }, "true")
    }

    pub fn diagnostic(mut self) -> Self {
        self.primary = false;
        self
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ErrorInfo {
    pub kind: String,
    pub message: String,
}

impl From<&LabError> for ErrorInfo {
    fn from(e: &LabError) -> Self {
        let kind = match e {
            LabError::Usage(_) => "usage",
            LabError::Domain(_) => "domain",
            LabError::Internal(_) => "internal",
            LabError::Config { .. } => "config",
            LabError::Io(_) => "io",
        };
        ErrorInfo { kind: kind.into(), message: e.to_string() }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Tool {
    pub name: &'static str,
    pub version: &'static str,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub schema: &'static str,
    pub tool: Tool,
    pub experiment: String,
    pub config: BTreeMap<String, String>,
    pub expect_negative: bool,
    /// `pass`, `fail`, `expected-negative`, `unexpected-pass` or `error`.
    pub status: String,
    pub checks: Vec<Check>,
    pub results: Value,
    pub warnings: Vec<String>,
    pub artifacts: Vec<String>,
    pub error: Option<ErrorInfo>,
}

impl RunReport {
    pub fn new(experiment: &str, config: BTreeMap<String, String>, expect_negative: bool) -> Self {
        RunReport {
            schema: SCHEMA,
            tool: Tool { name: "lorlab", version: env!("CARGO_PKG_VERSION") },
            experiment: experiment.into(),
            config,
            expect_negative,
            status: "pass".into(),
            checks: Vec::new(),
            results: Value::Null,
            warnings: Vec::new(),
            artifacts: Vec::new(),
            error: None,
        }
    }

    pub fn primary_passed(&self) -> bool {
        self.checks.iter().filter(|c| c.primary).all(|c| c.passed)
    }

    /// Sets `status` from the checks and returns the process exit code.
    pub fn finish(&mut self) -> i32 {
        if let Some(e) = &self.error {
            self.status = "error".into();
            return if e.kind == "usage" || e.kind == "config" { 2 } else { 3 };
        }
        let ok = self.primary_passed();
        match (self.expect_negative, ok) {
            (false, true) => {
                self.status = "pass".into();
                0
            }
            (false, false) => {
                self.status = "fail".into();
                1
            }
            (true, false) => {
                self.status = "expected-negative".into();
                0
            }
            (true, true) => {
                self.status = "unexpected-pass".into();
                1
            }
        }
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_and_exit_codes() {
        let mut r = RunReport::new("timesep", BTreeMap::new(), false);
        r.checks.push(Check::at_most("a", 0.5, 1.0));
        r.checks.push(Check::at_most("b", 2.0, 1.0).diagnostic());
        assert_eq!(r.finish(), 0);
        r.checks.push(Check::at_least("c", 0.5, 1.0));
        assert_eq!(r.finish(), 1);
        r.expect_negative = true;
        assert_eq!(r.finish(), 0);
        assert_eq!(r.status, "expected-negative");
        r.error = Some(ErrorInfo::from(&LabError::Config { line: 1, message: "x".into() }));
        assert_eq!(r.finish(), 2);
        r.error = Some(ErrorInfo::from(&LabError::Domain("x".into())));
        assert_eq!(r.finish(), 3);
    }

    #[test]
    fn non_finite_values_serialize() {
        let c = Check::at_most("x", f64::INFINITY, 1.0);
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("\"+inf\""));
        assert!(!c.passed);
    }
}
