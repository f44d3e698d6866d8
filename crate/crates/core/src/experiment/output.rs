use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;

/// Fixed 17-significant-digit rendering, exact under round trip.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Clone, Debug)]
pub struct Csv {
    header: Vec<String>,
    body: String,
}

impl Csv {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Csv {
            header: header.into_iter().map(Into::into).collect(),
            body: String::new(),
        }
    }

    pub fn row(&mut self, values: &[f64]) {
        debug_assert_eq!(values.len(), self.header.len());
        let line: Vec<String> = values.iter().map(|&v| fmt_f64(v)).collect();
        let _ = writeln!(self.body, "{}", line.join(","));
    }

    /// A row whose first column is an integer index.
    pub fn indexed_row(&mut self, index: usize, values: &[f64]) {
        debug_assert_eq!(values.len() + 1, self.header.len());
        let mut line = vec![index.to_string()];
        line.extend(values.iter().map(|&v| fmt_f64(v)));
        let _ = writeln!(self.body, "{}", line.join(","));
    }

    pub fn render(&self) -> String {
        format!("{}\n{}", self.header.join(","), self.body)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render())?;
        Ok(())
    }
}

/// One pass/fail comparison in a certificate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    /// `"<"`, `"<="` or `">="`.
    pub relation: &'static str,
    pub passed: bool,
}

impl Check {
    pub fn below(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Check {
            name: name.into(),
            value,
            bound,
            relation: "<",
            passed: value < bound,
        }
    }

    pub fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Check {
            name: name.into(),
            value,
            bound,
            relation: "<=",
            passed: value <= bound,
        }
    }

    pub fn at_least(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Check {
            name: name.into(),
            value,
            bound,
            relation: ">=",
            passed: value >= bound,
        }
    }

    pub fn flag(name: impl Into<String>, ok: bool) -> Self {
        Check {
            name: name.into(),
            value: if ok { 1.0 } else { 0.0 },
            bound: 1.0,
            relation: ">=",
            passed: ok,
        }
    }
}

/// Everything one experiment produced.
#[derive(Clone, Debug, Serialize)]
pub struct Outcome {
    pub experiment: String,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
    pub details: serde_json::Value,
    #[serde(skip)]
    pub files: Vec<PathBuf>,
}

impl Outcome {
    pub fn new(
        experiment: &str,
        checks: Vec<Check>,
        warnings: Vec<String>,
        details: serde_json::Value,
    ) -> Self {
        Outcome {
            experiment: experiment.to_string(),
            passed: checks.iter().all(|c| c.passed),
            checks,
            warnings,
            details,
            files: Vec::new(),
        }
    }

    pub fn certificate_json(&self) -> String {
        let status = if self.passed { "pass" } else { "fail" };
        let mut value = serde_json::to_value(self).expect("outcome serializes");
        value["status"] = serde_json::Value::from(status);
        serde_json::to_string_pretty(&value).expect("json renders")
    }
}
