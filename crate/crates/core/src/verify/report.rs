use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::paths::TimeGrid;

/// One thresholded assertion inside a report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    /// `"<="` or `">="`.
    pub relation: String,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            relation: "<=".into(),
            pass: value <= threshold,
        }
    }

    pub fn at_least(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            relation: ">=".into(),
            pass: value >= threshold,
        }
    }

    /// `|value - target| <= tol`, stored as a deviation check.
    pub fn within(name: &str, value: f64, target: f64, tol: f64) -> Self {
        let mut c = Self::at_most(name, (value - target).abs(), tol);
        c.name = format!("{name} (value {value:.6}, target {target:.6})");
        c
    }

    pub fn flag(name: &str, ok: bool) -> Self {
        Self {
            name: name.into(),
            value: if ok { 1.0 } else { 0.0 },
            threshold: 1.0,
            relation: ">=".into(),
            pass: ok,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub master_seed: Option<u64>,
    pub grid: Option<TimeGrid>,
    pub n_paths: Option<usize>,
}

/// Structured result of one statistical test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub name: String,
    pub params: BTreeMap<String, Value>,
    /// Label of each estimate, e.g. `"eps=0.1"`.
    pub labels: Vec<String>,
    pub estimates: Vec<f64>,
    pub se: Vec<f64>,
    pub slope: Option<f64>,
    pub ci: Option<[f64; 2]>,
    pub checks: Vec<Check>,
    pub status: Status,
    pub pass: bool,
    pub provenance: Provenance,
    /// Wall time; kept out of the JSON so artifacts stay byte-stable.
    #[serde(skip)]
    pub runtime: Duration,
}

impl VerificationReport {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.into(),
            params: BTreeMap::new(),
            labels: Vec::new(),
            estimates: Vec::new(),
            se: Vec::new(),
            slope: None,
            ci: None,
            checks: Vec::new(),
            status: Status::Fail,
            pass: false,
            provenance: Provenance::default(),
            runtime: Duration::ZERO,
        }
    }

    pub fn param(&mut self, key: &str, value: impl Into<Value>) {
        self.params.insert(key.into(), value.into());
    }

    pub fn push_estimate(&mut self, label: impl Into<String>, value: f64, se: f64) {
        self.labels.push(label.into());
        self.estimates.push(value);
        self.se.push(se);
    }

    pub fn estimate(&self, label: &str) -> Option<f64> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| self.estimates[i])
    }

    pub fn check(&self, prefix: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name.starts_with(prefix))
    }

    /// Derive the pass flag from the checks.
    pub fn finish(&mut self) {
        self.pass = self.checks.iter().all(|c| c.pass);
        self.status = if self.pass {
            Status::Pass
        } else {
            Status::Fail
        };
    }

    pub fn skip(&mut self, reason: &str) {
        self.param("skip_reason", reason);
        self.checks.clear();
        self.pass = true;
        self.status = Status::Skipped;
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{} [{:?}] ({:.2?})",
            self.name, self.status, self.runtime
        );
        for (k, v) in &self.params {
            let _ = writeln!(s, "  {k} = {v}");
        }
        for ((l, v), e) in self.labels.iter().zip(&self.estimates).zip(&self.se) {
            let _ = writeln!(s, "  {l:<28} {v:>14.6e} +/- {e:.2e}");
        }
        if let (Some(slope), Some(ci)) = (self.slope, self.ci) {
            let _ = writeln!(
                s,
                "  slope {slope:.4} (95% CI [{:.4}, {:.4}])",
                ci[0], ci[1]
            );
        }
        for c in &self.checks {
            let _ = writeln!(
                s,
                "  [{}] {}: {:.6e} {} {:.6e}",
                if c.pass { "ok" } else { "FAIL" },
                c.name,
                c.value,
                c.relation,
                c.threshold
            );
        }
        s
    }
}
