//! Self-checking property suites: table arithmetic, oracle equivalence,
//! adjointness, gradients, suppression, coverage, slice geometry and a toy
//! fit. Every suite is deterministic for a given seed.

pub mod oracles;
mod suites;

use std::time::{Duration, Instant};

use serde::Serialize;

use crate::error::{Error, Result};

/// One measured invariant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub threshold: f64,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    /// Passes when `measured < threshold`.
    pub fn below(name: impl Into<String>, measured: f64, threshold: f64) -> Self {
        Self::new(name, measured, threshold, measured < threshold)
    }

    /// Passes when `measured <= threshold`.
    pub fn at_most(name: impl Into<String>, measured: f64, threshold: f64) -> Self {
        Self::new(name, measured, threshold, measured <= threshold)
    }

    /// Passes when `measured > threshold`.
    pub fn above(name: impl Into<String>, measured: f64, threshold: f64) -> Self {
        Self::new(name, measured, threshold, measured > threshold)
    }

    /// Passes when `measured >= threshold`.
    pub fn at_least(name: impl Into<String>, measured: f64, threshold: f64) -> Self {
        Self::new(name, measured, threshold, measured >= threshold)
    }

    fn new(name: impl Into<String>, measured: f64, threshold: f64, passed: bool) -> Self {
        Self { name: name.into(), measured, threshold, passed, detail: String::new() }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<Check>,
    /// Wall time; left out of serialized reports so they stay reproducible.
    #[serde(skip)]
    pub elapsed: Duration,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Run the adjoint transforms on a shifted rig; the adjointness suite
    /// is then expected to fail.
    pub perturb_geometry: bool,
}

/// Suite names in run order.
pub const SUITES: [&str; 8] =
    ["table", "labels", "adjointness", "gradients", "suppression", "coverage", "slice-geometry", "toy-fit"];

pub fn run_suite(name: &str, opts: &VerifyOptions) -> Result<SuiteReport> {
    let start = Instant::now();
    let checks = match name {
        "table" => suites::table(),
        "labels" => suites::labels(opts.seed),
        "adjointness" => suites::adjointness(opts.seed, opts.perturb_geometry),
        "gradients" => suites::gradients(opts.seed),
        "suppression" => suites::suppression(opts.seed),
        "coverage" => suites::coverage(),
        "slice-geometry" => suites::slice_geometry(opts.seed),
        "toy-fit" => suites::toy_fit(opts.seed),
        other => return Err(Error::Domain(format!("unknown suite {other:?}; known: {}", SUITES.join(", ")))),
    }?;
    Ok(SuiteReport { suite: name.to_string(), checks, elapsed: start.elapsed() })
}

pub fn run_all(opts: &VerifyOptions) -> Result<Vec<SuiteReport>> {
    SUITES.iter().map(|s| run_suite(s, opts)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn check_comparisons() {
        assert!(Check::below("a", 1.0, 2.0).passed);
        assert!(!Check::below("a", 2.0, 2.0).passed);
        assert!(Check::at_most("a", 2.0, 2.0).passed);
        assert!(!Check::above("a", 2.0, 2.0).passed);
        assert!(Check::at_least("a", 2.0, 2.0).passed);
        assert!(!Check::below("a", f64::NAN, 2.0).passed);
    }

    #[test]
    fn unknown_suite() {
        assert_eq!(run_suite("nope", &VerifyOptions::default()).unwrap_err().kind(), "domain");
    }

    #[test]
    fn table_suite_passes() {
        let r = run_suite("table", &VerifyOptions::default()).unwrap();
        assert!(r.passed(), "{:?}", r.checks);
        assert_eq!(r.checks.len(), 6);
    }

    #[test]
    fn empty_report_does_not_pass() {
        let r = SuiteReport { suite: "x".into(), checks: vec![], elapsed: Duration::ZERO };
        assert!(!r.passed());
    }
}
