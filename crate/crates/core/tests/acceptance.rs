//! End-to-end acceptance: each criterion runs its verification suite,
//! prints one PASS/FAIL line and is held to a wall-clock budget.

use std::time::Duration;

use satocc::verify::{run_suite, SuiteReport, VerifyOptions};

const CRITERIA: [(u32, &str, &str, u64); 8] = [
    (1, "table", "table reproduction", 1),
    (2, "labels", "label-projection oracle equivalence", 10),
    (3, "adjointness", "splat/gather adjointness", 10),
    (4, "gradients", "gradient suite", 60),
    (5, "suppression", "suppression contract", 10),
    (6, "coverage", "coverage property", 30),
    (7, "slice-geometry", "slice geometry", 10),
    (8, "toy-fit", "toy supervised sanity", 60),
];

fn report_line(id: u32, title: &str, r: &SuiteReport, budget: Duration) -> bool {
    let in_time = r.elapsed < budget;
    let ok = r.passed() && in_time;
    println!(
        "criterion {id} {title}: {} ({:.2?}, budget {:?})",
        if ok { "PASS" } else { "FAIL" },
        r.elapsed,
        budget
    );
    for c in &r.checks {
        println!(
            "    [{}] {}: measured {:.3e}, threshold {:.3e} {}",
            if c.passed { "ok" } else { "x" },
            c.name,
            c.measured,
            c.threshold,
            c.detail
        );
    }
    if !in_time {
        println!("    over time budget");
    }
    ok
}

#[test]
fn acceptance() {
    let opts = VerifyOptions::default();
    let mut failed = Vec::new();
    for (id, suite, title, secs) in CRITERIA {
        let r = run_suite(suite, &opts).expect("suite runs");
        if !report_line(id, title, &r, Duration::from_secs(secs)) {
            failed.push(id);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

#[test]
fn perturbed_geometry_fails_adjointness() {
    let opts = VerifyOptions { perturb_geometry: true, ..VerifyOptions::default() };
    let r = run_suite("adjointness", &opts).unwrap();
    assert!(!r.passed());
    assert!(!r.checks[0].passed);
    assert!(r.checks[1].passed);
}

#[test]
fn reports_are_deterministic() {
    let opts = VerifyOptions { seed: 7, ..VerifyOptions::default() };
    for suite in ["labels", "suppression"] {
        let a = serde_json::to_string(&run_suite(suite, &opts).unwrap().checks).unwrap();
        let b = serde_json::to_string(&run_suite(suite, &opts).unwrap().checks).unwrap();
        assert_eq!(a, b);
    }
}
