//! The acceptance suite: runs every check in the library's check module,
//! prints one pass/fail line per criterion, and fails if any criterion
//! misses its tolerance or its runtime budget.

use blocksolve_core::checks::{run_suite, Suite};

#[test]
fn acceptance_criteria() {
    let start = std::time::Instant::now();
    let reports = run_suite(Suite::All);
    let mut failed = Vec::new();
    for report in &reports {
        println!("{}", report.line());
        if !report.pass {
            failed.push(format!("{} (tolerance)", report.name));
        }
        if report.elapsed > report.budget {
            failed.push(format!(
                "{} (runtime {:?} over budget {:?})",
                report.name, report.elapsed, report.budget
            ));
        }
    }
    let total = start.elapsed();
    println!("full suite: {total:?}");
    assert!(
        total <= std::time::Duration::from_secs(600),
        "suite exceeded ten minutes"
    );
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
