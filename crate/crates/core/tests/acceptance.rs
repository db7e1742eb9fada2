use std::process::ExitCode;

use spinmix::acceptance::{acceptance_suite, AcceptanceOptions, CRITERIA};

fn main() -> ExitCode {
    let report = acceptance_suite(&AcceptanceOptions::default());
    assert_eq!(report.checks.len(), CRITERIA.len());
    for (i, c) in report.checks.iter().enumerate() {
        println!("criterion {:>2}: {c}", i + 1);
    }
    let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed()).map(|c| c.name.as_str()).collect();
    println!(
        "acceptance: {} of {} passed in {:.1}s",
        CRITERIA.len() - failed.len(),
        CRITERIA.len(),
        report.wall_clock_secs
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        eprintln!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
