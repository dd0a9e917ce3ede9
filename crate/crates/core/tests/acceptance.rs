//! Acceptance criteria at seed 1, one PASS/FAIL line each, plus a fault
//! injection run that must fail. Exits nonzero if anything is off.

use ratsi::harness::acceptance::{run_criterion, verify_all, VerifyOptions};
use std::process::ExitCode;

fn main() -> ExitCode {
    let report = verify_all(&VerifyOptions::seed(1));
    for r in &report.criteria {
        println!("{}", r.line());
    }
    let tampered = run_criterion(1, &VerifyOptions { seed: 1, tamper_filter: true });
    let caught = !tampered.passed && tampered.numerical_error;
    println!(
        "[{}] tampered filter rejected: {}",
        if caught { "PASS" } else { "FAIL" },
        tampered.reason()
    );
    let passed = report.criteria.iter().filter(|r| r.passed).count();
    println!("acceptance: {passed}/{} criteria passed in {:.1} s", report.criteria.len(), report.seconds);
    if report.all_passed() && caught {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
