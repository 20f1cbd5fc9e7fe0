//! Prints one PASS/FAIL line per acceptance criterion and fails if any
//! criterion fails.

mod common;

use std::process::ExitCode;

fn main() -> ExitCode {
    let mut failed = 0;
    for (i, (name, check)) in common::CRITERIA.iter().enumerate() {
        let c = check();
        let verdict = if c.passed { "PASS" } else { "FAIL" };
        println!("criterion {} {verdict} [{:.2}s] {name}: {}", i + 1, c.elapsed.as_secs_f64(), c.detail);
        if !c.passed {
            failed += 1;
        }
    }
    if failed == 0 {
        println!("acceptance: all 9 criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criteria fail");
        ExitCode::FAILURE
    }
}
