//! Acceptance criteria: one line per criterion with its pinned tolerance.
//! Runs without the libtest harness so every line reaches the test log.

use std::process::ExitCode;

use sclab::checks::{self, Profile, Status};

fn main() -> ExitCode {
    println!("acceptance criteria");
    let results = checks::run(Profile::Full, |c| println!("{c}"));
    let failed = results.iter().filter(|c| c.failed()).count();
    let known = results.iter().filter(|c| c.status == Status::KnownDeviation).count();
    println!("{} checks: {} passed, {known} known deviation(s), {failed} failed", results.len(), results.len() - failed - known);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
