//! Runs every acceptance criterion and prints one pass/fail line each.

use std::process::ExitCode;
use std::time::Instant;

use dyadica::verify::{verify_all, VerifyConfig};

fn main() -> ExitCode {
    let cfg = VerifyConfig::default();
    let t = Instant::now();
    let report = verify_all(&cfg);
    for c in &report.criteria {
        println!("{}  [{:.1}s]", c.line(), c.elapsed_ms as f64 / 1000.0);
    }
    println!("acceptance: {} in {:.1}s, report hash {}", if report.passed() { "all passed" } else { "FAILED" }, t.elapsed().as_secs_f64(), report.hash());
    if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
