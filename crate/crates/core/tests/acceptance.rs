//! Acceptance suite: runs every criterion, prints one line each and exits
//! non-zero if any fails.

use std::process::ExitCode;

use xbatch::verify::{run, NAMES};

const SEED: u64 = 0;

fn main() -> ExitCode {
    let mut failed = Vec::new();
    for id in 1..=NAMES.len() as u8 {
        let outcome = run(id, SEED);
        println!("{}", outcome.line());
        if !outcome.passed {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", NAMES.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
