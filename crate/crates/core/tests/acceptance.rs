//! Prints one PASS/FAIL line per acceptance criterion.
//!
//! Criteria listed in `KNOWN_FAILURES` are reported as FAIL without failing
//! the target (see the notes in the README); any other failure, or a known
//! failure that starts passing, exits nonzero so the list stays current.

use bktrg::verify::run_all;

const KNOWN_FAILURES: [u8; 2] = [7, 8];

fn main() {
    let reports = run_all();
    let mut unexpected = Vec::new();
    for r in &reports {
        println!("{}", r.line());
        for c in r.checks.iter().filter(|c| c.informational) {
            println!("    info: {} = {:.6e}", c.name, c.value);
        }
        if r.pass == KNOWN_FAILURES.contains(&r.id) {
            unexpected.push(r.id);
        }
    }
    let passed = reports.iter().filter(|r| r.pass).count();
    println!("acceptance: {passed}/{} criteria pass", reports.len());
    if !unexpected.is_empty() {
        eprintln!("unexpected outcome for criteria {unexpected:?}");
        std::process::exit(1);
    }
}
