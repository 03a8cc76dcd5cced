//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Set `ACCEPTANCE_ONLY=3,4` to run a subset.

mod accounting;
mod caspred;
mod cli;
mod gradient;
mod metrics;
mod protocol;
mod structural;
mod synthetic_learning;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

/// `Ok` carries a summary of what was measured, `Err` the reason for failure.
pub type Outcome = Result<String, String>;

fn main() {
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "gradient suite", gradient::run),
        (2, "structural identities", structural::run),
        (3, "metric oracles", metrics::run),
        (4, "stream accounting", accounting::run),
        (5, "exogenous signal beats static", synthetic_learning::exogenous),
        (6, "ablation ordering", synthetic_learning::ablation),
        (7, "observation-window trend", synthetic_learning::observation_trend),
        (8, "training protocol", protocol::run),
        (9, "baseline feature exactness", caspred::run),
        (10, "end-to-end CLI", cli::run),
    ];
    let mut failed = 0;
    for (id, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {id:>2} {name}: PASS ({secs:.1}s) {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} {name}: FAIL ({secs:.1}s) {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
