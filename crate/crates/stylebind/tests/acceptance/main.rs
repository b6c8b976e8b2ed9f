//! Acceptance suite: one pass/fail line per criterion.

mod criteria;
mod lab;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use criteria::*;
use lab::Lab;

pub type Check = Result<(bool, String), Box<dyn std::error::Error>>;

pub struct Criterion {
    number: usize,
    name: &'static str,
    limit: Option<Duration>,
    run: fn(&mut Lab) -> Check,
}

const CRITERIA: [Criterion; 12] = [
    Criterion { number: 1, name: "gradient correctness", limit: Some(Duration::from_secs(60)), run: c01_gradients },
    Criterion { number: 2, name: "schedule and forward process", limit: Some(Duration::from_secs(60)), run: c02_forward },
    Criterion { number: 3, name: "degenerate reductions", limit: None, run: c03_reductions },
    Criterion { number: 4, name: "component mixing", limit: Some(Duration::from_secs(60)), run: c04_mixing },
    Criterion { number: 5, name: "metric oracles", limit: Some(Duration::from_secs(120)), run: c05_metrics },
    Criterion { number: 6, name: "training efficacy", limit: Some(Duration::from_secs(15 * 60)), run: c06_efficacy },
    Criterion { number: 7, name: "reference composition", limit: Some(Duration::from_secs(45 * 60)), run: c07_composition },
    Criterion { number: 8, name: "curated versus generated aux", limit: None, run: c08_aux },
    Criterion { number: 9, name: "multi-token alignment", limit: None, run: c09_multi },
    Criterion { number: 10, name: "attention localization", limit: None, run: c10_attention },
    Criterion { number: 11, name: "partial-noising stylization", limit: None, run: c11_stylize },
    Criterion { number: 12, name: "determinism and formats", limit: None, run: c12_determinism },
];

fn main() {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut lab = Lab::new();
    let (mut failed, mut broken) = (0, 0);
    for c in &CRITERIA {
        if !only.is_empty() && !only.contains(&c.number) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| (c.run)(&mut lab)));
        let elapsed = start.elapsed();
        let (mut pass, mut detail) = match outcome {
            Ok(Ok((p, d))) => (p, d),
            Ok(Err(e)) => {
                broken += 1;
                (false, format!("error: {e}"))
            }
            Err(p) => {
                broken += 1;
                let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
                (false, format!("panic: {}", msg.unwrap_or_default()))
            }
        };
        if let Some(limit) = c.limit {
            if elapsed > limit {
                pass = false;
                broken += 1;
                detail.push_str(&format!("; over the {}s limit", limit.as_secs()));
            }
        }
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<30} {} ({:.1}s) {}",
            c.number,
            c.name,
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            detail
        );
    }
    if failed == 0 {
        return;
    }
    println!("{failed} criteria failed");
    // Errors, panics and time overruns always fail the target. A measured
    // FAIL verdict only does under STYLEBIND_ACCEPTANCE_STRICT.
    if broken > 0 || std::env::var_os("STYLEBIND_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
