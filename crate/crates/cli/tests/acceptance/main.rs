//! Acceptance criteria, one pass/fail line each.
//!
//! `cargo test -p recipegen-cli --test acceptance [-- <name filter>...]`

mod bleu;
mod determinism;
mod gradients;
mod memorization;
mod prep;
mod sampling;
mod service;

use std::any::Any;
use std::panic;
use std::time::Instant;

/// `Ok(detail)` on success, `Err(reason)` on the first violated condition.
pub type Outcome = Result<String, String>;

#[macro_export]
macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

/// Converts any error into the string failure of an [`Outcome`].
pub fn fail<E: std::fmt::Display>(what: &str) -> impl FnOnce(E) -> String + '_ {
    move |e| format!("{what}: {e}")
}

const CRITERIA: [(&str, fn() -> Outcome); 7] = [
    ("gradient-fidelity", gradients::run),
    ("bleu-oracle", bleu::run),
    ("preprocessing-exactness", prep::run),
    ("sampling-statistics", sampling::run),
    ("service-contract", service::run),
    ("determinism", determinism::run),
    ("memorization", memorization::run),
];

fn panic_text(p: Box<dyn Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panicked".into())
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let (mut passed, mut failed) = (0, 0);
    for (name, check) in CRITERIA {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t = Instant::now();
        let outcome = panic::catch_unwind(check).unwrap_or_else(|p| Err(format!("panic: {}", panic_text(p))));
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => {
                passed += 1;
                println!("PASS {name}: {detail} [{secs:.1}s]");
            }
            Err(reason) => {
                failed += 1;
                println!("FAIL {name}: {reason} [{secs:.1}s]");
            }
        }
    }
    println!("acceptance: {passed} passed, {failed} failed");
    if failed > 0 {
        std::process::exit(1);
    }
}
