//! Bookkeeping for the acceptance run: each criterion prints one line and
//! the run fails if any criterion did.

use std::time::{Duration, Instant};

#[derive(Clone, Debug)]
pub struct Outcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

#[derive(Debug, Default)]
pub struct Scoreboard {
    filters: Vec<String>,
    outcomes: Vec<Outcome>,
}

impl Scoreboard {
    /// Positional command-line arguments select criteria by substring;
    /// flags (anything starting with `-`) are ignored.
    pub fn from_args() -> Self {
        let filters = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
        Self { filters, outcomes: Vec::new() }
    }

    pub fn selected(&self, name: &str) -> bool {
        self.filters.is_empty() || self.filters.iter().any(|f| name.contains(f.as_str()))
    }

    /// Runs `check` if selected and records its verdict. A panic inside
    /// `check` counts as a failure.
    pub fn run(&mut self, name: &str, check: impl FnOnce() -> (bool, String)) {
        if !self.selected(name) {
            return;
        }
        let start = Instant::now();
        let (passed, detail) = match std::panic::catch_unwind(std::panic::AssertUnwindSafe(check)) {
            Ok(v) => v,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panicked".into());
                (false, format!("panic: {msg}"))
            }
        };
        let outcome = Outcome { name: name.to_string(), passed, detail, elapsed: start.elapsed() };
        println!("{}", line(&outcome));
        self.outcomes.push(outcome);
    }

    pub fn outcomes(&self) -> &[Outcome] {
        &self.outcomes
    }

    pub fn all_passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }

    /// Prints the tally and exits non-zero when anything failed.
    pub fn finish(self) -> ! {
        let failed = self.outcomes.iter().filter(|o| !o.passed).count();
        println!("\nacceptance: {} passed, {failed} failed", self.outcomes.len() - failed);
        std::process::exit(i32::from(failed > 0));
    }
}

pub fn line(o: &Outcome) -> String {
    format!("{} {:<28} {:>7.1}s  {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.elapsed.as_secs_f64(), o.detail)
}
