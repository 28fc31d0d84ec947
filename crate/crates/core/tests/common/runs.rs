//! Loading and running the shipped scenarios.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use icps::eventlog::{Event, LogRecord};
use icps::expect::Expectations;
use icps::harness::{self, RunConfig, RunOutcome};
use icps::report::Verdict;
use icps::sim::Scenario;

pub const SHIPPED: [&str; 4] = ["fetch_belt", "fetch_belt_no_replan", "search_person", "welcoming"];

pub fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

pub fn load(name: &str) -> Scenario {
    let path = scenarios_dir().join(format!("{name}.scenario"));
    Scenario::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn expectations(name: &str) -> Expectations {
    let path = scenarios_dir().join(format!("{name}.expect.toml"));
    Expectations::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub struct Timed {
    pub outcome: RunOutcome,
    pub wall: Duration,
}

pub fn run_scenario(scenario: Scenario, cfg: &RunConfig) -> Timed {
    let start = Instant::now();
    let outcome = harness::run(scenario, cfg).expect("scenario starts");
    Timed {
        outcome,
        wall: start.elapsed(),
    }
}

pub fn run(name: &str, cfg: &RunConfig) -> Timed {
    run_scenario(load(name), cfg)
}

/// Checks a finished run against an expectation file; `Err` lists the
/// failed verdicts.
pub fn verdicts(timed: &Timed, expect: &str) -> Result<Vec<Verdict>, String> {
    let e = expectations(expect);
    let out = &timed.outcome;
    let verdicts = e.check(out.log.records(), &out.report);
    let failed: Vec<String> = verdicts
        .iter()
        .filter(|v| !v.passed)
        .map(|v| format!("{}: {}", v.name, v.detail))
        .collect();
    if failed.is_empty() {
        Ok(verdicts)
    } else {
        Err(failed.join("; "))
    }
}

pub fn cancel_cfg(after_ms: i64) -> RunConfig {
    RunConfig {
        cancel_after: Some(after_ms),
        ..RunConfig::default()
    }
}

/// Index of the first record at or after `from` matching `pred`.
pub fn find_from(records: &[LogRecord], from: usize, pred: impl Fn(&Event) -> bool) -> Option<usize> {
    records.iter().enumerate().skip(from).find(|(_, r)| pred(&r.event)).map(|(i, _)| i)
}
