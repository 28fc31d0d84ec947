//! Run reports. Everything except wall-clock planning time is recomputed
//! from the event log, so a saved log reproduces its report.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::atom::{Millis, Symbol};
use crate::eventlog::{Event, LogRecord};
use crate::protocol::Phase;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalReport {
    pub request_id: String,
    pub goal: String,
    pub requested_by: Symbol,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub submitted_at: Millis,
    /// `None` only if the log ends before the goal does.
    pub outcome: Option<Phase>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<Symbol>,
    pub replans: u32,
    pub plans: Vec<Vec<String>>,
    /// Wall-clock time of each planning call, in order.
    #[serde(default)]
    pub planning_ms: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completed_at: Option<Millis>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub goals: Vec<GoalReport>,
    /// Rejected submissions, as `code: message`.
    #[serde(default)]
    pub rejected: Vec<String>,
    pub sim_time_ms: Millis,
    #[serde(default)]
    pub time_limit_reached: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_log: Option<String>,
    #[serde(default)]
    pub verdicts: Vec<Verdict>,
}

impl RunReport {
    /// Rebuilds the goal table from a log.
    pub fn from_log(scenario: &str, seed: u64, records: &[LogRecord]) -> RunReport {
        let mut goals: Vec<GoalReport> = Vec::new();
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        let mut rejected = Vec::new();
        for r in records {
            match &r.event {
                Event::GoalSubmitted {
                    request_id,
                    goal,
                    requested_by,
                    text,
                } => {
                    index.insert(request_id.clone(), goals.len());
                    goals.push(GoalReport {
                        request_id: request_id.clone(),
                        goal: goal.clone(),
                        requested_by: requested_by.clone(),
                        text: text.clone(),
                        submitted_at: r.at,
                        outcome: None,
                        reason: None,
                        answer: None,
                        replans: 0,
                        plans: Vec::new(),
                        planning_ms: Vec::new(),
                        completed_at: None,
                    });
                }
                Event::GoalRejected { code, message, .. } => rejected.push(format!("{code}: {message}")),
                Event::PlanCreated { request_id, steps, .. } => {
                    if let Some(&i) = index.get(request_id) {
                        goals[i].plans.push(steps.clone());
                    }
                }
                Event::Replanning { request_id, count, .. } => {
                    if let Some(&i) = index.get(request_id) {
                        goals[i].replans = goals[i].replans.max(*count);
                    }
                }
                Event::Terminal {
                    request_id,
                    phase,
                    reason,
                    answer,
                } => {
                    if let Some(&i) = index.get(request_id) {
                        let g = &mut goals[i];
                        g.outcome = Some(*phase);
                        g.reason = reason.clone();
                        g.answer = answer.clone();
                        g.completed_at = Some(r.at);
                    }
                }
                _ => {}
            }
        }
        RunReport {
            scenario: scenario.to_string(),
            seed,
            goals,
            rejected,
            sim_time_ms: records.last().map_or(0, |r| r.at),
            time_limit_reached: false,
            event_log: None,
            verdicts: Vec::new(),
        }
    }

    pub fn goal(&self, request_id: &str) -> Option<&GoalReport> {
        self.goals.iter().find(|g| g.request_id == request_id)
    }

    pub fn attach_planning_ms(&mut self, timings: &BTreeMap<String, Vec<u64>>) {
        for g in &mut self.goals {
            if let Some(t) = timings.get(&g.request_id) {
                g.planning_ms = t.clone();
            }
        }
    }

    pub fn all_verdicts_pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    /// Goals that failed although nothing said they may.
    pub fn unexpected_failures<'a>(&'a self, expected_failures: &'a [String]) -> impl Iterator<Item = &'a GoalReport> {
        self.goals.iter().filter(move |g| {
            let failed = g.outcome != Some(Phase::Done) && g.outcome != Some(Phase::Cancelled);
            failed && !expected_failures.contains(&g.request_id)
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario {} (seed {})", self.scenario, self.seed);
        for g in &self.goals {
            let outcome = g.outcome.map_or("unfinished".to_string(), |p| p.to_string());
            let _ = write!(s, "  {} {} -> {}", g.request_id, g.goal, outcome);
            if let Some(a) = &g.answer {
                let _ = write!(s, " answer={a}");
            }
            if let Some(r) = &g.reason {
                let _ = write!(s, " ({r})");
            }
            let _ = write!(s, ", replans {}", g.replans);
            if let Some(max) = g.planning_ms.iter().max() {
                let _ = write!(s, ", planning {max} ms");
            }
            if let Some(t) = g.completed_at {
                let _ = write!(s, ", finished at {:.1} s", t as f64 / 1000.0);
            }
            s.push('\n');
        }
        for r in &self.rejected {
            let _ = writeln!(s, "  rejected: {r}");
        }
        if self.time_limit_reached {
            let _ = writeln!(s, "  stopped at the simulated time limit");
        }
        for v in &self.verdicts {
            let mark = if v.passed { "pass" } else { "FAIL" };
            let _ = writeln!(s, "  [{mark}] {}: {}", v.name, v.detail);
        }
        s
    }
}
