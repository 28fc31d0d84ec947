//! Expectation files: assertions checked after the fact against an event
//! log and its report.
//!
//! Patterns are globs over the one-line rendering of each event
//! (`*` is any run of characters, `?` one character) and must match the
//! whole line.

use std::path::Path;

use regex::Regex;
use serde::Deserialize;
use thiserror::Error;

use crate::eventlog::LogRecord;
use crate::protocol::Phase;
use crate::report::{RunReport, Verdict};

#[derive(Debug, Error)]
pub enum ExpectError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("expectation file: {0}")]
    Parse(String),
    #[error("expectation `{name}`: {message}")]
    Invalid { name: String, message: String },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalExpectation {
    /// Request id; the first submitted goal when absent.
    #[serde(default)]
    pub request: Option<String>,
    #[serde(default)]
    pub outcome: Option<Phase>,
    #[serde(default)]
    pub replans: Option<u32>,
    #[serde(default)]
    pub answer: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Subsequence {
    pub name: String,
    pub patterns: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Count {
    pub name: String,
    pub pattern: String,
    #[serde(default)]
    pub equals: Option<usize>,
    #[serde(default)]
    pub min: Option<usize>,
    #[serde(default)]
    pub max: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Absence {
    pub name: String,
    /// Anchor; the check covers every record after its first match.
    pub after: String,
    pub forbid: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    PlanningMs,
    Replans,
    CompletedAtMs,
    SimTimeMs,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bound {
    pub name: String,
    pub metric: Metric,
    /// Restricts goal metrics to one request; all goals otherwise.
    #[serde(default)]
    pub request: Option<String>,
    #[serde(default)]
    pub less_than: Option<f64>,
    #[serde(default)]
    pub at_least: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectations {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub goal: Vec<GoalExpectation>,
    #[serde(default)]
    pub subsequence: Vec<Subsequence>,
    #[serde(default)]
    pub count: Vec<Count>,
    #[serde(default)]
    pub absence: Vec<Absence>,
    #[serde(default)]
    pub bound: Vec<Bound>,
}

/// Compiles a whole-line glob.
pub fn glob(pattern: &str) -> Result<Regex, regex::Error> {
    let mut re = String::from("^");
    for c in pattern.chars() {
        match c {
            '*' => re.push_str(".*"),
            '?' => re.push('.'),
            c => re.push_str(&regex::escape(c.encode_utf8(&mut [0; 4]))),
        }
    }
    re.push('$');
    Regex::new(&re)
}

impl Expectations {
    pub fn load(path: &Path) -> Result<Self, ExpectError> {
        let text = std::fs::read_to_string(path).map_err(|source| ExpectError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ExpectError> {
        let e: Expectations = toml::from_str(text).map_err(|e| ExpectError::Parse(e.to_string()))?;
        e.validate()?;
        Ok(e)
    }

    fn validate(&self) -> Result<(), ExpectError> {
        let invalid = |name: &str, message: &str| ExpectError::Invalid {
            name: name.to_string(),
            message: message.to_string(),
        };
        for s in &self.subsequence {
            if s.patterns.is_empty() {
                return Err(invalid(&s.name, "needs at least one pattern"));
            }
        }
        for c in &self.count {
            if c.equals.is_none() && c.min.is_none() && c.max.is_none() {
                return Err(invalid(&c.name, "needs equals, min or max"));
            }
        }
        for b in &self.bound {
            if b.less_than.is_none() && b.at_least.is_none() {
                return Err(invalid(&b.name, "needs less_than or at_least"));
            }
        }
        Ok(())
    }

    /// Requests whose expected outcome is failure.
    pub fn expected_failures(&self, report: &RunReport) -> Vec<String> {
        self.goal
            .iter()
            .filter(|g| g.outcome == Some(Phase::Failed))
            .filter_map(|g| resolve(report, g.request.as_deref()).map(|r| r.request_id.clone()))
            .collect()
    }

    pub fn check(&self, records: &[LogRecord], report: &RunReport) -> Vec<Verdict> {
        let lines: Vec<String> = records.iter().map(LogRecord::render).collect();
        let mut out = Vec::new();
        for g in &self.goal {
            out.push(check_goal(g, report));
        }
        for s in &self.subsequence {
            out.push(with_patterns(&s.name, &s.patterns, |res| check_subsequence(&res, &lines)));
        }
        for c in &self.count {
            out.push(with_patterns(&c.name, std::slice::from_ref(&c.pattern), |res| {
                let n = lines.iter().filter(|l| res[0].is_match(l)).count();
                let ok = c.equals.is_none_or(|e| n == e)
                    && c.min.is_none_or(|m| n >= m)
                    && c.max.is_none_or(|m| n <= m);
                (ok, format!("{n} matching events"))
            }));
        }
        for a in &self.absence {
            let pats = [a.after.clone(), a.forbid.clone()];
            out.push(with_patterns(&a.name, &pats, |res| {
                let Some(anchor) = lines.iter().position(|l| res[0].is_match(l)) else {
                    return (false, format!("anchor `{}` never occurred", a.after));
                };
                match lines[anchor + 1..].iter().find(|l| res[1].is_match(l)) {
                    Some(l) => (false, format!("found `{l}` after `{}`", lines[anchor])),
                    None => (true, format!("nothing after `{}`", lines[anchor])),
                }
            }));
        }
        for b in &self.bound {
            out.push(check_bound(b, report));
        }
        out
    }
}

fn resolve<'a>(report: &'a RunReport, request: Option<&str>) -> Option<&'a crate::report::GoalReport> {
    match request {
        Some(id) => report.goal(id),
        None => report.goals.first(),
    }
}

fn check_goal(g: &GoalExpectation, report: &RunReport) -> Verdict {
    let label = g.request.clone().unwrap_or_else(|| "first goal".into());
    let mut name = format!("goal {label}");
    let Some(goal) = resolve(report, g.request.as_deref()) else {
        return Verdict {
            name,
            passed: false,
            detail: "no such goal in the log".into(),
        };
    };
    let mut problems = Vec::new();
    let mut facts = Vec::new();
    let outcome = goal.outcome.map_or("unfinished".to_string(), |p| p.to_string());
    if let Some(want) = g.outcome {
        name.push_str(&format!(" {want}"));
        if goal.outcome != Some(want) {
            problems.push(format!("outcome {outcome}, expected {want}"));
        }
    }
    facts.push(format!("outcome {outcome}"));
    if let Some(want) = g.replans {
        name.push_str(&format!(" replans={want}"));
        if goal.replans != want {
            problems.push(format!("{} replans, expected {want}", goal.replans));
        }
    }
    facts.push(format!("replans {}", goal.replans));
    if let Some(want) = &g.answer {
        name.push_str(&format!(" answer={want}"));
        if goal.answer.as_deref() != Some(want.as_str()) {
            problems.push(format!("answer {:?}, expected {want}", goal.answer));
        }
    }
    Verdict {
        name,
        passed: problems.is_empty(),
        detail: if problems.is_empty() {
            facts.join(", ")
        } else {
            problems.join("; ")
        },
    }
}

fn with_patterns(name: &str, patterns: &[String], f: impl FnOnce(Vec<Regex>) -> (bool, String)) -> Verdict {
    let compiled: Result<Vec<Regex>, _> = patterns.iter().map(|p| glob(p)).collect();
    let (passed, detail) = match compiled {
        Ok(res) => f(res),
        Err(e) => (false, format!("bad pattern: {e}")),
    };
    Verdict {
        name: name.to_string(),
        passed,
        detail,
    }
}

fn check_subsequence(res: &[Regex], lines: &[String]) -> (bool, String) {
    let mut at = 0;
    for (i, re) in res.iter().enumerate() {
        match lines[at..].iter().position(|l| re.is_match(l)) {
            Some(offset) => at += offset + 1,
            None => {
                return (
                    false,
                    format!("pattern {} of {} (`{}`) not found in order", i + 1, res.len(), re.as_str()),
                )
            }
        }
    }
    (true, format!("{} patterns matched in order", res.len()))
}

fn check_bound(b: &Bound, report: &RunReport) -> Verdict {
    let goals: Vec<_> = match &b.request {
        Some(id) => report.goal(id).into_iter().collect(),
        None => report.goals.iter().collect(),
    };
    let values: Vec<f64> = match b.metric {
        Metric::PlanningMs => goals.iter().flat_map(|g| g.planning_ms.iter().map(|&v| v as f64)).collect(),
        Metric::Replans => goals.iter().map(|g| g.replans as f64).collect(),
        Metric::CompletedAtMs => goals.iter().filter_map(|g| g.completed_at.map(|v| v as f64)).collect(),
        Metric::SimTimeMs => vec![report.sim_time_ms as f64],
    };
    let verdict = |passed, detail| Verdict {
        name: b.name.clone(),
        passed,
        detail,
    };
    if values.is_empty() {
        return verdict(false, "no values recorded".into());
    }
    let max = values.iter().copied().fold(f64::MIN, f64::max);
    let min = values.iter().copied().fold(f64::MAX, f64::min);
    let mut problems = Vec::new();
    if let Some(limit) = b.less_than {
        if max >= limit {
            problems.push(format!("max {max} is not below {limit}"));
        }
    }
    if let Some(limit) = b.at_least {
        if min < limit {
            problems.push(format!("min {min} is below {limit}"));
        }
    }
    if problems.is_empty() {
        verdict(true, format!("{} values, max {max}", values.len()))
    } else {
        verdict(false, problems.join("; "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eventlog::{Event, EventLog};

    fn log() -> EventLog {
        let mut log = EventLog::new();
        log.push(
            0,
            Event::GoalSubmitted {
                request_id: "r1".into(),
                goal: "holding(markus,belt)".into(),
                requested_by: "markus".into(),
                text: None,
            },
        );
        log.push(
            0,
            Event::PlanCreated {
                request_id: "r1".into(),
                revision: 0,
                steps: vec!["acquire_control(johnny)".into(), "move(johnny,lobby,office)".into()],
            },
        );
        log.push(5, Event::Cancelled { request_id: "r1".into() });
        log.push(
            5,
            Event::Terminal {
                request_id: "r1".into(),
                phase: Phase::Cancelled,
                reason: None,
                answer: None,
            },
        );
        log
    }

    #[test]
    fn globs_match_whole_lines_literally() {
        let re = glob("plan_created r1 * move(johnny,*)*").unwrap();
        assert!(re.is_match("plan_created r1 0 acquire_control(johnny) move(johnny,lobby,office)"));
        assert!(!re.is_match("xplan_created r1 0 move(johnny,a)"));
        assert!(glob("a?c").unwrap().is_match("abc"));
        assert!(!glob("a.c").unwrap().is_match("abc"));
    }

    #[test]
    fn each_assertion_kind() {
        let log = log();
        let report = RunReport::from_log("t", 0, log.records());
        let e = Expectations::parse(
            r#"
            [[goal]]
            outcome = "cancelled"
            replans = 0

            [[subsequence]]
            name = "plan then cancel"
            patterns = ["plan_created r1 *", "cancelled r1"]

            [[subsequence]]
            name = "wrong order"
            patterns = ["cancelled r1", "plan_created r1 *"]

            [[count]]
            name = "no replan"
            pattern = "replanning *"
            equals = 0

            [[absence]]
            name = "quiet after cancel"
            after = "cancelled r1"
            forbid = "outbound * command *"

            [[bound]]
            name = "planning"
            metric = "planning_ms"
            less_than = 2000
            "#,
        )
        .unwrap();
        let v = e.check(log.records(), &report);
        let passed: Vec<bool> = v.iter().map(|v| v.passed).collect();
        assert_eq!(passed, [true, true, false, true, true, false], "{v:#?}");
        assert_eq!(v[5].detail, "no values recorded");
    }

    #[test]
    fn malformed_files_are_config_errors() {
        assert!(matches!(Expectations::parse("[[count]]\nname='x'\npattern='*'"), Err(ExpectError::Invalid { .. })));
        assert!(matches!(Expectations::parse("bogus = 1"), Err(ExpectError::Parse(_))));
    }
}
