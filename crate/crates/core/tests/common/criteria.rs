//! One check per acceptance criterion. Each returns a one-line detail on
//! success and the reason on failure.

use std::time::Duration;

use icps::atom::Atom;
use icps::eventlog::{Event, LogRecord};
use icps::harness::RunConfig;
use icps::knowledge::{Fact, Freshness, FreshnessWindows, KnowledgeStore};
use icps::protocol::{Kind, Outcome, Phase};

use super::gen::{check_malformed_corpus, round_trip_every_kind};
use super::leases::lease_stress;
use super::oracle::compare_with_oracle;
use super::runs::{cancel_cfg, find_from, run, verdicts, Timed, SHIPPED};

pub type Check = Result<String, String>;

/// The reference fetch narrative in nine beats and the plan step each one
/// becomes. Dispatching the robot is part of taking control, so two beats
/// share the first step.
pub const NARRATIVE: [(&str, &str); 9] = [
    ("take control of the robot", "acquire_control(johnny)"),
    ("dispatch the robot", "acquire_control(johnny)"),
    ("robot drives to the office", "move(johnny,lobby,secretary_office)"),
    ("robot engages the key holder", "locate_person(johnny,andrea,secretary_office)"),
    ("key holder fetches the item", "ask_fetch(johnny,andrea,smart_safety_belt,cabinet,secretary_office)"),
    ("key holder hands it to the robot", "receive_object(johnny,andrea,smart_safety_belt,secretary_office)"),
    ("robot drives back to the lobby", "move(johnny,secretary_office,lobby)"),
    ("robot hands it to the requester", "handover_object(johnny,markus,smart_safety_belt,lobby)"),
    ("give control back", "release_control(johnny)"),
];

pub fn golden_steps() -> Vec<&'static str> {
    let mut steps: Vec<&str> = NARRATIVE.iter().map(|(_, s)| *s).collect();
    steps.dedup();
    steps
}

const WALL_LIMIT: Duration = Duration::from_secs(10);

fn plans_of<'a>(records: &'a [LogRecord], request: &str) -> Vec<(u32, &'a [String])> {
    records
        .iter()
        .filter_map(|r| match &r.event {
            Event::PlanCreated {
                request_id,
                revision,
                steps,
            } if request_id == request => Some((*revision, steps.as_slice())),
            _ => None,
        })
        .collect()
}

pub fn golden_fetch() -> Check {
    let timed = run("fetch_belt_no_replan", &RunConfig::default());
    verdicts(&timed, "fetch_belt_no_replan")?;
    let records = timed.outcome.log.records();
    let golden = golden_steps();

    let plans = plans_of(records, "r1");
    let [(0, steps)] = plans.as_slice() else {
        return Err(format!("expected exactly one plan, got {}", plans.len()));
    };
    if *steps != golden {
        return Err(format!("plan was {steps:?}"));
    }
    // the steps complete in narrative order
    let mut at = 0;
    for (i, want) in golden.iter().enumerate() {
        at = find_from(records, at, |e| {
            matches!(e, Event::StepFinished { request_id, step, action, outcome: Outcome::Success }
                if request_id == "r1" && *step == i && action == want)
        })
        .ok_or_else(|| format!("step {i} {want} never finished in order"))?;
    }
    let percents: Vec<f64> = records
        .iter()
        .filter_map(|r| match &r.event {
            Event::Progress { request_id, percent, .. } if request_id == "r1" => Some(*percent),
            _ => None,
        })
        .collect();
    if percents.windows(2).any(|w| w[1] < w[0]) || percents.last() != Some(&100.0) {
        return Err(format!("progress not monotone to 100: {percents:?}"));
    }
    let goal = timed.outcome.report.goal("r1").ok_or("no report for r1")?;
    if goal.outcome != Some(Phase::Done) {
        return Err(format!("ended {:?}", goal.outcome));
    }
    if timed.wall >= WALL_LIMIT {
        return Err(format!("took {:?} of wall time", timed.wall));
    }
    Ok(format!(
        "{} plan steps for {} narrative beats, done at {} s simulated, {} ms wall",
        golden.len(),
        NARRATIVE.len(),
        goal.completed_at.unwrap_or_default() / 1000,
        timed.wall.as_millis()
    ))
}

pub fn planning_latency() -> Check {
    let mut all = Vec::new();
    for name in SHIPPED {
        let timed = run(name, &RunConfig::default());
        for g in &timed.outcome.report.goals {
            all.extend(g.planning_ms.iter().map(|ms| (name, *ms)));
        }
    }
    if all.is_empty() {
        return Err("no planning times recorded".into());
    }
    let (name, worst) = *all.iter().max_by_key(|(_, ms)| *ms).expect("non-empty");
    if worst >= 2000 {
        return Err(format!("{name} took {worst} ms to plan"));
    }
    Ok(format!("{} plans, slowest {worst} ms ({name})", all.len()))
}

pub fn replan() -> Check {
    let timed = run("fetch_belt", &RunConfig::default());
    verdicts(&timed, "fetch_belt")?;
    let records = timed.outcome.log.records();
    let goal = timed.outcome.report.goal("r1").ok_or("no report for r1")?;
    if goal.outcome != Some(Phase::Done) || goal.replans != 1 {
        return Err(format!("ended {:?} after {} replans", goal.outcome, goal.replans));
    }
    let retracted = find_from(records, 0, |e| {
        matches!(e, Event::SightingRetracted { request_id, person, room }
            if request_id == "r1" && person == "andrea" && room == "secretary_office")
    })
    .ok_or("andrea's sighting was never retracted")?;
    let replanned = find_from(records, retracted, |e| {
        matches!(e, Event::PlanCreated { request_id, revision: 1, steps }
            if request_id == "r1" && steps.iter().any(|s| s.starts_with("ask_fetch(johnny,sarah,")))
    })
    .ok_or("no plan asking sarah after the retraction")?;
    let mentions_andrea = records[replanned..].iter().any(|r| match &r.event {
        Event::PlanCreated { steps, .. } => steps.iter().any(|s| s.contains("andrea")),
        _ => false,
    });
    if mentions_andrea {
        return Err("a later plan still involves andrea".into());
    }
    Ok(format!(
        "done with 1 replan; retraction at record {}, plan for sarah at record {}",
        records[retracted].seq, records[replanned].seq
    ))
}

pub fn planner_oracle(instances: usize) -> Check {
    let stats = compare_with_oracle(0x1CB5, instances)?;
    Ok(format!(
        "{} of {} instances equal the oracle optimum ({} need 4+ steps, longest {})",
        stats.compared, stats.compared, stats.nontrivial, stats.longest
    ))
}

pub fn freshness() -> Check {
    let w = FreshnessWindows::default();
    let table = [
        (0, Freshness::Active),
        (300_000, Freshness::Active),
        (300_001, Freshness::Recent),
        (301_000, Freshness::Recent),
        (1_800_000, Freshness::Recent),
        (1_800_001, Freshness::Expired),
        (1_801_000, Freshness::Expired),
    ];
    let mut k = KnowledgeStore::new(w);
    k.assert_fact(Fact::asserted(Atom::person_at("andrea", "office"), 0, "test"))
        .map_err(|e| e.to_string())?;
    for (age, want) in table {
        let got = w.classify(age);
        if got != want {
            return Err(format!("age {age} ms classified {got:?}, want {want:?}"));
        }
        let snap = k.snapshot(age);
        if snap.freshness("andrea") != Some(want) || snap.person_room("andrea").is_some() == (want == Freshness::Expired) {
            return Err(format!("snapshot at {age} ms disagrees"));
        }
    }
    Ok(format!("{} boundary ages, 300 s and 1800 s inclusive", table.len()))
}

pub fn determinism() -> Check {
    let mut runs: Vec<(String, RunConfig)> = SHIPPED.iter().map(|n| (n.to_string(), RunConfig::default())).collect();
    runs.push(("fetch_belt_no_replan".into(), cancel_cfg(20_000)));
    runs.push((
        "fetch_belt".into(),
        RunConfig {
            seed: Some(7),
            ..RunConfig::default()
        },
    ));
    let mut records = 0;
    for (name, cfg) in &runs {
        let a = run(name, cfg).outcome.log.to_ndjson();
        let b = run(name, cfg).outcome.log.to_ndjson();
        if a != b {
            let line = a.lines().zip(b.lines()).position(|(x, y)| x != y).unwrap_or(0);
            return Err(format!("{name}: logs differ from line {}", line + 1));
        }
        records += a.lines().count();
    }
    Ok(format!("{} runs byte-identical on replay ({records} records)", runs.len()))
}

/// Cancels at `after_ms` and checks that no command follows and the lease
/// is given back.
pub fn cancel_at(after_ms: i64) -> Result<Timed, String> {
    let timed = run("fetch_belt_no_replan", &cancel_cfg(after_ms));
    let records = timed.outcome.log.records();
    let cancelled = find_from(records, 0, |e| matches!(e, Event::Cancelled { request_id } if request_id == "r1"))
        .ok_or_else(|| format!("cancel at {after_ms} ms: r1 was never cancelled"))?;
    if let Some(r) = records[cancelled..]
        .iter()
        .find(|r| matches!(r.event, Event::Outbound { kind: Kind::Command, .. }))
    {
        return Err(format!("cancel at {after_ms} ms: command after cancellation: {}", r.render()));
    }
    find_from(records, cancelled, |e| matches!(e, Event::LeaseReleased { request_id, .. } if request_id == "r1"))
        .ok_or_else(|| format!("cancel at {after_ms} ms: no lease release after cancellation"))?;
    let goal = timed.outcome.report.goal("r1").ok_or("no report for r1")?;
    if goal.outcome != Some(Phase::Cancelled) {
        return Err(format!("cancel at {after_ms} ms: ended {:?}", goal.outcome));
    }
    Ok(timed)
}

pub const CANCEL_OFFSETS_MS: [i64; 8] = [1_000, 5_000, 14_000, 20_000, 33_000, 47_000, 64_000, 80_000];

pub fn cancel_safety() -> Check {
    for after in CANCEL_OFFSETS_MS {
        cancel_at(after)?;
    }
    let timed = cancel_at(20_000)?;
    verdicts(&timed, "cancel")?;
    Ok(format!(
        "{} cancellation points: no command afterwards, lease released each time",
        CANCEL_OFFSETS_MS.len()
    ))
}

pub fn lease_exclusivity(runs: u64) -> Check {
    let stats = lease_stress(runs)?;
    if stats.acquired < runs as usize {
        return Err(format!("only {} leases granted over {runs} runs", stats.acquired));
    }
    Ok(format!(
        "{runs} randomized runs: {} grants, {} releases, {} commands, no overlap",
        stats.acquired, stats.released, stats.commands
    ))
}

pub fn protocol_round_trip(cases_per_kind: u32) -> Check {
    let envelopes = round_trip_every_kind(cases_per_kind)?;
    let corpus = check_malformed_corpus()?;
    Ok(format!(
        "{envelopes} envelopes over {} kinds round-trip, {corpus} malformed lines rejected with structured errors",
        Kind::ALL.len()
    ))
}
