//! Lease invariants replayed from an event log, and randomized runs that
//! exercise them.

use std::collections::{BTreeMap, BTreeSet};

use icps::eventlog::{Event, LogRecord};
use icps::harness::RunConfig;
use icps::protocol::{Kind, PersonRequest, Phase};
use icps::sim::scenario::{EntitySpec, Response};
use icps::sim::TimelineItem;
use icps::entity::EntityKind;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::runs::{load, run_scenario, Timed};

#[derive(Debug, Default, Clone, Copy)]
pub struct LeaseStats {
    pub acquired: usize,
    pub released: usize,
    pub commands: usize,
}

impl std::ops::AddAssign for LeaseStats {
    fn add_assign(&mut self, o: Self) {
        self.acquired += o.acquired;
        self.released += o.released;
        self.commands += o.commands;
    }
}

/// Replays lease events and checks:
/// - an entity belongs to at most one live lease;
/// - releases name a live lease, its request and entities it holds;
/// - every command goes to an entity leased by the command's request;
/// - a request holds nothing once it is terminal;
/// - nothing is held at the end of the log.
pub fn check_lease_log(records: &[LogRecord]) -> Result<LeaseStats, String> {
    let mut holder: BTreeMap<&str, (&str, &str)> = BTreeMap::new();
    let mut live: BTreeMap<&str, (&str, BTreeSet<&str>)> = BTreeMap::new();
    let mut seen_leases: BTreeSet<&str> = BTreeSet::new();
    let mut stats = LeaseStats::default();
    for r in records {
        let at = || format!("record {} at {} ms", r.seq, r.at);
        match &r.event {
            Event::LeaseAcquired {
                lease_id,
                request_id,
                entities,
            } => {
                if !seen_leases.insert(lease_id) {
                    return Err(format!("{}: lease id {lease_id} reused", at()));
                }
                if entities.is_empty() {
                    return Err(format!("{}: lease {lease_id} names no entity", at()));
                }
                for e in entities {
                    if let Some((other, req)) = holder.get(e.as_str()) {
                        return Err(format!(
                            "{}: {e} granted to {request_id} while held by {other} for {req}",
                            at()
                        ));
                    }
                    holder.insert(e, (lease_id, request_id));
                }
                live.insert(lease_id, (request_id, entities.iter().map(String::as_str).collect()));
                stats.acquired += 1;
            }
            Event::LeaseReleased {
                lease_id,
                request_id,
                entities,
            } => {
                let Some((owner, held)) = live.get_mut(lease_id.as_str()) else {
                    return Err(format!("{}: release of unknown lease {lease_id}", at()));
                };
                if owner != request_id {
                    return Err(format!("{}: {request_id} released {lease_id} owned by {owner}", at()));
                }
                for e in entities {
                    if !held.remove(e.as_str()) {
                        return Err(format!("{}: {lease_id} released {e}, which it does not hold", at()));
                    }
                    holder.remove(e.as_str());
                }
                if held.is_empty() {
                    live.remove(lease_id.as_str());
                }
                stats.released += 1;
            }
            Event::Outbound {
                to,
                kind: Kind::Command,
                detail,
                ..
            } => {
                let request = detail.split_whitespace().next().unwrap_or_default();
                match holder.get(to.as_str()) {
                    Some((_, req)) if *req == request => {}
                    Some((lease, req)) => {
                        return Err(format!(
                            "{}: command for {request} sent to {to}, which {lease} holds for {req}",
                            at()
                        ))
                    }
                    None => return Err(format!("{}: command for {request} sent to unleased {to}", at())),
                }
                stats.commands += 1;
            }
            Event::Terminal { request_id, phase, .. } => {
                debug_assert!(phase.is_terminal());
                if let Some((lease, _)) = live.iter().find(|(_, (req, _))| req == request_id) {
                    return Err(format!("{}: {request_id} ended {phase} still holding {lease}", at()));
                }
            }
            _ => {}
        }
    }
    if let Some((lease, (req, held))) = live.iter().next() {
        return Err(format!("log ends with {lease} of {req} holding {held:?}"));
    }
    Ok(stats)
}

const GOALS: [(&str, Option<&str>, Option<&str>); 6] = [
    ("I want the smart safety belt", Some("markus"), Some("smart_lobby")),
    ("bring the smart safety belt to markus", None, None),
    ("where is sarah", Some("markus"), None),
    ("where is andrea", Some("markus"), None),
    ("bring me the smart safety belt", Some("markus"), None),
    ("guide markus to the corridor", None, None),
];

/// A randomized variant of the fetch scenario: a second robot, random
/// helper answers, random goals and cancellations, and sometimes a robot
/// that falls silent mid-run.
pub fn stress_run(seed: u64) -> Timed {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scenario = load("fetch_belt");
    scenario.name = format!("lease_stress_{seed}");
    scenario.timeline.clear();
    scenario.entities.push(EntitySpec {
        id: "bobby".into(),
        kind: EntityKind::MobileRobot,
        room: ["corridor", "secretary_office", "lobby"].choose(&mut rng).unwrap().to_string(),
        voice_label: "Bobby".into(),
        capabilities: None,
        silent_after_s: None,
    });
    if rng.random_bool(0.3) {
        let robot = ["johnny", "bobby"].choose(&mut rng).unwrap();
        let when = rng.random_range(5.0..200.0);
        for e in scenario.entities.iter_mut().filter(|e| e.id == *robot) {
            e.silent_after_s = Some(when);
        }
    }
    for p in scenario.persons.iter_mut().filter(|p| p.id == "sarah" || p.id == "andrea") {
        let answer = *[Response::Accept, Response::Accept, Response::Decline, Response::Ignore]
            .choose(&mut rng)
            .unwrap();
        p.responses.insert(PersonRequest::AskFetch, answer);
    }
    if rng.random_bool(0.5) {
        for p in scenario.persons.iter_mut().filter(|p| p.id == "andrea") {
            p.schedule[0].room = "secretary_office".into();
        }
    }

    let mut goals = Vec::new();
    for _ in 0..rng.random_range(2..=5) {
        let (text, speaker, via) = *GOALS.choose(&mut rng).unwrap();
        goals.push(TimelineItem {
            at_s: rng.random_range(1.0..240.0f64).round(),
            goal: Some(text.into()),
            speaker: speaker.map(Into::into),
            via: via.map(Into::into),
            request_id: None,
            cancel: None,
            answer: None,
        });
    }
    for _ in 0..rng.random_range(0..=2) {
        goals.push(TimelineItem {
            at_s: rng.random_range(1.0..300.0f64).round(),
            goal: None,
            speaker: None,
            via: None,
            request_id: None,
            cancel: Some(String::new()),
            answer: None,
        });
    }
    let cfg = RunConfig {
        seed: Some(seed),
        max_sim_ms: 900_000,
        goals,
        ..RunConfig::default()
    };
    run_scenario(scenario, &cfg)
}

/// Runs `runs` randomized scenarios and checks every log.
pub fn lease_stress(runs: u64) -> Result<LeaseStats, String> {
    let mut total = LeaseStats::default();
    for seed in 0..runs {
        let timed = stress_run(seed);
        let out = &timed.outcome;
        let stats = check_lease_log(out.log.records()).map_err(|e| format!("seed {seed}: {e}"))?;
        for g in &out.report.goals {
            if !g.outcome.is_some_and(Phase::is_terminal) {
                return Err(format!("seed {seed}: {} never finished", g.request_id));
            }
        }
        total += stats;
    }
    Ok(total)
}
