//! Control leases stay exclusive under randomized goals, cancellations,
//! refusals and robots dropping off.

mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::criteria::lease_exclusivity;
use common::leases::check_lease_log;
use icps::entity::{EntityDescriptor, EntityKind, EntityManager, LivenessConfig};
use icps::eventlog::{Event, LogRecord};
use icps::protocol::Kind;
use proptest::prelude::*;

#[test]
fn randomized_runs_keep_leases_exclusive() {
    println!("{}", lease_exclusivity(60).unwrap());
}

fn rec(seq: u64, event: Event) -> LogRecord {
    LogRecord { seq, at: seq as i64, event }
}

fn acquired(lease: &str, req: &str, entities: &[&str]) -> Event {
    Event::LeaseAcquired {
        lease_id: lease.into(),
        request_id: req.into(),
        entities: entities.iter().map(|s| s.to_string()).collect(),
    }
}

fn released(lease: &str, req: &str, entities: &[&str]) -> Event {
    Event::LeaseReleased {
        lease_id: lease.into(),
        request_id: req.into(),
        entities: entities.iter().map(|s| s.to_string()).collect(),
    }
}

fn command(to: &str, req: &str) -> Event {
    Event::Outbound {
        to: to.into(),
        kind: Kind::Command,
        msg_id: "b1".into(),
        detail: format!("{req} c1 move(x)"),
    }
}

#[test]
fn checker_catches_violations() {
    let bad: Vec<(&str, Vec<Event>)> = vec![
        ("double grant", vec![acquired("l1", "r1", &["johnny"]), acquired("l2", "r2", &["johnny"])]),
        ("command without lease", vec![command("johnny", "r1")]),
        ("command for another request", vec![acquired("l1", "r1", &["johnny"]), command("johnny", "r2")]),
        ("release of unknown lease", vec![released("l9", "r1", &["johnny"])]),
        ("release by non-owner", vec![acquired("l1", "r1", &["johnny"]), released("l1", "r2", &["johnny"])]),
        ("never released", vec![acquired("l1", "r1", &["johnny"])]),
        (
            "terminal while holding",
            vec![
                acquired("l1", "r1", &["johnny"]),
                Event::Terminal {
                    request_id: "r1".into(),
                    phase: icps::protocol::Phase::Done,
                    reason: None,
                    answer: None,
                },
                released("l1", "r1", &["johnny"]),
            ],
        ),
    ];
    for (name, events) in bad {
        let records: Vec<LogRecord> = events.into_iter().enumerate().map(|(i, e)| rec(i as u64, e)).collect();
        assert!(check_lease_log(&records).is_err(), "{name}");
    }
    let good: Vec<LogRecord> = [
        acquired("l1", "r1", &["bobby", "johnny"]),
        command("johnny", "r1"),
        released("l1", "r1", &["bobby"]),
        acquired("l2", "r2", &["bobby"]),
        command("bobby", "r2"),
        released("l1", "r1", &["johnny"]),
        released("l2", "r2", &["bobby"]),
    ]
    .into_iter()
    .enumerate()
    .map(|(i, e)| rec(i as u64, e))
    .collect();
    let stats = check_lease_log(&good).unwrap();
    assert_eq!((stats.acquired, stats.released, stats.commands), (2, 3, 2));
}

#[derive(Debug, Clone)]
enum Op {
    Acquire(u8, Vec<u8>),
    Release(u8),
    ReleaseSome(u8, Vec<u8>),
    Drop(u8),
    Revive(u8),
}

const ROBOTS: [&str; 4] = ["ada", "bob", "cy", "dot"];

fn op() -> impl Strategy<Value = Op> {
    let ids = prop::collection::vec(0u8..4, 1..4);
    prop_oneof![
        (0u8..5, ids.clone()).prop_map(|(r, e)| Op::Acquire(r, e)),
        (0u8..8).prop_map(Op::Release),
        (0u8..8, ids).prop_map(|(l, e)| Op::ReleaseSome(l, e)),
        (0u8..4).prop_map(Op::Drop),
        (0u8..4).prop_map(Op::Revive),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    /// Drives the entity manager directly with random grants, releases and
    /// liveness changes, logging leases the way the executor does, then
    /// replays the log through the checker.
    #[test]
    fn manager_never_double_grants(ops in prop::collection::vec(op(), 1..60)) {
        let mut m = EntityManager::new(LivenessConfig { heartbeat_timeout_ms: 10, sweep_interval_ms: 5 });
        for id in ROBOTS {
            m.register(
                EntityDescriptor {
                    entity_id: id.into(),
                    kind: EntityKind::MobileRobot,
                    location: "lobby".into(),
                    capabilities: EntityKind::MobileRobot.default_capabilities(),
                    voice_label: String::new(),
                },
                0,
            )
            .unwrap();
        }
        let mut log = Vec::new();
        let mut granted: Vec<(String, String)> = Vec::new();
        let mut now = 0;
        for op in ops {
            now += 1;
            match op {
                Op::Acquire(r, ids) => {
                    let req = format!("r{r}");
                    let set: BTreeSet<String> = ids.iter().map(|i| ROBOTS[*i as usize].to_string()).collect();
                    if let Ok(lease) = m.acquire_control(&req, &set, now) {
                        granted.push((lease.lease_id.clone(), req.clone()));
                        log.push(acquired(&lease.lease_id, &req, &set.iter().map(String::as_str).collect::<Vec<_>>()));
                    }
                }
                Op::Release(i) => {
                    if let Some((lease, req)) = granted.get(i as usize).cloned() {
                        if let Some(l) = m.release_control(&lease) {
                            let held: Vec<&str> = l.entity_ids.iter().map(String::as_str).collect();
                            log.push(released(&lease, &req, &held));
                        }
                    }
                }
                Op::ReleaseSome(i, ids) => {
                    if let Some((lease, req)) = granted.get(i as usize).cloned() {
                        let set: BTreeSet<String> = ids.iter().map(|i| ROBOTS[*i as usize].to_string()).collect();
                        let out = m.release_entities(&lease, &set);
                        if !out.is_empty() {
                            log.push(released(&lease, &req, &out.iter().map(String::as_str).collect::<Vec<_>>()));
                        }
                    }
                }
                Op::Drop(i) => {
                    now += 20;
                    for id in ROBOTS.iter().filter(|r| **r != ROBOTS[i as usize]) {
                        let _ = m.heartbeat(id, "lobby", false, now);
                    }
                    m.sweep(now);
                }
                Op::Revive(i) => {
                    let _ = m.heartbeat(ROBOTS[i as usize], "lobby", false, now);
                }
            }
            // live state agrees with the leases the manager reports
            let mut owners: BTreeMap<&str, &str> = BTreeMap::new();
            for l in m.leases() {
                for e in &l.entity_ids {
                    prop_assert!(owners.insert(e, &l.lease_id).is_none(), "{e} in two leases");
                }
            }
        }
        for (lease, req) in &granted {
            if let Some(l) = m.release_control(lease) {
                let held: Vec<&str> = l.entity_ids.iter().map(String::as_str).collect();
                log.push(released(lease, req, &held));
            }
        }
        let records: Vec<LogRecord> = log.into_iter().enumerate().map(|(i, e)| rec(i as u64, e)).collect();
        check_lease_log(&records).map_err(TestCaseError::fail)?;
    }
}
