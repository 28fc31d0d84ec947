//! Cancelling mid-plan stops all commands and gives the robot back.

mod common;

use common::criteria::{cancel_at, cancel_safety};
use icps::eventlog::Event;

#[test]
fn no_command_after_cancellation() {
    println!("{}", cancel_safety().unwrap());
}

#[test]
fn robot_is_free_for_the_next_goal() {
    let timed = cancel_at(30_000).unwrap();
    let backend = &timed.outcome.backend;
    assert_eq!(backend.model().entities.leases().count(), 0);
    let released_at = timed
        .outcome
        .log
        .records()
        .iter()
        .find(|r| matches!(&r.event, Event::LeaseReleased { request_id, .. } if request_id == "r1"))
        .unwrap()
        .at;
    assert!(released_at >= 31_000);
}
