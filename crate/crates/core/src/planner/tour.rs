use std::collections::BTreeSet;

use crate::atom::{Atom, Millis, Symbol};
use crate::entity::{CapabilityName, EntityRecord};
use crate::knowledge::{Freshness, Snapshot};
use crate::planner::action::{ActionName, GroundAction};
use crate::planner::ground::{ground_domain, is_controllable};
use crate::planner::search::{Plan, PlanError};
use crate::site::SiteMap;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PersonSearch {
    /// An active sighting answers the question without moving anyone.
    Known { room: Symbol },
    Tour { plan: Plan, robot: Symbol },
}

/// Candidate rooms for a search: rooms with prior sightings, most recent
/// first, then the never-visited rooms in lexicographic order.
pub fn candidate_rooms(
    site: &SiteMap,
    history: &[(Symbol, Millis)],
    skip: &BTreeSet<Symbol>,
) -> Vec<Symbol> {
    let mut rooms: Vec<Symbol> = Vec::new();
    for (room, _) in history {
        if site.has_room(room) && !rooms.contains(room) {
            rooms.push(room.clone());
        }
    }
    let mut rest: Vec<Symbol> = site
        .rooms()
        .filter(|r| !rooms.iter().any(|x| x == r))
        .map(str::to_string)
        .collect();
    rest.sort();
    rooms.extend(rest);
    rooms.retain(|r| !skip.contains(r));
    rooms
}

/// Ranks robots by travel time to `room`, then by id. Robots already held
/// by the request come first.
pub fn rank_robots<'a>(
    robots: &[&'a EntityRecord],
    room: &str,
    site: &SiteMap,
    held: &BTreeSet<Symbol>,
) -> Vec<&'a EntityRecord> {
    let mut ranked: Vec<&EntityRecord> = robots.to_vec();
    ranked.sort_by_key(|r| {
        (
            !held.contains(&r.entity_id),
            site.travel_ms(&r.location, room).unwrap_or(Millis::MAX),
            r.entity_id.clone(),
        )
    });
    ranked
}

fn pick<'a>(
    actions: &'a [GroundAction],
    name: ActionName,
    args: &[&str],
) -> Option<&'a GroundAction> {
    actions
        .iter()
        .find(|a| a.name == name && a.args.iter().map(String::as_str).eq(args.iter().copied()))
}

/// Plans a person search: answer from knowledge when the person has an
/// active sighting, otherwise send one mobile robot on an observation tour.
pub fn plan_person_search(
    snapshot: &Snapshot,
    person: &str,
    available: &[&EntityRecord],
    site: &SiteMap,
    history: &[(Symbol, Millis)],
    held: &BTreeSet<Symbol>,
    skip_rooms: &BTreeSet<Symbol>,
) -> Result<PersonSearch, PlanError> {
    if let Some(sighting) = snapshot.persons.get(person) {
        if sighting.freshness == Freshness::Active {
            return Ok(PersonSearch::Known {
                room: sighting.room.clone(),
            });
        }
    }
    let unsolvable = || PlanError::Unsolvable {
        unsatisfiable: vec![Atom::person_at(person, "?")],
    };
    let rooms = candidate_rooms(site, history, skip_rooms);
    let first = rooms.first().ok_or_else(unsolvable)?;
    let robots: Vec<&EntityRecord> = available
        .iter()
        .copied()
        .filter(|r| {
            is_controllable(r)
                && r.has(CapabilityName::MoveTo)
                && r.has(CapabilityName::ObservePersons)
        })
        .collect();
    let robot = *rank_robots(&robots, first, site, held)
        .first()
        .ok_or_else(unsolvable)?;
    let id = robot.entity_id.as_str();
    let actions = ground_domain(snapshot, &[robot], site);

    let mut steps = Vec::new();
    if !held.contains(id) {
        steps.push(pick(&actions, ActionName::AcquireControl, &[id]).ok_or_else(unsolvable)?.clone());
    }
    let mut here = snapshot
        .atoms
        .iter()
        .find(|a| a.predicate == crate::atom::Predicate::At && a.arg(0) == id)
        .map(|a| a.arg(1).to_string())
        .unwrap_or_else(|| robot.location.clone());
    let mut goal = BTreeSet::new();
    for room in &rooms {
        if *room != here {
            let Some(step) = pick(&actions, ActionName::Move, &[&here, room]) else {
                continue;
            };
            steps.push(step.clone());
            here = room.clone();
        }
        steps.push(pick(&actions, ActionName::ObserveRoom, &[room]).ok_or_else(unsolvable)?.clone());
        goal.insert(Atom::checked(id, room));
    }
    steps.push(pick(&actions, ActionName::ReleaseControl, &[id]).ok_or_else(unsolvable)?.clone());
    goal.insert(Atom::free(id));
    Ok(PersonSearch::Tour {
        plan: Plan {
            request_id: String::new(),
            goal,
            steps,
            created_at: snapshot.as_of,
            planning_ms: 0,
        },
        robot: id.to_string(),
    })
}
