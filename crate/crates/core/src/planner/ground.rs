//! Automatic problem generation: instantiate the action schemas for the
//! entities that are actually available and the persons the snapshot knows.

use std::collections::{BTreeMap, BTreeSet};

use crate::atom::{Atom, Predicate, Symbol};
use crate::entity::{CapabilityName, EntityKind, EntityRecord};
use crate::knowledge::Snapshot;
use crate::planner::action::{ActionName, GroundAction};
use crate::site::SiteMap;

/// Text symbol used for the grounded `announce` action.
pub const ANNOUNCE_TEXT: &str = "status";

/// Entities that take part in leases: only mobile robots carry actions that
/// require `controlled(e)`.
pub fn is_controllable(record: &EntityRecord) -> bool {
    record.kind == EntityKind::MobileRobot
}

fn set(atoms: impl IntoIterator<Item = Atom>) -> BTreeSet<Atom> {
    atoms.into_iter().collect()
}

struct Builder<'a> {
    site: &'a SiteMap,
    out: Vec<GroundAction>,
}

impl Builder<'_> {
    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        name: ActionName,
        actor: &str,
        args: &[&str],
        preconds: BTreeSet<Atom>,
        adds: BTreeSet<Atom>,
        deletes: BTreeSet<Atom>,
        est_duration_ms: i64,
    ) {
        self.out.push(GroundAction {
            name,
            actor: actor.to_string(),
            args: args.iter().map(|s| s.to_string()).collect(),
            preconds,
            adds,
            deletes,
            est_duration_ms,
        });
    }
}

/// Grounds every schema for the given snapshot and entity set.
///
/// Person-dependent actions are instantiated only for persons with a
/// `person_at` atom in the snapshot (active or recent sightings). Actions
/// whose static preconditions (`storage_at`, `can_open`, `stored`) cannot
/// hold are not emitted. The result is sorted by `(name, actor, args)`.
///
/// `guide` applies only to registered visitors; staff are never escorted
/// around as a shortcut for delivering things to them.
pub fn ground_domain(
    snapshot: &Snapshot,
    available: &[&EntityRecord],
    site: &SiteMap,
) -> Vec<GroundAction> {
    let timing = site.timing;
    let rooms: Vec<&str> = site.rooms().collect();

    let persons: BTreeSet<&str> = snapshot
        .atoms
        .iter()
        .filter(|a| a.predicate == Predicate::PersonAt)
        .map(|a| a.arg(0))
        .collect();
    let mut objects: BTreeSet<&str> = BTreeSet::new();
    let mut stored: Vec<(&str, &str)> = Vec::new();
    let mut storage_room: BTreeMap<&str, &str> = BTreeMap::new();
    let mut openers: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for atom in &snapshot.atoms {
        match atom.predicate {
            Predicate::Stored => {
                objects.insert(atom.arg(0));
                stored.push((atom.arg(0), atom.arg(1)));
            }
            Predicate::Holding => {
                objects.insert(atom.arg(1));
            }
            Predicate::StorageAt => {
                storage_room.insert(atom.arg(0), atom.arg(1));
            }
            Predicate::CanOpen => {
                openers.entry(atom.arg(1)).or_default().insert(atom.arg(0));
            }
            _ => {}
        }
    }

    let mut b = Builder {
        site,
        out: Vec::new(),
    };
    let controlled = |e: &str| Atom::controlled(e);

    for entity in available {
        let e = entity.entity_id.as_str();
        if entity.has(CapabilityName::Announce) {
            let pre = if entity.kind == EntityKind::SmartLobby {
                BTreeSet::new()
            } else {
                set([controlled(e)])
            };
            b.push(
                ActionName::Announce,
                e,
                &[ANNOUNCE_TEXT],
                pre,
                BTreeSet::new(),
                BTreeSet::new(),
                timing.bookkeeping_ms,
            );
        }
        if !is_controllable(entity) {
            continue;
        }
        let can = |c| entity.has(c);

        if can(CapabilityName::MoveTo) {
            for &r1 in &rooms {
                for &r2 in &rooms {
                    if r1 == r2 {
                        continue;
                    }
                    let Some(travel) = b.site.travel_ms(r1, r2) else {
                        continue;
                    };
                    b.push(
                        ActionName::Move,
                        e,
                        &[r1, r2],
                        set([controlled(e), Atom::at(e, r1)]),
                        set([Atom::at(e, r2)]),
                        set([Atom::at(e, r1)]),
                        travel,
                    );
                }
            }
        }

        if can(CapabilityName::ObservePersons) {
            for &r in &rooms {
                b.push(
                    ActionName::ObserveRoom,
                    e,
                    &[r],
                    set([controlled(e), Atom::at(e, r)]),
                    set([Atom::checked(e, r)]),
                    BTreeSet::new(),
                    timing.observe_ms,
                );
                for &p in &persons {
                    b.push(
                        ActionName::LocatePerson,
                        e,
                        &[p, r],
                        set([controlled(e), Atom::at(e, r), Atom::person_at(p, r)]),
                        set([Atom::located(p, r)]),
                        BTreeSet::new(),
                        timing.observe_ms,
                    );
                }
            }
        }

        if can(CapabilityName::AskPerson) {
            for &(o, s) in &stored {
                let Some(&r) = storage_room.get(s) else {
                    continue;
                };
                for &p in openers.get(s).into_iter().flatten() {
                    if !persons.contains(p) {
                        continue;
                    }
                    b.push(
                        ActionName::AskFetch,
                        e,
                        &[p, o, s, r],
                        set([
                            controlled(e),
                            Atom::at(e, r),
                            Atom::located(p, r),
                            Atom::can_open(p, s),
                            Atom::storage_at(s, r),
                            Atom::stored(o, s),
                        ]),
                        set([Atom::holding(p, o)]),
                        set([Atom::stored(o, s)]),
                        timing.interaction_ms,
                    );
                }
            }
        }

        for &p in &persons {
            for &o in &objects {
                for &r in &rooms {
                    if can(CapabilityName::ReceiveObject) {
                        b.push(
                            ActionName::ReceiveObject,
                            e,
                            &[p, o, r],
                            set([
                                controlled(e),
                                Atom::at(e, r),
                                Atom::located(p, r),
                                Atom::holding(p, o),
                            ]),
                            set([Atom::holding(e, o)]),
                            set([Atom::holding(p, o)]),
                            timing.interaction_ms,
                        );
                    }
                    if can(CapabilityName::HandoverObject) {
                        b.push(
                            ActionName::HandoverObject,
                            e,
                            &[p, o, r],
                            set([
                                controlled(e),
                                Atom::at(e, r),
                                Atom::person_at(p, r),
                                Atom::holding(e, o),
                            ]),
                            set([Atom::holding(p, o)]),
                            set([Atom::holding(e, o)]),
                            timing.interaction_ms,
                        );
                    }
                }
            }
        }

        if can(CapabilityName::MoveTo) && can(CapabilityName::AskPerson) {
            for &p in &persons {
                for &r1 in &rooms {
                    for &r2 in &rooms {
                        if r1 == r2 {
                            continue;
                        }
                        let Some(travel) = b.site.travel_ms(r1, r2) else {
                            continue;
                        };
                        b.push(
                            ActionName::Guide,
                            e,
                            &[p, r1, r2],
                            set([
                                controlled(e),
                                Atom::at(e, r1),
                                Atom::person_at(p, r1),
                                Atom::registered_person(p),
                            ]),
                            set([Atom::at(e, r2), Atom::person_at(p, r2)]),
                            set([Atom::at(e, r1), Atom::person_at(p, r1)]),
                            travel + timing.interaction_ms,
                        );
                    }
                }
            }
        }
    }

    let controllable: Vec<&str> = available
        .iter()
        .filter(|r| is_controllable(r))
        .map(|r| r.entity_id.as_str())
        .collect();
    for subset in non_empty_subsets(&controllable) {
        let refs: Vec<&str> = subset.iter().map(String::as_str).collect();
        let first = refs[0];
        b.push(
            ActionName::AcquireControl,
            first,
            &refs,
            refs.iter().map(|e| Atom::free(e)).collect(),
            refs.iter().map(|e| Atom::controlled(e)).collect(),
            refs.iter().map(|e| Atom::free(e)).collect(),
            timing.bookkeeping_ms,
        );
        b.push(
            ActionName::ReleaseControl,
            first,
            &refs,
            refs.iter().map(|e| Atom::controlled(e)).collect(),
            refs.iter().map(|e| Atom::free(e)).collect(),
            refs.iter().map(|e| Atom::controlled(e)).collect(),
            timing.bookkeeping_ms,
        );
    }

    let mut actions = b.out;
    actions.sort();
    actions.dedup();
    actions
}

/// All non-empty subsets, each sorted, in a stable order.
fn non_empty_subsets(items: &[&str]) -> Vec<Vec<Symbol>> {
    let mut sorted: Vec<&str> = items.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let n = sorted.len().min(16);
    (1u32..(1 << n))
        .map(|mask| {
            (0..n)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| sorted[i].to_string())
                .collect()
        })
        .collect()
}

/// Initial state for a request: snapshot atoms plus lease bookkeeping
/// (`controlled` for entities this request already holds, `free` for the
/// other controllable entities) and request-scoped `located` atoms.
pub fn initial_state(
    snapshot: &Snapshot,
    available: &[&EntityRecord],
    held: &BTreeSet<Symbol>,
    located: &BTreeSet<Atom>,
) -> BTreeSet<Atom> {
    let mut init = snapshot.atoms.clone();
    for record in available.iter().filter(|r| is_controllable(r)) {
        let id = record.entity_id.as_str();
        let placed = snapshot
            .atoms
            .iter()
            .any(|a| a.predicate == Predicate::At && a.arg(0) == id);
        if !placed {
            init.insert(Atom::at(id, &record.location));
        }
        if held.contains(id) {
            init.insert(Atom::controlled(id));
        } else {
            init.insert(Atom::free(id));
        }
    }
    init.extend(
        located
            .iter()
            .filter(|a| snapshot.contains(&Atom::person_at(a.arg(0), a.arg(1))))
            .cloned(),
    );
    init
}

/// Adds `free(e)` for every controllable entity so that plans hand back
/// every lease they take.
pub fn goal_with_release(goal: &BTreeSet<Atom>, available: &[&EntityRecord]) -> BTreeSet<Atom> {
    let mut full = goal.clone();
    full.extend(
        available
            .iter()
            .filter(|r| is_controllable(r))
            .map(|r| Atom::free(&r.entity_id)),
    );
    full
}
