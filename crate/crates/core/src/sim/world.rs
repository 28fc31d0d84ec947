//! Discrete-event office world. Entities talk to the backend only through
//! encoded protocol lines; persons follow their schedules and answer
//! requests as scripted.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::atom::{display_name, spoken, Atom, Millis, Symbol};
use crate::entity::{CapabilityName, EntityDescriptor, EntityKind};
use crate::eventlog::SimEvent;
use crate::planner::ActionName;
use crate::protocol::{
    decode_envelope, encode_envelope, AckPayload, CommandPayload, CommandResultPayload, Decision,
    Envelope, GoalRequestPayload, HeartbeatPayload, HelloPayload, ObservationPayload, Outcome, Payload,
    PersonRequest, Prompt,
};
use crate::site::SiteMap;

use super::scenario::{secs, Response, Scenario, ABSENT};

/// Where an object is.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Place {
    Storage(Symbol),
    Holder(Symbol),
}

/// One encoded line from an entity to the backend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outgoing {
    pub entity: Symbol,
    pub line: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Due {
    Schedule { person: Symbol, room: Option<Symbol> },
    Sense { entity: Symbol },
    Heartbeat { entity: Symbol },
    Waypoint { entity: Symbol, command_id: String, room: Symbol, last: bool },
    Interact { entity: Symbol, command_id: String },
    Finish { entity: Symbol, command_id: String },
}

#[derive(Debug, Clone)]
struct Running {
    command: CommandPayload,
    msg_id: String,
    /// Person walking along with the robot.
    guiding: Option<Symbol>,
    answer: Option<Decision>,
}

#[derive(Debug, Clone)]
struct SimEntity {
    descriptor: EntityDescriptor,
    room: Symbol,
    silent_after: Option<Millis>,
    current: Option<Running>,
    moving: bool,
    next_msg: u64,
    last_seen: Option<Vec<Symbol>>,
    registered: BTreeSet<Symbol>,
}

impl SimEntity {
    fn has(&self, c: CapabilityName) -> bool {
        self.descriptor.capabilities.iter().any(|x| x.name == c)
    }
}

#[derive(Debug, Clone)]
pub struct World {
    scenario: Scenario,
    site: SiteMap,
    now: Millis,
    rng: ChaCha8Rng,
    entities: BTreeMap<Symbol, SimEntity>,
    persons: BTreeMap<Symbol, Option<Symbol>>,
    objects: BTreeMap<Symbol, Place>,
    agenda: BTreeMap<Millis, Vec<Due>>,
    outbox: Vec<Outgoing>,
    events: Vec<(Millis, SimEvent)>,
    prompts: BTreeMap<String, (Symbol, String)>,
    next_prompt: u64,
}

fn required(action: ActionName) -> &'static [CapabilityName] {
    use CapabilityName::*;
    match action {
        ActionName::Move => &[MoveTo],
        ActionName::LocatePerson | ActionName::ObserveRoom => &[ObservePersons],
        ActionName::AskFetch => &[AskPerson],
        ActionName::ReceiveObject => &[ReceiveObject],
        ActionName::HandoverObject => &[HandoverObject],
        ActionName::Guide => &[MoveTo, AskPerson],
        ActionName::Announce => &[Announce],
        ActionName::AcquireControl | ActionName::ReleaseControl => &[],
    }
}

fn arity(action: ActionName) -> usize {
    match action {
        ActionName::Move => 2,
        ActionName::LocatePerson => 2,
        ActionName::ObserveRoom => 1,
        ActionName::AskFetch => 4,
        ActionName::ReceiveObject | ActionName::HandoverObject | ActionName::Guide => 3,
        ActionName::Announce => 1,
        ActionName::AcquireControl | ActionName::ReleaseControl => 0,
    }
}

impl World {
    /// Builds the world at time 0 and queues every entity's hello.
    pub fn new(scenario: Scenario, seed: u64) -> World {
        let site = scenario.site();
        let mut world = World {
            site,
            now: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            entities: BTreeMap::new(),
            persons: BTreeMap::new(),
            objects: BTreeMap::new(),
            agenda: BTreeMap::new(),
            outbox: Vec::new(),
            events: Vec::new(),
            prompts: BTreeMap::new(),
            next_prompt: 0,
            scenario,
        };
        let timing = world.site.timing;
        for spec in world.scenario.entities.clone() {
            let entity = SimEntity {
                descriptor: spec.descriptor(),
                room: spec.room.clone(),
                silent_after: spec.silent_after_s.map(secs),
                current: None,
                moving: false,
                next_msg: 0,
                last_seen: None,
                registered: BTreeSet::new(),
            };
            let senses = entity.has(CapabilityName::ObservePersons);
            world.entities.insert(spec.id.clone(), entity);
            let descriptor = world.entities[&spec.id].descriptor.clone();
            world.send(
                &spec.id,
                Payload::Hello(HelloPayload {
                    entity: Some(descriptor),
                    person: None,
                }),
                None,
            );
            if senses {
                world.at(0, Due::Sense { entity: spec.id.clone() });
            }
            world.at(timing.heartbeat_ms, Due::Heartbeat { entity: spec.id.clone() });
        }
        for o in &world.scenario.objects {
            world.objects.insert(o.id.clone(), Place::Storage(o.storage.clone()));
        }
        for p in world.scenario.persons.clone() {
            let mut initial = None;
            for seg in &p.schedule {
                let room = (seg.room != ABSENT).then(|| seg.room.clone());
                let at = secs(seg.from_s);
                if at <= 0 {
                    initial = room;
                } else {
                    world.at(at, Due::Schedule { person: p.id.clone(), room });
                }
            }
            world.persons.insert(p.id.clone(), initial);
        }
        world
    }

    pub fn now(&self) -> Millis {
        self.now
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn next_event_time(&self) -> Option<Millis> {
        self.agenda.keys().next().copied()
    }

    pub fn person_location(&self, person: &str) -> Option<&str> {
        self.persons.get(person)?.as_deref()
    }

    pub fn entity_room(&self, entity: &str) -> Option<&str> {
        self.entities.get(entity).map(|e| e.room.as_str())
    }

    pub fn object_places(&self) -> &BTreeMap<Symbol, Place> {
        &self.objects
    }

    /// Open prompts, oldest first.
    pub fn open_prompts(&self) -> impl Iterator<Item = &str> {
        self.prompts.keys().map(String::as_str)
    }

    pub fn take_outbox(&mut self) -> Vec<Outgoing> {
        std::mem::take(&mut self.outbox)
    }

    pub fn take_events(&mut self) -> Vec<(Millis, SimEvent)> {
        std::mem::take(&mut self.events)
    }

    /// Processes everything due up to `until`. Events sharing a timestamp
    /// run in an order drawn from the seeded generator.
    pub fn advance(&mut self, until: Millis) -> Vec<(Millis, SimEvent)> {
        while let Some((&at, _)) = self.agenda.iter().next() {
            if at > until {
                break;
            }
            let mut batch = self.agenda.remove(&at).unwrap_or_default();
            self.now = self.now.max(at);
            batch.shuffle(&mut self.rng);
            for due in batch {
                self.process(due);
            }
        }
        self.now = self.now.max(until);
        self.take_events()
    }

    /// Sends text on behalf of an entity, as if spoken to it.
    pub fn speak(&mut self, via: &str, text: &str, request_id: Option<String>, speaker: Option<Symbol>) {
        if self.is_silent(via) {
            return;
        }
        self.send(
            via,
            Payload::GoalRequest(GoalRequestPayload {
                request_id,
                text: Some(text.to_string()),
                goal: None,
                requested_by: speaker,
            }),
            None,
        );
    }

    /// Feeds one line from the backend to `entity`.
    pub fn deliver(&mut self, entity: &str, line: &[u8]) {
        if self.is_silent(entity) {
            return;
        }
        let Ok(env) = decode_envelope(line) else {
            return;
        };
        match env.payload {
            Payload::Command(command) => self.start_command(entity, command, env.msg_id),
            Payload::Ack(AckPayload {
                prompt_id: Some(prompt_id),
                decision: Some(decision),
                ..
            }) => self.answer_prompt(&prompt_id, decision),
            Payload::PlanEvent(p) => self.render(entity, Some(p.announcement)),
            Payload::ProgressEvent(p) => self.render(entity, p.announcement),
            _ => {}
        }
    }

    fn render(&mut self, entity: &str, text: Option<String>) {
        let Some(text) = text else {
            return;
        };
        let Some(e) = self.entities.get(entity) else {
            return;
        };
        if e.descriptor.kind == EntityKind::SmartLobby && e.has(CapabilityName::Announce) {
            self.log(SimEvent::AnnouncementRendered {
                entity: entity.to_string(),
                text,
            });
        }
    }

    fn is_silent(&self, entity: &str) -> bool {
        self.entities
            .get(entity)
            .and_then(|e| e.silent_after)
            .is_some_and(|t| self.now >= t)
    }

    fn at(&mut self, at: Millis, due: Due) {
        self.agenda.entry(at).or_default().push(due);
    }

    fn log(&mut self, event: SimEvent) {
        self.events.push((self.now, event));
    }

    fn send(&mut self, entity: &str, payload: Payload, reply_to: Option<&str>) {
        let Some(e) = self.entities.get_mut(entity) else {
            return;
        };
        e.next_msg += 1;
        let mut env = Envelope::new(format!("{entity}-{}", e.next_msg), "", payload, self.now);
        if let Some(id) = reply_to {
            env = env.replying_to(id);
        }
        if let Ok(line) = encode_envelope(&env) {
            self.outbox.push(Outgoing {
                entity: entity.to_string(),
                line,
            });
        }
    }

    fn persons_in(&self, room: &str) -> Vec<Symbol> {
        self.persons
            .iter()
            .filter(|(_, r)| r.as_deref() == Some(room))
            .map(|(p, _)| p.clone())
            .collect()
    }

    fn sightings(&self, room: &str) -> Vec<Atom> {
        self.persons_in(room).iter().map(|p| Atom::person_at(p, room)).collect()
    }

    fn move_person(&mut self, person: &str, to: Option<Symbol>) {
        let Some(slot) = self.persons.get_mut(person) else {
            return;
        };
        if *slot == to {
            return;
        }
        let from = std::mem::replace(slot, to.clone());
        self.log(SimEvent::PersonMoved {
            person: person.to_string(),
            from,
            to,
        });
    }

    fn process(&mut self, due: Due) {
        match due {
            Due::Schedule { person, room } => self.move_person(&person, room),
            Due::Sense { entity } => {
                if self.is_silent(&entity) {
                    return;
                }
                let tick = self.site.timing.sensing_tick_ms;
                self.at(self.now + tick, Due::Sense { entity: entity.clone() });
                let e = &self.entities[&entity];
                if !(e.descriptor.kind == EntityKind::MobileRobot && e.moving) {
                    self.sense(&entity);
                }
            }
            Due::Heartbeat { entity } => {
                if self.is_silent(&entity) {
                    return;
                }
                let period = self.site.timing.heartbeat_ms;
                self.at(self.now + period, Due::Heartbeat { entity: entity.clone() });
                self.heartbeat(&entity);
            }
            Due::Waypoint {
                entity,
                command_id,
                room,
                last,
            } => {
                if !self.is_current(&entity, &command_id) {
                    return;
                }
                let e = self.entities.get_mut(&entity).expect("known entity");
                e.room = room.clone();
                let guiding = e.current.as_ref().and_then(|r| r.guiding.clone());
                if let Some(p) = &guiding {
                    self.move_person(p, Some(room.clone()));
                }
                if last {
                    self.entities.get_mut(&entity).expect("known entity").moving = false;
                    self.heartbeat(&entity);
                    self.sense(&entity);
                    let mut seen = self.sightings(&room);
                    if let Some(p) = guiding {
                        seen.retain(|a| a.arg(0) != p);
                        seen.push(Atom::person_at(&p, &room));
                    }
                    self.complete(&entity, Outcome::Success, seen, None);
                }
            }
            Due::Interact { entity, command_id } => {
                if self.is_current(&entity, &command_id) {
                    self.interact(&entity);
                }
            }
            Due::Finish { entity, command_id } => {
                if self.is_current(&entity, &command_id) {
                    self.finish_observation(&entity);
                }
            }
        }
    }

    fn is_current(&self, entity: &str, command_id: &str) -> bool {
        !self.is_silent(entity)
            && self.entities[entity]
                .current
                .as_ref()
                .is_some_and(|r| r.command.command_id == command_id)
    }

    fn heartbeat(&mut self, entity: &str) {
        let e = &self.entities[entity];
        let payload = Payload::Heartbeat(HeartbeatPayload {
            entity_id: entity.to_string(),
            location: e.room.clone(),
            busy: e.current.is_some(),
        });
        self.send(entity, payload, None);
    }

    fn sense(&mut self, entity: &str) {
        let e = &self.entities[entity];
        if !e.has(CapabilityName::ObservePersons) {
            return;
        }
        let room = e.room.clone();
        let seen = self.persons_in(&room);
        let mut atoms: Vec<Atom> = seen.iter().map(|p| Atom::person_at(p, &room)).collect();
        if e.has(CapabilityName::RegisterVisitor) {
            let fresh: Vec<Symbol> = seen
                .iter()
                .filter(|p| !e.registered.contains(*p))
                .filter(|p| self.scenario.person(p).is_some_and(|s| s.visitor))
                .cloned()
                .collect();
            for p in fresh {
                atoms.push(Atom::registered_person(&p));
                self.entities.get_mut(entity).expect("known entity").registered.insert(p);
            }
        }
        let e = self.entities.get_mut(entity).expect("known entity");
        if e.last_seen.as_ref() != Some(&seen) {
            e.last_seen = Some(seen.clone());
            self.log(SimEvent::Sighting {
                entity: entity.to_string(),
                room: room.clone(),
                persons: seen,
            });
        }
        if atoms.is_empty() {
            return;
        }
        let payload = Payload::Observation(ObservationPayload {
            entity_id: entity.to_string(),
            room,
            observed_at: self.now,
            atoms,
        });
        self.send(entity, payload, None);
    }

    fn start_command(&mut self, entity: &str, command: CommandPayload, msg_id: String) {
        let Some(e) = self.entities.get_mut(entity) else {
            return;
        };
        if let Some(old) = e.current.take() {
            e.moving = false;
            self.log(SimEvent::CommandCompleted {
                entity: entity.to_string(),
                command_id: old.command.command_id,
                outcome: "superseded".into(),
            });
        }
        let action = command.action;
        let e = &self.entities[entity];
        let missing = required(action).iter().find(|c| !e.has(**c));
        let fault = if required(action).is_empty() {
            Some(format!("{action} is not an entity command"))
        } else if let Some(c) = missing {
            Some(format!("missing capability {}", c.name()))
        } else if command.args.len() != arity(action) {
            Some(format!("{action} expects {} arguments", arity(action)))
        } else {
            None
        };
        self.log(SimEvent::CommandStarted {
            entity: entity.to_string(),
            command_id: command.command_id.clone(),
            action: format!("{action}({})", command.args.join(",")),
        });
        let say = command.say.clone();
        let args = command.args.clone();
        let command_id = command.command_id.clone();
        self.entities.get_mut(entity).expect("known entity").current = Some(Running {
            command,
            msg_id,
            guiding: None,
            answer: None,
        });
        if let Some(reason) = fault {
            self.complete(entity, Outcome::EntityFault, Vec::new(), Some(reason));
            return;
        }
        if let Some(text) = say.filter(|_| PersonRequest::for_action(action).is_none()) {
            self.log(SimEvent::AnnouncementRendered {
                entity: entity.to_string(),
                text,
            });
        }
        let timing = self.site.timing;
        match action {
            ActionName::Move => self.travel(entity, &command_id, &args[1]),
            ActionName::LocatePerson | ActionName::ObserveRoom => {
                self.at(
                    self.now + timing.observe_ms,
                    Due::Finish {
                        entity: entity.to_string(),
                        command_id,
                    },
                );
            }
            ActionName::Announce => {
                let text = self.entities[entity]
                    .current
                    .as_ref()
                    .and_then(|r| r.command.say.clone())
                    .unwrap_or_else(|| spoken(&args[0]));
                self.log(SimEvent::AnnouncementRendered {
                    entity: entity.to_string(),
                    text,
                });
                self.complete(entity, Outcome::Success, Vec::new(), None);
            }
            _ => self.ask(entity, &command_id, action, &args),
        }
    }

    fn travel(&mut self, entity: &str, command_id: &str, target: &str) {
        let from = self.entities[entity].room.clone();
        let Some(path) = self.site.path(&from, target) else {
            let reason = format!("no route from {from} to {target}");
            self.complete(entity, Outcome::EntityFault, Vec::new(), Some(reason));
            return;
        };
        if path.is_empty() {
            self.at(
                self.now,
                Due::Waypoint {
                    entity: entity.to_string(),
                    command_id: command_id.to_string(),
                    room: from,
                    last: true,
                },
            );
            return;
        }
        self.entities.get_mut(entity).expect("known entity").moving = true;
        let n = path.len();
        for (i, (room, offset)) in path.into_iter().enumerate() {
            self.at(
                self.now + offset,
                Due::Waypoint {
                    entity: entity.to_string(),
                    command_id: command_id.to_string(),
                    room,
                    last: i + 1 == n,
                },
            );
        }
    }

    /// Starts a person interaction: either wait the scripted interaction
    /// time or raise a prompt for a live answer.
    fn ask(&mut self, entity: &str, command_id: &str, action: ActionName, args: &[String]) {
        let person = args[0].clone();
        let request = PersonRequest::for_action(action).expect("person action");
        let response = self
            .scenario
            .person(&person)
            .map(|p| p.response(request))
            .unwrap_or(Response::Accept);
        let running = self.entities[entity].current.clone().expect("running command");
        if let Some(text) = &running.command.say {
            self.log(SimEvent::AnnouncementRendered {
                entity: entity.to_string(),
                text: text.clone(),
            });
        }
        if response == Response::Interactive {
            self.next_prompt += 1;
            let prompt_id = format!("{entity}-p{}", self.next_prompt);
            self.prompts
                .insert(prompt_id.clone(), (entity.to_string(), command_id.to_string()));
            let text = running
                .command
                .say
                .clone()
                .unwrap_or_else(|| format!("{}, can you help?", display_name(&person)));
            let payload = Payload::Ack(AckPayload {
                request_id: Some(running.command.request_id.clone()),
                note: None,
                prompt: Some(Prompt {
                    prompt_id,
                    request_id: running.command.request_id.clone(),
                    person,
                    request,
                    text,
                }),
                prompt_id: None,
                decision: None,
            });
            self.send(entity, payload, Some(&running.msg_id));
            return;
        }
        self.at(
            self.now + self.site.timing.interaction_ms,
            Due::Interact {
                entity: entity.to_string(),
                command_id: command_id.to_string(),
            },
        );
    }

    fn answer_prompt(&mut self, prompt_id: &str, decision: Decision) {
        let Some((entity, command_id)) = self.prompts.remove(prompt_id) else {
            return;
        };
        if !self.is_current(&entity, &command_id) {
            return;
        }
        self.entities
            .get_mut(&entity)
            .and_then(|e| e.current.as_mut())
            .expect("running command")
            .answer = Some(decision);
        self.at(self.now, Due::Interact { entity, command_id });
    }

    fn interact(&mut self, entity: &str) {
        let running = self.entities[entity].current.clone().expect("running command");
        let c = &running.command;
        let person = c.args[0].clone();
        let room = self.entities[entity].room.clone();
        let request = PersonRequest::for_action(c.action).expect("person action");
        if self.person_location(&person) != Some(room.as_str()) {
            let seen = self.sightings(&room);
            let reason = format!("{person} is not in the {}", spoken(&room));
            self.complete(entity, Outcome::PersonAbsent, seen, Some(reason));
            return;
        }
        let decision = match running.answer {
            Some(d) => d,
            None => match self.scenario.person(&person).map(|p| p.response(request)) {
                Some(Response::Decline) => Decision::Decline,
                Some(Response::Ignore) => Decision::Ignore,
                _ => Decision::Accept,
            },
        };
        self.log(SimEvent::Decision {
            person: person.clone(),
            request: request.name().to_string(),
            decision,
        });
        match decision {
            Decision::Ignore => {
                self.log(SimEvent::CommandCompleted {
                    entity: entity.to_string(),
                    command_id: c.command_id.clone(),
                    outcome: "no_response".into(),
                });
                self.entities.get_mut(entity).expect("known entity").current = None;
            }
            Decision::Decline => {
                let reason = format!("{person} declined");
                self.complete(entity, Outcome::PersonDeclined, Vec::new(), Some(reason));
            }
            Decision::Accept => self.accept(entity, &running),
        }
    }

    fn accept(&mut self, entity: &str, running: &Running) {
        let c = &running.command;
        let a = |i: usize| c.args[i].clone();
        let handed = |world: &mut World, object: &str, from: Place, to: &str| -> bool {
            if world.objects.get(object) == Some(&from) {
                world.objects.insert(object.to_string(), Place::Holder(to.to_string()));
                true
            } else {
                false
            }
        };
        let (ok, observed) = match c.action {
            ActionName::AskFetch => (
                handed(self, &a(1), Place::Storage(a(2)), &a(0)),
                Atom::holding(&a(0), &a(1)),
            ),
            ActionName::ReceiveObject => (
                handed(self, &a(1), Place::Holder(a(0)), entity),
                Atom::holding(entity, &a(1)),
            ),
            ActionName::HandoverObject => (
                handed(self, &a(1), Place::Holder(entity.to_string()), &a(0)),
                Atom::holding(&a(0), &a(1)),
            ),
            ActionName::Guide => {
                if let Some(r) = self.entities.get_mut(entity).and_then(|e| e.current.as_mut()) {
                    r.guiding = Some(a(0));
                }
                let command_id = c.command_id.clone();
                self.travel(entity, &command_id, &a(2));
                return;
            }
            _ => unreachable!("not a person interaction"),
        };
        if ok {
            self.complete(entity, Outcome::Success, vec![observed], None);
        } else {
            let reason = format!("the {} is not where expected", spoken(&a(1)));
            self.complete(entity, Outcome::PersonDeclined, Vec::new(), Some(reason));
        }
    }

    fn finish_observation(&mut self, entity: &str) {
        let running = self.entities[entity].current.clone().expect("running command");
        let room = self.entities[entity].room.clone();
        let seen = self.sightings(&room);
        let c = &running.command;
        if c.action == ActionName::LocatePerson {
            let person = &c.args[0];
            let here = room == c.args[1] && self.person_location(person) == Some(room.as_str());
            if !here {
                let reason = format!("{person} is not in the {}", spoken(&c.args[1]));
                self.complete(entity, Outcome::PersonAbsent, seen, Some(reason));
                return;
            }
        }
        self.complete(entity, Outcome::Success, seen, None);
    }

    fn complete(&mut self, entity: &str, outcome: Outcome, observations: Vec<Atom>, reason: Option<String>) {
        let Some(running) = self.entities.get_mut(entity).and_then(|e| {
            e.moving = false;
            e.current.take()
        }) else {
            return;
        };
        self.prompts.retain(|_, (_, id)| *id != running.command.command_id);
        self.log(SimEvent::CommandCompleted {
            entity: entity.to_string(),
            command_id: running.command.command_id.clone(),
            outcome: outcome.name().to_string(),
        });
        let payload = Payload::CommandResult(CommandResultPayload {
            command_id: running.command.command_id,
            request_id: running.command.request_id,
            step: running.command.step,
            outcome,
            observations,
            reason,
        });
        self.send(entity, payload, Some(&running.msg_id));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const OFFICE: &str = r#"
format = 1
name = "office"
seed = 1

[[rooms]]
id = "lobby"
edges = [{ to = "corridor", travel_seconds = 15 }]

[[rooms]]
id = "corridor"
edges = [{ to = "secretary_office", travel_seconds = 15 }]

[[rooms]]
id = "secretary_office"

[[entities]]
id = "johnny"
kind = "mobile_robot"
room = "lobby"

[[entities]]
id = "smart_lobby"
kind = "smart_lobby"
room = "lobby"

[[persons]]
id = "markus"
schedule = [{ from_s = 0, room = "lobby" }]

[[persons]]
id = "sarah"
can_open = ["cabinet"]
schedule = [{ from_s = 0, room = "secretary_office" }, { from_s = 100, room = "absent" }]

[[storages]]
id = "cabinet"
room = "secretary_office"

[[objects]]
id = "belt"
storage = "cabinet"
"#;

    fn world() -> World {
        World::new(Scenario::parse(OFFICE).unwrap(), 1)
    }

    fn decoded(out: &[Outgoing]) -> Vec<(Symbol, Envelope)> {
        out.iter()
            .map(|o| (o.entity.clone(), decode_envelope(&o.line).unwrap()))
            .collect()
    }

    fn command(action: ActionName, args: &[&str], id: &str) -> Vec<u8> {
        let env = Envelope::new(
            format!("b-{id}"),
            "s1",
            Payload::Command(CommandPayload {
                command_id: id.into(),
                request_id: "r1".into(),
                step: 0,
                action,
                actor: "johnny".into(),
                args: args.iter().map(|s| s.to_string()).collect(),
                timeout_ms: 100_000,
                say: None,
            }),
            0,
        );
        encode_envelope(&env).unwrap()
    }

    fn results(out: &[Outgoing]) -> Vec<CommandResultPayload> {
        decoded(out)
            .into_iter()
            .filter_map(|(_, e)| match e.payload {
                Payload::CommandResult(r) => Some(r),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn entities_say_hello_then_sense() {
        let mut w = world();
        let hellos = decoded(&w.take_outbox());
        assert_eq!(hellos.len(), 2);
        assert!(hellos.iter().all(|(_, e)| matches!(e.payload, Payload::Hello(_))));
        w.advance(0);
        let out = decoded(&w.take_outbox());
        let lobby = out
            .iter()
            .find(|(id, _)| id == "smart_lobby")
            .map(|(_, e)| e.payload.clone())
            .unwrap();
        match lobby {
            Payload::Observation(o) => assert_eq!(o.atoms, vec![Atom::person_at("markus", "lobby")]),
            other => panic!("{other:?}"),
        }
        assert!(w.advance(0).is_empty());
    }

    #[test]
    fn move_completes_after_travel_time() {
        let mut w = world();
        w.advance(0);
        w.take_outbox();
        w.deliver("johnny", &command(ActionName::Move, &["lobby", "secretary_office"], "c1"));
        w.advance(29_999);
        assert!(results(&w.take_outbox()).is_empty());
        assert_eq!(w.entity_room("johnny"), Some("corridor"));
        w.advance(30_000);
        let out = w.take_outbox();
        let r = results(&out);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].outcome, Outcome::Success);
        assert_eq!(r[0].observations, vec![Atom::person_at("sarah", "secretary_office")]);
        let heartbeat = decoded(&out).into_iter().any(|(_, e)| {
            matches!(e.payload, Payload::Heartbeat(h) if h.location == "secretary_office")
        });
        assert!(heartbeat);
    }

    #[test]
    fn fetching_moves_the_object_between_hands() {
        let mut w = world();
        w.deliver("johnny", &command(ActionName::Move, &["lobby", "secretary_office"], "c1"));
        w.advance(30_000);
        w.deliver(
            "johnny",
            &command(ActionName::AskFetch, &["sarah", "belt", "cabinet", "secretary_office"], "c2"),
        );
        w.advance(40_000);
        assert_eq!(w.object_places()["belt"], Place::Holder("sarah".into()));
        w.deliver("johnny", &command(ActionName::ReceiveObject, &["sarah", "belt", "secretary_office"], "c3"));
        w.advance(50_000);
        assert_eq!(w.object_places()["belt"], Place::Holder("johnny".into()));
        let r = results(&w.take_outbox());
        assert_eq!(r.last().unwrap().observations, vec![Atom::holding("johnny", "belt")]);
    }

    #[test]
    fn absent_person_and_missing_capability() {
        let mut w = world();
        w.deliver("johnny", &command(ActionName::LocatePerson, &["sarah", "lobby"], "c1"));
        w.advance(5_000);
        let r = results(&w.take_outbox());
        assert_eq!(r[0].outcome, Outcome::PersonAbsent);
        assert_eq!(r[0].observations, vec![Atom::person_at("markus", "lobby")]);

        w.deliver("smart_lobby", &command(ActionName::Move, &["lobby", "corridor"], "c2"));
        let r = results(&w.take_outbox());
        assert_eq!(r[0].outcome, Outcome::EntityFault);
    }

    #[test]
    fn new_command_supersedes_and_snaps_back() {
        let mut w = world();
        w.deliver("johnny", &command(ActionName::Move, &["lobby", "secretary_office"], "c1"));
        w.advance(20_000);
        assert_eq!(w.entity_room("johnny"), Some("corridor"));
        w.deliver("johnny", &command(ActionName::Move, &["corridor", "lobby"], "c2"));
        let events = w.advance(35_000);
        assert!(events.iter().any(|(_, e)| matches!(e,
            SimEvent::CommandCompleted { command_id, outcome, .. } if command_id == "c1" && outcome == "superseded")));
        assert_eq!(w.entity_room("johnny"), Some("lobby"));
        assert_eq!(results(&w.take_outbox()).len(), 1);
    }

    #[test]
    fn schedules_move_people() {
        let mut w = world();
        assert_eq!(w.person_location("sarah"), Some("secretary_office"));
        let events = w.advance(100_000);
        assert_eq!(w.person_location("sarah"), None);
        assert!(events.iter().any(|(_, e)| matches!(e, SimEvent::PersonMoved { person, .. } if person == "sarah")));
    }
}
