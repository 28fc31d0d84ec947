//! The coordination backend: sessions in, envelopes out. Every decoded
//! message is handled to completion before the next one, so the event log
//! is a single ordered stream regardless of transport.

use std::collections::BTreeMap;

use crate::atom::{normalize_symbol, Atom, Millis, Predicate, Symbol};
use crate::entity::{EntityError, EntityKind, EntityManager, LivenessConfig};
use crate::eventlog::{Event, EventLog};
use crate::executor::{Effect, Executor, ExecutorConfig, GoalRequest, Model, SubmitError};
use crate::intent::{parse_command, IntentError};
use crate::knowledge::{Fact, Freshness, FreshnessWindows, KnowledgeStore};
use crate::protocol::{
    decode_envelope, route, AckPayload, DecodeError, CommandResultPayload, Envelope, ErrorCode, ErrorPayload,
    GoalRequestPayload, HelloPayload, Kind, Payload, PeerKind, PersonView, ProgressEventPayload, RoomView,
    RouteError, Session, StateSnapshotPayload, Target, WorldView,
};
use crate::site::SiteMap;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BackendConfig {
    pub executor: ExecutorConfig,
    pub liveness: LivenessConfig,
    pub windows: FreshnessWindows,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outbound {
    pub session_id: String,
    pub envelope: Envelope,
}

#[derive(Debug, Clone)]
struct OpenPrompt {
    entity_session: String,
    request_id: String,
}

#[derive(Debug, Clone)]
pub struct Backend {
    model: Model,
    executor: Executor,
    sessions: BTreeMap<String, Session>,
    entity_sessions: BTreeMap<Symbol, String>,
    prompts: BTreeMap<String, OpenPrompt>,
    log: EventLog,
    next_session: u64,
    next_msg: u64,
    next_request: u64,
    next_sweep: Millis,
}

type Out = Vec<Outbound>;

impl Backend {
    pub fn new(site: SiteMap, config: BackendConfig) -> Self {
        Backend {
            model: Model {
                knowledge: KnowledgeStore::new(config.windows),
                entities: EntityManager::new(config.liveness),
                site,
            },
            executor: Executor::new(config.executor),
            sessions: BTreeMap::new(),
            entity_sessions: BTreeMap::new(),
            prompts: BTreeMap::new(),
            log: EventLog::new(),
            next_session: 0,
            next_msg: 0,
            next_request: 0,
            next_sweep: config.liveness.sweep_interval_ms,
        }
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn executor(&self) -> &Executor {
        &self.executor
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    /// Appends an event that happened outside the backend, e.g. in the
    /// simulator, so both share one ordered log.
    pub fn record(&mut self, at: Millis, event: Event) {
        self.log.push(at, event);
    }

    pub fn seed_facts(&mut self, facts: impl IntoIterator<Item = Fact>) -> Result<(), crate::knowledge::KnowledgeError> {
        for fact in facts {
            self.model.knowledge.assert_fact(fact)?;
        }
        Ok(())
    }

    pub fn session(&self, session_id: &str) -> Option<&Session> {
        self.sessions.get(session_id)
    }

    pub fn is_open(&self, session_id: &str) -> bool {
        self.sessions.contains_key(session_id)
    }

    pub fn open_session(&mut self, peer: PeerKind, now: Millis) -> String {
        self.next_session += 1;
        let id = format!("s{}", self.next_session);
        self.sessions.insert(id.clone(), Session::new(id.clone(), peer, now));
        self.log.push(
            now,
            Event::SessionOpened {
                session: id.clone(),
                peer,
            },
        );
        id
    }

    pub fn close_session(&mut self, session_id: &str, reason: &str, now: Millis) {
        if let Some(session) = self.sessions.remove(session_id) {
            if let Some(entity) = session.authenticated_entity {
                if self.entity_sessions.get(&entity).map(String::as_str) == Some(session_id) {
                    self.entity_sessions.remove(&entity);
                }
            }
            self.prompts.retain(|_, p| p.entity_session != session_id);
            self.log.push(
                now,
                Event::SessionClosed {
                    session: session_id.to_string(),
                    reason: reason.to_string(),
                },
            );
        }
    }

    /// Earliest time at which [`Backend::tick`] has work to do.
    pub fn next_deadline(&self) -> Option<Millis> {
        Some(match self.executor.next_deadline() {
            Some(d) => d.min(self.next_sweep),
            None => self.next_sweep,
        })
    }

    /// Liveness sweep and command timeouts.
    pub fn tick(&mut self, now: Millis) -> Out {
        let mut out = Vec::new();
        if now >= self.next_sweep {
            let interval = self.model.entities.config().sweep_interval_ms.max(1);
            while self.next_sweep <= now {
                self.next_sweep += interval;
            }
            for entity in self.model.entities.sweep(now) {
                self.log.push(now, Event::EntityOffline { entity: entity.clone() });
                let fx = self.executor.entity_offline(&entity, &mut self.model, now);
                self.apply(fx, now, &mut out);
            }
        }
        let fx = self.executor.tick(&mut self.model, now);
        self.apply(fx, now, &mut out);
        out
    }

    /// Handles one line received on `session_id`.
    pub fn receive_line(&mut self, session_id: &str, line: &[u8], now: Millis) -> Out {
        self.receive_decoded(session_id, decode_envelope(line), now)
    }

    /// Like [`Backend::receive_line`] for callers that framed or decoded
    /// the line themselves; errors count towards closing the session.
    pub fn receive_decoded(&mut self, session_id: &str, decoded: Result<Envelope, DecodeError>, now: Millis) -> Out {
        let mut out = Vec::new();
        let Some(session) = self.sessions.get_mut(session_id) else {
            return out;
        };
        let close = session.note_decode(&decoded);
        let env = match decoded {
            Ok(env) => env,
            Err(err) => {
                self.log.push(
                    now,
                    Event::ProtocolError {
                        session: session_id.to_string(),
                        code: err.code,
                        message: err.message.clone(),
                    },
                );
                self.emit(&mut out, session_id, err.to_payload(), err.msg_id.as_deref(), now);
                if close {
                    self.close_session(session_id, "too many consecutive frame errors", now);
                }
                return out;
            }
        };
        self.handle(session_id, env, now, &mut out);
        out
    }

    /// Handles an already-decoded envelope, e.g. from an in-process client.
    pub fn receive(&mut self, session_id: &str, env: Envelope, now: Millis) -> Out {
        let mut out = Vec::new();
        if self.sessions.contains_key(session_id) {
            self.handle(session_id, env, now, &mut out);
        }
        out
    }

    fn handle(&mut self, session_id: &str, env: Envelope, now: Millis, out: &mut Out) {
        let session = self.sessions[session_id].clone();
        self.log.push(
            now,
            Event::Inbound {
                session: session_id.to_string(),
                from: peer_label(&session),
                kind: env.kind(),
                msg_id: env.msg_id.clone(),
            },
        );
        let target = match route(&env, &session) {
            Ok(t) => t,
            Err(e) => {
                let code = match e {
                    RouteError::Unauthorized { .. } => ErrorCode::Unauthorized,
                    RouteError::NotRegistered => ErrorCode::NotRegistered,
                };
                self.reject(out, session_id, &env.msg_id, code, e.to_string(), Vec::new(), now);
                return;
            }
        };
        let msg_id = env.msg_id.clone();
        match (target, env.payload) {
            (Target::EntityManager, Payload::Hello(h)) => self.on_hello(&session, &msg_id, h, now, out),
            (Target::EntityManager, Payload::Heartbeat(h)) => {
                let entity = session.authenticated_entity.clone().unwrap_or_default();
                if h.entity_id != entity {
                    let msg = format!("session speaks for `{entity}`, not `{}`", h.entity_id);
                    self.reject(out, session_id, &msg_id, ErrorCode::Unauthorized, msg, Vec::new(), now);
                    return;
                }
                match self.model.entities.heartbeat(&entity, &h.location, h.busy, now) {
                    Ok(outcome) => {
                        if outcome.revived {
                            self.log.push(now, Event::EntityOnline { entity: entity.clone() });
                        }
                        if let Some(room) = outcome.moved_to {
                            let fact = Fact::asserted(Atom::at(&entity, &room), now, entity.clone());
                            let _ = self.model.knowledge.assert_fact(fact);
                        }
                    }
                    Err(e) => {
                        self.reject(out, session_id, &msg_id, ErrorCode::NotRegistered, e.to_string(), Vec::new(), now)
                    }
                }
            }
            (Target::KnowledgeManager, Payload::Observation(o)) => {
                let entity = session.authenticated_entity.clone().unwrap_or_default();
                if o.entity_id != entity {
                    let msg = format!("session speaks for `{entity}`, not `{}`", o.entity_id);
                    self.reject(out, session_id, &msg_id, ErrorCode::Unauthorized, msg, Vec::new(), now);
                    return;
                }
                if let Err(msg) = self.ingest(&entity, &o.atoms, o.observed_at) {
                    self.reject(out, session_id, &msg_id, ErrorCode::Validation, msg, Vec::new(), now);
                }
            }
            (Target::Executor, Payload::CommandResult(r)) => self.on_result(&session, r, now, out),
            (Target::Executor, Payload::GoalRequest(g)) => self.on_goal(&session, &msg_id, g, now, out),
            (Target::Executor, Payload::CancelRequest(c)) => {
                let (fx, acted) = self.executor.cancel(c.request_id.as_deref(), &mut self.model, now);
                let note = if acted { "cancelled" } else { "nothing to cancel" };
                let ack = Payload::Ack(AckPayload {
                    request_id: c.request_id.clone(),
                    note: Some(note.into()),
                    ..Default::default()
                });
                self.emit(out, session_id, ack, Some(&msg_id), now);
                self.apply(fx, now, out);
            }
            (Target::PromptRelay, Payload::Ack(a)) => self.on_prompt(&session, &msg_id, a, now, out),
            (Target::Snapshot, Payload::StateSnapshot(_)) => {
                let view = Payload::StateSnapshot(StateSnapshotPayload {
                    view: Some(self.view(now)),
                });
                self.emit(out, session_id, view, Some(&msg_id), now);
            }
            (_, payload) => {
                let msg = format!("`{}` has no handler", payload.kind());
                self.reject(out, session_id, &msg_id, ErrorCode::Unauthorized, msg, Vec::new(), now);
            }
        }
    }

    fn on_hello(&mut self, session: &Session, msg_id: &str, h: HelloPayload, now: Millis, out: &mut Out) {
        let sid = session.session_id.as_str();
        let Some(descriptor) = h.entity else {
            let operator = h.person.as_deref().map(normalize_symbol);
            if let Some(s) = self.sessions.get_mut(sid) {
                s.operator = operator;
            }
            let ack = Payload::Ack(AckPayload {
                note: Some(format!("session {sid}")),
                ..Default::default()
            });
            self.emit(out, sid, ack, Some(msg_id), now);
            return;
        };
        let id = descriptor.entity_id.clone();
        if let Some(bound) = &session.authenticated_entity {
            if *bound != id {
                let msg = format!("session is already bound to `{bound}`");
                self.reject(out, sid, msg_id, ErrorCode::Conflict, msg, Vec::new(), now);
                return;
            }
        }
        if !self.model.site.has_room(&descriptor.location) {
            let msg = format!("unknown room `{}`", descriptor.location);
            self.reject(out, sid, msg_id, ErrorCode::Validation, msg, Vec::new(), now);
            return;
        }
        let kind = descriptor.kind;
        let room = descriptor.location.clone();
        match self.model.entities.register(descriptor, now) {
            Ok(_) => {}
            Err(e @ EntityError::Conflict(_)) => {
                self.reject(out, sid, msg_id, ErrorCode::Conflict, e.to_string(), Vec::new(), now);
                return;
            }
            Err(e) => {
                self.reject(out, sid, msg_id, ErrorCode::Validation, e.to_string(), Vec::new(), now);
                return;
            }
        }
        if let Some(s) = self.sessions.get_mut(sid) {
            s.authenticated_entity = Some(id.clone());
        }
        if let Some(old) = self.entity_sessions.insert(id.clone(), sid.to_string()) {
            if old != sid {
                self.prompts.retain(|_, p| p.entity_session != old);
            }
        }
        self.log.push(
            now,
            Event::EntityRegistered {
                entity: id.clone(),
                entity_kind: kind,
                room: room.clone(),
            },
        );
        let _ = self
            .model
            .knowledge
            .assert_fact(Fact::asserted(Atom::at(&id, &room), now, id.clone()));
        let ack = Payload::Ack(AckPayload {
            note: Some(format!("registered {id} on session {sid}")),
            ..Default::default()
        });
        self.emit(out, sid, ack, Some(msg_id), now);
    }

    fn ingest(&mut self, entity: &str, atoms: &[Atom], observed_at: Millis) -> Result<(), String> {
        if let Some(a) = atoms.iter().find(|a| !a.predicate.is_observable()) {
            return Err(format!("`{}` cannot be observed", a.predicate));
        }
        for atom in atoms {
            if atom.predicate == Predicate::RegisteredPerson {
                let person = atom.arg(0).to_string();
                let known = self
                    .model
                    .knowledge
                    .snapshot(observed_at.max(0))
                    .contains(&Atom::registered_person(&person));
                self.model
                    .knowledge
                    .register_person(&person, None, observed_at, entity)
                    .map_err(|e| e.to_string())?;
                if !known {
                    self.log.push(observed_at, Event::VisitorRegistered { person });
                }
            } else {
                self.model
                    .knowledge
                    .assert_fact(Fact::asserted(atom.clone(), observed_at, entity))
                    .map_err(|e| e.to_string())?;
            }
        }
        Ok(())
    }

    fn on_result(&mut self, session: &Session, r: CommandResultPayload, now: Millis, out: &mut Out) {
        let entity = session.authenticated_entity.clone().unwrap_or_default();
        if self.ingest(&entity, &r.observations, now).is_err() {
            self.log.push(
                now,
                Event::ProtocolError {
                    session: session.session_id.clone(),
                    code: ErrorCode::Validation,
                    message: "command_result carried unobservable atoms".into(),
                },
            );
        }
        let fx = self.executor.on_result(
            &r.request_id,
            &r.command_id,
            r.step,
            r.outcome,
            r.reason,
            &mut self.model,
            now,
        );
        self.apply(fx, now, out);
    }

    fn on_goal(&mut self, session: &Session, msg_id: &str, g: GoalRequestPayload, now: Millis, out: &mut Out) {
        let sid = session.session_id.as_str();
        if let Some(entity) = &session.authenticated_entity {
            let kind = self.model.entities.get(entity).map(|r| r.kind);
            if !matches!(kind, Some(EntityKind::SmartLobby | EntityKind::Receptionist)) {
                let msg = format!("`{entity}` cannot submit goals");
                self.reject(out, sid, msg_id, ErrorCode::Unauthorized, msg, Vec::new(), now);
                return;
            }
        }
        if let Some(id) = g.request_id.as_deref().filter(|id| self.executor.contains(id)) {
            let msg = format!("request id `{id}` is already in use");
            self.reject(out, sid, msg_id, ErrorCode::Conflict, msg, Vec::new(), now);
            return;
        }
        let speaker = self.resolve_speaker(session, g.requested_by.as_deref(), now);
        let goal = match (g.goal, &g.text) {
            (Some(goal), None) => goal,
            (None, Some(text)) => {
                let snapshot = self.model.knowledge.snapshot(now);
                match parse_command(text, speaker.as_deref(), &snapshot, self.model.site.rooms()) {
                    Ok(goal) => goal,
                    Err(e) => {
                        let code = match e {
                            IntentError::NotUnderstood { .. } => ErrorCode::NotUnderstood,
                            IntentError::Clarification { .. } => ErrorCode::Clarification,
                        };
                        let near = e.near_misses().to_vec();
                        self.reject(out, sid, msg_id, code, e.to_string(), near, now);
                        return;
                    }
                }
            }
            _ => {
                let msg = "exactly one of text or goal is required".to_string();
                self.reject(out, sid, msg_id, ErrorCode::SchemaError, msg, Vec::new(), now);
                return;
            }
        };
        let request_id = match g.request_id.clone() {
            Some(id) => id,
            None => loop {
                self.next_request += 1;
                let id = format!("r{}", self.next_request);
                if !self.executor.contains(&id) {
                    break id;
                }
            },
        };
        let requested_by = speaker.unwrap_or_else(|| match &session.authenticated_entity {
            Some(e) => e.clone(),
            None => "console".into(),
        });
        let request = GoalRequest {
            request_id: request_id.clone(),
            goal,
            requested_by,
            submitted_at: now,
            text: g.text,
        };
        match self.executor.submit(request, &mut self.model, now) {
            Ok(fx) => {
                let ack = Payload::Ack(AckPayload {
                    request_id: Some(request_id),
                    note: Some("accepted".into()),
                    ..Default::default()
                });
                self.emit(out, sid, ack, Some(msg_id), now);
                self.apply(fx, now, out);
            }
            Err(e) => {
                let code = match e {
                    SubmitError::Duplicate(_) => ErrorCode::Conflict,
                    _ => ErrorCode::Validation,
                };
                self.reject(out, sid, msg_id, code, e.to_string(), Vec::new(), now);
            }
        }
    }

    /// Explicit identity first, then the console operator, then a single
    /// person actively sighted where the relaying entity stands.
    fn resolve_speaker(&self, session: &Session, explicit: Option<&str>, now: Millis) -> Option<Symbol> {
        if let Some(s) = explicit.map(normalize_symbol).filter(|s| !s.is_empty()) {
            return Some(s);
        }
        if let Some(op) = &session.operator {
            return Some(op.clone());
        }
        let entity = session.authenticated_entity.as_ref()?;
        let room = &self.model.entities.get(entity)?.location;
        let snapshot = self.model.knowledge.snapshot(now);
        let mut here = snapshot
            .persons
            .iter()
            .filter(|(_, s)| s.freshness == Freshness::Active && s.room == *room)
            .map(|(p, _)| p.clone());
        match (here.next(), here.next()) {
            (Some(p), None) => Some(p),
            _ => None,
        }
    }

    fn on_prompt(&mut self, session: &Session, msg_id: &str, a: AckPayload, now: Millis, out: &mut Out) {
        let sid = session.session_id.as_str();
        if let Some(prompt) = a.prompt {
            self.log.push(
                now,
                Event::PromptRaised {
                    prompt_id: prompt.prompt_id.clone(),
                    entity: session.authenticated_entity.clone().unwrap_or_default(),
                    person: prompt.person.clone(),
                },
            );
            self.prompts.insert(
                prompt.prompt_id.clone(),
                OpenPrompt {
                    entity_session: sid.to_string(),
                    request_id: prompt.request_id.clone(),
                },
            );
            let view = self.executor.request_view(&prompt.request_id, &self.model);
            let event = match view {
                Some(v) => ProgressEventPayload {
                    request_id: v.request_id,
                    phase: v.phase,
                    percent: v.percent,
                    cursor: v.cursor,
                    total: v.steps.len(),
                    descriptor: format!("waiting for {}", prompt.person),
                    involved: v.involved,
                    announcement: None,
                    prompt: Some(prompt),
                    answer: None,
                    message: None,
                },
                None => return,
            };
            self.broadcast(out, Payload::ProgressEvent(event), now);
            return;
        }
        let (Some(prompt_id), Some(decision)) = (a.prompt_id, a.decision) else {
            return;
        };
        let Some(open) = self.prompts.remove(&prompt_id) else {
            let msg = format!("no open prompt `{prompt_id}`");
            self.reject(out, sid, msg_id, ErrorCode::Validation, msg, Vec::new(), now);
            return;
        };
        self.log.push(
            now,
            Event::PromptAnswered {
                prompt_id: prompt_id.clone(),
                decision,
            },
        );
        let relay = Payload::Ack(AckPayload {
            request_id: Some(open.request_id),
            note: None,
            prompt: None,
            prompt_id: Some(prompt_id),
            decision: Some(decision),
        });
        self.emit(out, &open.entity_session, relay, None, now);
        let ack = Payload::Ack(AckPayload {
            note: Some("relayed".into()),
            ..Default::default()
        });
        self.emit(out, sid, ack, Some(msg_id), now);
    }

    pub fn open_prompts(&self) -> impl Iterator<Item = &str> {
        self.prompts.keys().map(String::as_str)
    }

    /// The console's picture of the world at `now`.
    pub fn view(&self, now: Millis) -> WorldView {
        let snapshot = self.model.knowledge.snapshot(now);
        let site = &self.model.site;
        WorldView {
            as_of: now,
            rooms: site
                .rooms()
                .map(|r| RoomView {
                    id: r.to_string(),
                    neighbours: site.neighbours(r).map(|(n, _)| n.to_string()).collect(),
                    layout: site.layout(r),
                })
                .collect(),
            entities: self.model.entities.records().cloned().collect(),
            persons: snapshot
                .persons
                .iter()
                .map(|(p, s)| PersonView {
                    person: p.clone(),
                    room: s.room.clone(),
                    observed_at: s.observed_at,
                    freshness: s.freshness,
                })
                .collect(),
            facts: snapshot.atoms.iter().cloned().collect(),
            leases: self.model.entities.leases().cloned().collect(),
            active: self
                .executor
                .active()
                .and_then(|st| self.executor.request_view(st.id(), &self.model)),
            queued: self.executor.queued().map(str::to_string).collect(),
        }
    }

    fn apply(&mut self, fx: Vec<Effect>, now: Millis, out: &mut Out) {
        for effect in fx {
            match effect {
                Effect::Log(event) => self.log.push(now, event),
                Effect::Command { entity, command } => {
                    if let Some(sid) = self.entity_sessions.get(&entity).cloned() {
                        self.emit(out, &sid, Payload::Command(command), None, now);
                    }
                }
                Effect::Broadcast(payload) => self.broadcast(out, payload, now),
            }
        }
    }

    /// Consoles and announcing lobby infrastructure.
    fn broadcast(&mut self, out: &mut Out, payload: Payload, now: Millis) {
        let targets: Vec<String> = self
            .sessions
            .values()
            .filter(|s| match (&s.peer_kind, &s.authenticated_entity) {
                (PeerKind::Console, _) => true,
                (PeerKind::Entity, Some(e)) => self
                    .model
                    .entities
                    .get(e)
                    .is_some_and(|r| r.kind == EntityKind::SmartLobby),
                _ => false,
            })
            .map(|s| s.session_id.clone())
            .collect();
        for sid in targets {
            self.emit(out, &sid, payload.clone(), None, now);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn reject(
        &mut self,
        out: &mut Out,
        session_id: &str,
        msg_id: &str,
        code: ErrorCode,
        message: String,
        near_misses: Vec<String>,
        now: Millis,
    ) {
        let event = if matches!(
            code,
            ErrorCode::NotUnderstood | ErrorCode::Clarification | ErrorCode::Conflict | ErrorCode::Validation
        ) {
            Event::GoalRejected {
                session: session_id.to_string(),
                code,
                message: message.clone(),
            }
        } else {
            Event::ProtocolError {
                session: session_id.to_string(),
                code,
                message: message.clone(),
            }
        };
        self.log.push(now, event);
        let payload = Payload::Error(ErrorPayload {
            code,
            message,
            near_misses,
        });
        self.emit(out, session_id, payload, Some(msg_id), now);
    }

    fn emit(&mut self, out: &mut Out, session_id: &str, payload: Payload, reply_to: Option<&str>, now: Millis) {
        let Some(session) = self.sessions.get(session_id) else {
            return;
        };
        self.next_msg += 1;
        let msg_id = format!("b{}", self.next_msg);
        let detail = detail(&payload);
        let kind = payload.kind();
        let mut envelope = Envelope::new(msg_id.clone(), session_id, payload, now);
        if let Some(r) = reply_to {
            envelope = envelope.replying_to(r);
        }
        self.log.push(
            now,
            Event::Outbound {
                to: peer_label(session),
                kind,
                msg_id,
                detail,
            },
        );
        out.push(Outbound {
            session_id: session_id.to_string(),
            envelope,
        });
    }
}

fn peer_label(session: &Session) -> String {
    match &session.authenticated_entity {
        Some(e) => e.clone(),
        None => session.session_id.clone(),
    }
}

fn detail(payload: &Payload) -> String {
    match payload {
        Payload::Command(c) => format!("{} {} {}({})", c.request_id, c.command_id, c.action, c.args.join(",")),
        Payload::PlanEvent(p) => p.request_id.clone(),
        Payload::ProgressEvent(p) => format!("{} {} {:.1}", p.request_id, p.phase, p.percent),
        Payload::Error(e) => e.code.to_string(),
        Payload::Ack(a) => a.note.clone().or_else(|| a.decision.map(|d| format!("{d:?}").to_lowercase())).unwrap_or_default(),
        p if p.kind() == Kind::StateSnapshot => String::new(),
        _ => String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entity::EntityDescriptor;
    use crate::protocol::{encode_envelope, CancelRequestPayload, GoalSpec, HeartbeatPayload, Phase};
    use crate::site::Timing;

    fn backend() -> Backend {
        let mut site = SiteMap::new(Timing::default());
        site.add_edge("lobby", "corridor", 15_000);
        Backend::new(site, BackendConfig::default())
    }

    fn line(payload: Payload, id: &str) -> Vec<u8> {
        encode_envelope(&Envelope::new(id, "", payload, 0)).unwrap()
    }

    fn hello(entity: &str, kind: EntityKind) -> Vec<u8> {
        line(
            Payload::Hello(HelloPayload {
                entity: Some(EntityDescriptor {
                    entity_id: entity.into(),
                    kind,
                    location: "lobby".into(),
                    capabilities: kind.default_capabilities(),
                    voice_label: String::new(),
                }),
                person: None,
            }),
            "h1",
        )
    }

    fn error_code(out: &[Outbound]) -> Option<ErrorCode> {
        out.iter().find_map(|o| match &o.envelope.payload {
            Payload::Error(e) => Some(e.code),
            _ => None,
        })
    }

    #[test]
    fn registration_binds_the_session() {
        let mut b = backend();
        let s = b.open_session(PeerKind::Entity, 0);
        let beat = line(
            Payload::Heartbeat(HeartbeatPayload {
                entity_id: "johnny".into(),
                location: "lobby".into(),
                busy: false,
            }),
            "m0",
        );
        assert_eq!(error_code(&b.receive_line(&s, &beat, 0)), Some(ErrorCode::NotRegistered));
        let out = b.receive_line(&s, &hello("johnny", EntityKind::MobileRobot), 0);
        assert_eq!(out[0].envelope.reply_to.as_deref(), Some("h1"));
        assert!(matches!(out[0].envelope.payload, Payload::Ack(_)));
        assert!(b.receive_line(&s, &beat, 1).is_empty());
        let other = b.open_session(PeerKind::Entity, 0);
        let dup = b.receive_line(&other, &hello("johnny", EntityKind::MobileRobot), 1);
        assert_eq!(error_code(&dup), Some(ErrorCode::Conflict));
    }

    #[test]
    fn console_cannot_send_results_and_robots_cannot_submit_goals() {
        let mut b = backend();
        let console = b.open_session(PeerKind::Console, 0);
        let result = line(
            Payload::CommandResult(CommandResultPayload {
                command_id: "c1".into(),
                request_id: "r1".into(),
                step: 0,
                outcome: crate::protocol::Outcome::Success,
                observations: vec![],
                reason: None,
            }),
            "m1",
        );
        assert_eq!(error_code(&b.receive_line(&console, &result, 0)), Some(ErrorCode::Unauthorized));

        let robot = b.open_session(PeerKind::Entity, 0);
        b.receive_line(&robot, &hello("johnny", EntityKind::MobileRobot), 0);
        let goal = line(
            Payload::GoalRequest(GoalRequestPayload {
                request_id: None,
                text: Some("where is markus".into()),
                goal: None,
                requested_by: None,
            }),
            "m2",
        );
        assert_eq!(error_code(&b.receive_line(&robot, &goal, 0)), Some(ErrorCode::Unauthorized));
    }

    #[test]
    fn lobby_speech_resolves_the_speaker_from_sightings() {
        let mut b = backend();
        b.seed_facts([
            Fact::asserted(Atom::stored("belt", "cabinet"), 0, "scenario"),
            Fact::asserted(Atom::storage_at("cabinet", "corridor"), 0, "scenario"),
        ])
        .unwrap();
        let lobby = b.open_session(PeerKind::Entity, 0);
        b.receive_line(&lobby, &hello("smart_lobby", EntityKind::SmartLobby), 0);
        let speech = line(
            Payload::GoalRequest(GoalRequestPayload {
                request_id: None,
                text: Some("I want the belt".into()),
                goal: None,
                requested_by: None,
            }),
            "m1",
        );
        let out = b.receive_line(&lobby, &speech, 1_000);
        assert_eq!(error_code(&out), Some(ErrorCode::Clarification));

        let seen = line(
            Payload::Observation(crate::protocol::ObservationPayload {
                entity_id: "smart_lobby".into(),
                room: "lobby".into(),
                observed_at: 1_000,
                atoms: vec![Atom::person_at("markus", "lobby")],
            }),
            "m2",
        );
        b.receive_line(&lobby, &seen, 1_000);
        let out = b.receive_line(&lobby, &speech, 1_000);
        assert_eq!(error_code(&out), None);
        let st = b.executor().state("r1").unwrap();
        assert_eq!(st.request.requested_by, "markus");
        assert_eq!(st.request.goal.to_string(), "holding(markus,belt)");
        // no robot registered
        assert_eq!(st.phase, Phase::Failed);
        assert_eq!(st.reason.as_deref(), Some("no available entity with capability move_to"));
    }

    #[test]
    fn garbage_closes_after_three_frames_and_unknown_kinds_do_not() {
        let mut b = backend();
        let s = b.open_session(PeerKind::Console, 0);
        let teleport = br#"{"msg_id":"x","session_id":"","kind":"teleport","payload":{},"sent_at":0}"#;
        for _ in 0..5 {
            assert_eq!(error_code(&b.receive_line(&s, teleport, 0)), Some(ErrorCode::UnknownKind));
        }
        assert!(b.is_open(&s));
        for i in 0..3 {
            assert!(b.is_open(&s), "closed early at {i}");
            assert_eq!(error_code(&b.receive_line(&s, b"{not json", 0)), Some(ErrorCode::FrameError));
        }
        assert!(!b.is_open(&s));
    }

    #[test]
    fn snapshot_query_and_cancel_noop() {
        let mut b = backend();
        let s = b.open_session(PeerKind::Console, 0);
        let out = b.receive_line(&s, &line(Payload::StateSnapshot(StateSnapshotPayload { view: None }), "q"), 5);
        match &out[0].envelope.payload {
            Payload::StateSnapshot(StateSnapshotPayload { view: Some(v) }) => {
                assert_eq!(v.as_of, 5);
                assert_eq!(v.rooms.len(), 2);
            }
            other => panic!("{other:?}"),
        }
        let cancel = line(
            Payload::CancelRequest(CancelRequestPayload {
                request_id: Some("nope".into()),
            }),
            "c",
        );
        let out = b.receive_line(&s, &cancel, 5);
        assert!(matches!(&out[0].envelope.payload, Payload::Ack(a) if a.note.as_deref() == Some("nothing to cancel")));
        let structured = line(
            Payload::GoalRequest(GoalRequestPayload {
                request_id: Some("g".into()),
                text: None,
                goal: Some(GoalSpec::FindPerson { person: "markus".into() }),
                requested_by: None,
            }),
            "g",
        );
        b.receive_line(&s, &structured, 5);
        assert_eq!(b.executor().state("g").unwrap().request.requested_by, "console");
    }
}
