//! Drives a backend and a simulated world in lockstep on one simulated
//! clock. Each instant is processed until no entity has anything left to
//! say, then the clock jumps to the next due time.

use std::collections::{BTreeMap, VecDeque};

use crate::atom::{Millis, Symbol};
use crate::backend::{Backend, BackendConfig, Outbound};
use crate::eventlog::{Event, EventLog};
use crate::planner::Problem;
use crate::protocol::{
    decode_envelope, encode_envelope, AckPayload, DecodeError, CancelRequestPayload, Envelope, GoalRequestPayload, HelloPayload, Payload,
    PeerKind,
};
use crate::report::RunReport;
use crate::sim::{Scenario, TimelineItem, World};
use crate::sim::scenario::secs;

pub const DEFAULT_MAX_SIM_MS: Millis = 600_000;

#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Overrides the scenario's seed.
    pub seed: Option<u64>,
    pub max_sim_ms: Millis,
    /// Cancels the running goal this long after the first goal is submitted.
    pub cancel_after: Option<Millis>,
    /// Goals submitted in addition to the scenario timeline.
    pub goals: Vec<TimelineItem>,
    /// Drop the scenario's own timeline.
    pub skip_timeline: bool,
    pub backend: BackendConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            max_sim_ms: DEFAULT_MAX_SIM_MS,
            cancel_after: None,
            goals: Vec::new(),
            skip_timeline: false,
            backend: BackendConfig::default(),
        }
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub log: EventLog,
    pub report: RunReport,
    /// Planning problem of the first goal, as it stood when submitted.
    pub problem: Option<Problem>,
    /// Everything the harness console received.
    pub console: Vec<Envelope>,
    pub world: World,
    pub backend: Backend,
}

#[derive(Debug)]
pub struct Harness {
    backend: Backend,
    world: World,
    seed: u64,
    console: String,
    sessions: BTreeMap<Symbol, String>,
    owners: BTreeMap<String, Symbol>,
    timeline: VecDeque<(Millis, TimelineItem)>,
    answers: VecDeque<TimelineItem>,
    cancel_after: Option<Millis>,
    cancel_at: Option<Millis>,
    max_sim_ms: Millis,
    now: Millis,
    console_inbox: Vec<Envelope>,
    external: Vec<Outbound>,
    next_console_msg: u64,
    problem: Option<Problem>,
    time_limit_reached: bool,
}

impl Harness {
    pub fn new(scenario: Scenario, cfg: &RunConfig) -> Result<Harness, String> {
        let seed = cfg.seed.unwrap_or(scenario.seed);
        let mut backend = Backend::new(scenario.site(), cfg.backend);
        backend.seed_facts(scenario.seed_facts()).map_err(|e| e.to_string())?;
        let mut items: Vec<TimelineItem> = if cfg.skip_timeline {
            Vec::new()
        } else {
            scenario.timeline.clone()
        };
        items.extend(cfg.goals.iter().cloned());
        items.sort_by(|a, b| a.at_s.total_cmp(&b.at_s));
        let timeline = items.into_iter().map(|i| (secs(i.at_s), i)).collect();

        let console = backend.open_session(PeerKind::Console, 0);
        let mut sessions = BTreeMap::new();
        let mut owners = BTreeMap::new();
        for e in &scenario.entities {
            let sid = backend.open_session(PeerKind::Entity, 0);
            sessions.insert(e.id.clone(), sid.clone());
            owners.insert(sid, e.id.clone());
        }
        let world = World::new(scenario, seed);
        let mut h = Harness {
            backend,
            world,
            seed,
            console,
            sessions,
            owners,
            timeline,
            answers: VecDeque::new(),
            cancel_after: cfg.cancel_after,
            cancel_at: None,
            max_sim_ms: cfg.max_sim_ms,
            now: 0,
            console_inbox: Vec::new(),
            external: Vec::new(),
            next_console_msg: 0,
            problem: None,
            time_limit_reached: false,
        };
        h.console_send(Payload::Hello(HelloPayload::default()));
        h.pump();
        Ok(h)
    }

    pub fn now(&self) -> Millis {
        self.now
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    /// Feeds a line from a session the harness does not own, e.g. a
    /// network client, at the current simulated time.
    pub fn receive_external(&mut self, session_id: &str, frame: Result<Vec<u8>, DecodeError>) {
        let decoded = frame.and_then(|line| decode_envelope(&line));
        let out = self.backend.receive_decoded(session_id, decoded, self.now);
        self.route(out);
        self.pump();
    }

    pub fn open_external(&mut self, peer: PeerKind) -> String {
        self.backend.open_session(peer, self.now)
    }

    pub fn close_external(&mut self, session_id: &str) {
        self.backend.close_session(session_id, "peer closed", self.now);
    }

    /// Envelopes addressed to sessions the harness does not own.
    pub fn take_external(&mut self) -> Vec<Outbound> {
        std::mem::take(&mut self.external)
    }

    /// Nothing scheduled from the timeline and no goal in flight.
    pub fn finished(&self) -> bool {
        self.timeline.is_empty() && self.cancel_at.is_none() && self.backend.executor().is_idle()
    }

    pub fn time_limit_reached(&self) -> bool {
        self.time_limit_reached
    }

    /// The next instant anything is due, capped by the time limit.
    pub fn next_time(&self) -> Option<Millis> {
        [
            self.world.next_event_time(),
            self.backend.next_deadline(),
            self.timeline.front().map(|(t, _)| *t),
            self.cancel_at,
        ]
        .into_iter()
        .flatten()
        .min()
        .map(|t| t.max(self.now))
    }

    /// Processes the next instant. Returns `false` once the run is over.
    pub fn step(&mut self) -> bool {
        if self.finished() {
            return false;
        }
        let Some(t) = self.next_time() else {
            return false;
        };
        if t > self.max_sim_ms {
            self.time_limit_reached = true;
            return false;
        }
        self.advance_to(t);
        true
    }

    /// Processes every due instant up to `t`, then `t` itself. Unlike
    /// [`Harness::step`] this keeps going after the timeline is done.
    pub fn advance_until(&mut self, t: Millis) {
        while let Some(next) = self.next_time().filter(|&n| n > self.now && n < t) {
            self.advance_to(next);
        }
        self.advance_to(t);
    }

    /// Processes instant `t`.
    pub fn advance_to(&mut self, t: Millis) {
        self.now = t.max(self.now);
        let events = self.world.advance(self.now);
        self.record_sim(events);
        self.pump();

        while self.timeline.front().is_some_and(|(at, _)| *at <= self.now) {
            let (_, item) = self.timeline.pop_front().expect("front exists");
            self.apply_item(item);
            self.pump();
        }
        self.answer_prompts();
        if self.cancel_at.is_some_and(|c| c <= self.now) {
            self.cancel_at = None;
            self.console_send(Payload::CancelRequest(CancelRequestPayload { request_id: None }));
            self.pump();
        }
        let out = self.backend.tick(self.now);
        self.route(out);
        self.pump();
    }

    pub fn run(mut self) -> RunOutcome {
        while self.step() {}
        self.finish()
    }

    pub fn finish(mut self) -> RunOutcome {
        if self.time_limit_reached {
            // close out anything still in flight so every goal ends
            let pending = self.backend.executor().states().count();
            for _ in 0..pending {
                if self.backend.executor().is_idle() {
                    break;
                }
                self.console_send(Payload::CancelRequest(CancelRequestPayload { request_id: None }));
                self.pump();
            }
        }
        let name = self.world.scenario().name.clone();
        let mut report = RunReport::from_log(&name, self.seed, self.backend.log().records());
        let timings: BTreeMap<String, Vec<u64>> = self
            .backend
            .executor()
            .states()
            .map(|st| (st.id().to_string(), st.planning_ms.clone()))
            .collect();
        report.attach_planning_ms(&timings);
        report.time_limit_reached = self.time_limit_reached;
        RunOutcome {
            log: self.backend.log().clone(),
            report,
            problem: self.problem,
            console: self.console_inbox,
            world: self.world,
            backend: self.backend,
        }
    }

    fn apply_item(&mut self, item: TimelineItem) {
        if let Some(text) = &item.goal {
            if let Some(after) = self.cancel_after.take() {
                self.cancel_at = Some(self.now + after);
            }
            let before = self.backend.executor().states().count();
            match &item.via {
                Some(entity) => {
                    self.world.speak(entity, text, item.request_id.clone(), item.speaker.clone());
                }
                None => self.console_send(Payload::GoalRequest(GoalRequestPayload {
                    request_id: item.request_id.clone(),
                    text: Some(text.clone()),
                    goal: None,
                    requested_by: item.speaker.clone(),
                })),
            }
            self.pump();
            if self.problem.is_none() {
                if let Some(st) = self.backend.executor().states().nth(before) {
                    let b = &self.backend;
                    self.problem = b.executor().problem_for(st.id(), b.model(), self.now);
                }
            }
        }
        if let Some(cancel) = &item.cancel {
            let request_id = (!cancel.is_empty()).then(|| cancel.clone());
            self.console_send(Payload::CancelRequest(CancelRequestPayload { request_id }));
        }
        if item.answer.is_some() {
            self.answers.push_back(item);
        }
    }

    /// Scripted answers wait until a prompt is open.
    fn answer_prompts(&mut self) {
        while !self.answers.is_empty() {
            let Some(prompt_id) = self.backend.open_prompts().next().map(str::to_string) else {
                return;
            };
            let item = self.answers.pop_front().expect("non-empty");
            self.console_send(Payload::Ack(AckPayload {
                prompt_id: Some(prompt_id),
                decision: item.answer,
                ..Default::default()
            }));
            self.pump();
        }
    }

    fn console_send(&mut self, payload: Payload) {
        self.next_console_msg += 1;
        let env = Envelope::new(format!("console-{}", self.next_console_msg), &self.console, payload, self.now);
        let line = encode_envelope(&env).expect("harness envelopes encode");
        let console = self.console.clone();
        let out = self.backend.receive_line(&console, &line, self.now);
        self.route(out);
    }

    fn record_sim(&mut self, events: Vec<(Millis, crate::eventlog::SimEvent)>) {
        for (at, detail) in events {
            self.backend.record(at, Event::Sim { detail });
        }
    }

    /// Shuttles lines between entities and backend until both are quiet.
    fn pump(&mut self) {
        loop {
            let outgoing = self.world.take_outbox();
            let events = self.world.take_events();
            self.record_sim(events);
            if outgoing.is_empty() {
                break;
            }
            for o in outgoing {
                let Some(sid) = self.sessions.get(&o.entity).cloned() else {
                    continue;
                };
                let out = self.backend.receive_line(&sid, &o.line, self.now);
                self.route(out);
            }
        }
    }

    fn route(&mut self, out: Vec<Outbound>) {
        for ob in out {
            if ob.session_id == self.console {
                self.console_inbox.push(ob.envelope);
            } else if let Some(entity) = self.owners.get(&ob.session_id).cloned() {
                if let Ok(line) = encode_envelope(&ob.envelope) {
                    self.world.deliver(&entity, &line);
                    let events = self.world.take_events();
                    self.record_sim(events);
                }
            } else {
                self.external.push(ob);
            }
        }
    }
}

pub fn run(scenario: Scenario, cfg: &RunConfig) -> Result<RunOutcome, String> {
    Ok(Harness::new(scenario, cfg)?.run())
}
