//! Goal execution: take a snapshot, plan, run the plan one step at a time
//! over leased entities, and plan again from the current state when a step
//! fails.
//!
//! The executor never talks to sessions. Every call returns a list of
//! [`Effect`]s (commands, broadcasts, log events) that the backend turns into
//! envelopes.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::time::Instant;

use thiserror::Error;

use crate::atom::{display_name, spoken, Atom, Millis, Predicate, Symbol};
use crate::entity::{
    CapabilityName, ControlLease, EntityError, EntityManager, EntityRecord, EntityStatus,
};
use crate::eventlog::Event;
use crate::knowledge::{Fact, Freshness, KnowledgeStore, Snapshot, SOURCE_INFERENCE};
use crate::planner::{
    goal_with_release, ground_domain, initial_state, is_controllable, plan, plan_person_search,
    rank_robots, ActionName, GroundAction, PersonSearch, Plan, PlanError, Problem,
};
use crate::protocol::{
    CommandPayload, GoalSpec, Outcome, Payload, PersonRequest, Phase, PlanEventPayload,
    ProgressEventPayload, RequestView, StepStatus,
};
use crate::site::SiteMap;

pub const GOAL_ACHIEVED: &str = "Goal is achieved.";
pub const KEY_HOLDER_MISSING: &str = "cannot find the person in charge of the key, the plan changed.";
pub const SEARCHING_ANOTHER: &str = "Searching for another person.";
pub const ANOTHER_FOUND: &str = "Another person is found, a new plan is set.";

/// The backend's world model: what it believes and whom it can command.
#[derive(Debug, Clone)]
pub struct Model {
    pub knowledge: KnowledgeStore,
    pub entities: EntityManager,
    pub site: SiteMap,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExecutorConfig {
    pub max_replans: u32,
    /// Command timeout as a multiple of the step's estimated duration.
    pub timeout_factor: f64,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        ExecutorConfig {
            max_replans: 3,
            timeout_factor: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoalRequest {
    pub request_id: String,
    pub goal: GoalSpec,
    pub requested_by: Symbol,
    pub submitted_at: Millis,
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Effect {
    Command { entity: Symbol, command: CommandPayload },
    /// Goes to every console and to announcing infrastructure.
    Broadcast(Payload),
    Log(Event),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SubmitError {
    #[error("request id `{0}` is already in use")]
    Duplicate(String),
    #[error("goal is empty")]
    EmptyGoal,
    #[error("`{0}` cannot be requested as a goal")]
    InternalPredicate(Predicate),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Running {
    pub command_id: String,
    pub step: usize,
    pub deadline: Millis,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionState {
    pub request: GoalRequest,
    pub plan: Plan,
    /// Number of plans installed so far.
    pub revisions: u32,
    pub cursor: usize,
    pub step_status: Vec<StepStatus>,
    pub replan_count: u32,
    pub phase: Phase,
    pub leases: Vec<ControlLease>,
    /// Persons confirmed on the spot during this request.
    pub located: BTreeSet<Atom>,
    pub unaskable: BTreeSet<Symbol>,
    pub excluded: BTreeSet<Symbol>,
    pub checked_rooms: BTreeSet<Symbol>,
    pub running: Option<Running>,
    pub percent: f64,
    pub planning_ms: Vec<u64>,
    pub answer: Option<Symbol>,
    pub reason: Option<String>,
    pub finished_at: Option<Millis>,
    done_weight: Millis,
}

impl ExecutionState {
    fn new(request: GoalRequest) -> Self {
        ExecutionState {
            plan: Plan {
                request_id: request.request_id.clone(),
                goal: BTreeSet::new(),
                steps: Vec::new(),
                created_at: request.submitted_at,
                planning_ms: 0,
            },
            request,
            revisions: 0,
            cursor: 0,
            step_status: Vec::new(),
            replan_count: 0,
            phase: Phase::Planning,
            leases: Vec::new(),
            located: BTreeSet::new(),
            unaskable: BTreeSet::new(),
            excluded: BTreeSet::new(),
            checked_rooms: BTreeSet::new(),
            running: None,
            percent: 0.0,
            planning_ms: Vec::new(),
            answer: None,
            reason: None,
            finished_at: None,
            done_weight: 0,
        }
    }

    pub fn id(&self) -> &str {
        &self.request.request_id
    }

    pub fn held(&self) -> BTreeSet<Symbol> {
        self.leases
            .iter()
            .flat_map(|l| l.entity_ids.iter().cloned())
            .collect()
    }

    /// Completed-work fraction, weighted by estimated duration.
    fn raw_percent(&self) -> f64 {
        let remaining: Millis = self
            .plan
            .steps
            .iter()
            .zip(&self.step_status)
            .filter(|(_, s)| matches!(s, StepStatus::Pending | StepStatus::Running))
            .map(|(a, _)| a.est_duration_ms.max(0))
            .sum();
        let total = self.done_weight + remaining;
        if total == 0 {
            0.0
        } else {
            100.0 * self.done_weight as f64 / total as f64
        }
    }

    fn current_step(&self) -> Option<&GroundAction> {
        self.plan.steps.get(self.cursor)
    }
}

enum Planned {
    Steps(Plan),
    Answer(Symbol),
}

#[derive(Debug, Clone, Default)]
pub struct Executor {
    config: ExecutorConfig,
    queue: VecDeque<String>,
    active: Option<String>,
    states: BTreeMap<String, ExecutionState>,
    order: Vec<String>,
    next_command: u64,
}

impl Executor {
    pub fn new(config: ExecutorConfig) -> Self {
        Executor {
            config,
            ..Default::default()
        }
    }

    pub fn config(&self) -> ExecutorConfig {
        self.config
    }

    pub fn contains(&self, request_id: &str) -> bool {
        self.states.contains_key(request_id)
    }

    pub fn state(&self, request_id: &str) -> Option<&ExecutionState> {
        self.states.get(request_id)
    }

    /// All requests in submission order.
    pub fn states(&self) -> impl Iterator<Item = &ExecutionState> {
        self.order.iter().filter_map(|id| self.states.get(id))
    }

    pub fn active(&self) -> Option<&ExecutionState> {
        self.active.as_ref().and_then(|id| self.states.get(id))
    }

    pub fn queued(&self) -> impl Iterator<Item = &str> {
        self.queue.iter().map(String::as_str)
    }

    pub fn is_idle(&self) -> bool {
        self.active.is_none() && self.queue.is_empty()
    }

    pub fn next_deadline(&self) -> Option<Millis> {
        self.active()?.running.as_ref().map(|r| r.deadline)
    }

    pub fn submit(
        &mut self,
        request: GoalRequest,
        m: &mut Model,
        now: Millis,
    ) -> Result<Vec<Effect>, SubmitError> {
        if self.states.contains_key(&request.request_id) {
            return Err(SubmitError::Duplicate(request.request_id));
        }
        match &request.goal {
            GoalSpec::Achieve { atoms } => {
                if atoms.is_empty() {
                    return Err(SubmitError::EmptyGoal);
                }
                if let Some(a) = atoms.iter().find(|a| !a.predicate.is_observable()) {
                    return Err(SubmitError::InternalPredicate(a.predicate));
                }
            }
            GoalSpec::FindPerson { person } => {
                if person.is_empty() {
                    return Err(SubmitError::EmptyGoal);
                }
            }
        }
        let mut fx = vec![Effect::Log(Event::GoalSubmitted {
            request_id: request.request_id.clone(),
            goal: request.goal.to_string(),
            requested_by: request.requested_by.clone(),
            text: request.text.clone(),
        })];
        let id = request.request_id.clone();
        self.states.insert(id.clone(), ExecutionState::new(request));
        self.order.push(id.clone());
        self.queue.push_back(id);
        self.start_next(m, now, &mut fx);
        Ok(fx)
    }

    /// Cancels a queued or running request; `None` means the running one.
    /// Returns the effects and whether anything was cancelled.
    pub fn cancel(&mut self, request_id: Option<&str>, m: &mut Model, now: Millis) -> (Vec<Effect>, bool) {
        let mut fx = Vec::new();
        let Some(id) = request_id.map(str::to_string).or_else(|| self.active.clone()) else {
            return (fx, false);
        };
        let Some(mut st) = self.states.remove(&id) else {
            return (fx, false);
        };
        if st.phase.is_terminal() {
            self.states.insert(id, st);
            return (fx, false);
        }
        self.queue.retain(|q| *q != id);
        fx.push(Effect::Log(Event::Cancelled {
            request_id: id.clone(),
        }));
        self.finish(&mut st, Phase::Cancelled, Some("cancelled on request".into()), None, m, now, &mut fx);
        self.states.insert(id, st);
        self.start_next(m, now, &mut fx);
        (fx, true)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn on_result(
        &mut self,
        request_id: &str,
        command_id: &str,
        step: usize,
        outcome: Outcome,
        reason: Option<String>,
        m: &mut Model,
        now: Millis,
    ) -> Vec<Effect> {
        let mut fx = Vec::new();
        let stale = Event::StaleResult {
            request_id: request_id.to_string(),
            command_id: command_id.to_string(),
            step,
        };
        let Some(mut st) = self.states.remove(request_id) else {
            fx.push(Effect::Log(stale));
            return fx;
        };
        let current = !st.phase.is_terminal()
            && st
                .running
                .as_ref()
                .is_some_and(|r| r.command_id == command_id && r.step == step);
        if current {
            self.finish_running(&mut st, outcome, reason, m, now, &mut fx);
        } else {
            fx.push(Effect::Log(stale));
        }
        self.states.insert(request_id.to_string(), st);
        self.start_next(m, now, &mut fx);
        fx
    }

    /// Fires command timeouts that are due.
    pub fn tick(&mut self, m: &mut Model, now: Millis) -> Vec<Effect> {
        let mut fx = Vec::new();
        let Some(id) = self.active.clone() else {
            return fx;
        };
        let due = self.states[&id].running.as_ref().is_some_and(|r| r.deadline <= now);
        if due {
            let mut st = self.states.remove(&id).expect("active state");
            let reason = "no result before the command timeout".to_string();
            self.finish_running(&mut st, Outcome::Timeout, Some(reason), m, now, &mut fx);
            self.states.insert(id, st);
            self.start_next(m, now, &mut fx);
        }
        fx
    }

    /// An entity stopped sending heartbeats; a step it was running fails.
    pub fn entity_offline(&mut self, entity: &str, m: &mut Model, now: Millis) -> Vec<Effect> {
        let mut fx = Vec::new();
        let Some(id) = self.active.clone() else {
            return fx;
        };
        let st = &self.states[&id];
        let affected = st
            .running
            .as_ref()
            .is_some_and(|r| st.plan.steps[r.step].actor == entity);
        if affected {
            let mut st = self.states.remove(&id).expect("active state");
            let reason = format!("{entity} went offline");
            self.finish_running(&mut st, Outcome::EntityFault, Some(reason), m, now, &mut fx);
            self.states.insert(id, st);
            self.start_next(m, now, &mut fx);
        }
        fx
    }

    /// The planning problem a goal request would be solved against right
    /// now, starting with no control held. `None` for person searches,
    /// which are not plain STRIPS goals.
    pub fn problem_for(&self, request_id: &str, m: &Model, now: Millis) -> Option<Problem> {
        let st = self.states.get(request_id)?;
        let GoalSpec::Achieve { atoms } = &st.request.goal else {
            return None;
        };
        let snapshot = m.knowledge.snapshot(now);
        let avail = available(st, &m.entities);
        let goal: BTreeSet<Atom> = atoms.iter().cloned().collect();
        Some(Problem {
            request_id: request_id.to_string(),
            init: initial_state(&snapshot, &avail, &BTreeSet::new(), &st.located),
            goal: goal_with_release(&goal, &avail),
            actions: ground_domain(&snapshot, &avail, &m.site)
                .into_iter()
                .filter(|a| a.person().is_none_or(|p| !st.unaskable.contains(p)))
                .collect(),
        })
    }

    pub fn request_view(&self, request_id: &str, m: &Model) -> Option<RequestView> {
        let st = self.states.get(request_id)?;
        Some(RequestView {
            request_id: st.id().to_string(),
            goal: st.request.goal.clone(),
            phase: st.phase,
            steps: st.plan.step_names(),
            step_status: st.step_status.clone(),
            cursor: st.cursor,
            percent: st.percent,
            involved: involved(st, m),
            replans: st.replan_count,
        })
    }

    fn start_next(&mut self, m: &mut Model, now: Millis, fx: &mut Vec<Effect>) {
        while self.active.is_none() {
            let Some(id) = self.queue.pop_front() else {
                return;
            };
            let mut st = self.states.remove(&id).expect("queued state");
            self.active = Some(id.clone());
            self.begin(&mut st, m, now, fx);
            self.states.insert(id, st);
        }
    }

    fn begin(&mut self, st: &mut ExecutionState, m: &mut Model, now: Millis, fx: &mut Vec<Effect>) {
        st.phase = Phase::Planning;
        match self.make_plan(st, m, now) {
            Ok(Planned::Steps(plan)) => {
                let text = plan_announcement(&plan, m);
                self.install(st, plan, text, now, fx);
                self.advance(st, m, now, fx);
            }
            Ok(Planned::Answer(room)) => {
                st.answer = Some(room);
                let empty = self.empty_plan(st, now);
                self.install(st, empty, "Plan generated. Nothing needs to be done.".into(), now, fx);
                self.advance(st, m, now, fx);
            }
            Err(why) => self.finish(st, Phase::Failed, Some(why), None, m, now, fx),
        }
    }

    fn empty_plan(&self, st: &ExecutionState, now: Millis) -> Plan {
        Plan {
            request_id: st.id().to_string(),
            goal: BTreeSet::new(),
            steps: Vec::new(),
            created_at: now,
            planning_ms: 0,
        }
    }

    fn make_plan(&self, st: &mut ExecutionState, m: &Model, now: Millis) -> Result<Planned, String> {
        let started = Instant::now();
        let result = match st.request.goal.clone() {
            GoalSpec::Achieve { atoms } => self.plan_achieve(&atoms, st, m, now).map(Planned::Steps),
            GoalSpec::FindPerson { person } => self.plan_find(&person, st, m, now),
        };
        let elapsed = started.elapsed().as_millis() as u64;
        st.planning_ms.push(elapsed);
        result.map(|planned| match planned {
            Planned::Steps(mut p) => {
                p.request_id = st.id().to_string();
                p.created_at = now;
                p.planning_ms = elapsed;
                Planned::Steps(p)
            }
            answer => answer,
        })
    }

    fn plan_achieve(&self, atoms: &[Atom], st: &ExecutionState, m: &Model, now: Millis) -> Result<Plan, String> {
        let snapshot = m.knowledge.snapshot(now);
        let avail = available(st, &m.entities);
        let held = st.held();
        let goal: BTreeSet<Atom> = atoms.iter().cloned().collect();
        let solve = |avail: &[&EntityRecord]| -> Result<Plan, PlanError> {
            let actions: Vec<GroundAction> = ground_domain(&snapshot, avail, &m.site)
                .into_iter()
                .filter(|a| a.person().is_none_or(|p| !st.unaskable.contains(p)))
                .collect();
            let init = initial_state(&snapshot, avail, &held, &st.located);
            plan(&init, &goal_with_release(&goal, avail), &actions)
        };
        let mut best = solve(&avail).map_err(|e| explain(&e, atoms, &snapshot, &avail))?;

        // Several robots could do the job: prefer the one closest to where
        // the work is, then the lowest id.
        let robots: BTreeSet<&str> = best
            .steps
            .iter()
            .flat_map(|s| s.entities())
            .filter(|e| avail.iter().any(|r| r.entity_id == *e && is_controllable(r)))
            .collect();
        if robots.len() == 1 && held.is_empty() {
            if let Some(room) = first_required_room(&best.steps) {
                let controllable: Vec<&EntityRecord> =
                    avail.iter().copied().filter(|r| is_controllable(r)).collect();
                let others: Vec<&EntityRecord> =
                    avail.iter().copied().filter(|r| !is_controllable(r)).collect();
                for candidate in rank_robots(&controllable, room, &m.site, &held) {
                    if robots.contains(candidate.entity_id.as_str()) {
                        break;
                    }
                    let mut subset = others.clone();
                    subset.push(candidate);
                    subset.sort_by(|a, b| a.entity_id.cmp(&b.entity_id));
                    if let Ok(p) = solve(&subset) {
                        if p.steps.len() == best.steps.len() {
                            best = p;
                            break;
                        }
                    }
                }
            }
        }
        Ok(best)
    }

    fn plan_find(&self, person: &str, st: &ExecutionState, m: &Model, now: Millis) -> Result<Planned, String> {
        let snapshot = m.knowledge.snapshot(now);
        let avail = available(st, &m.entities);
        let history = m.knowledge.sighting_history(person);
        // a room under a live fixed sensor would already show the person
        let mut skip = st.checked_rooms.clone();
        skip.extend(
            m.entities
                .records()
                .filter(|r| r.status != EntityStatus::Offline && !is_controllable(r))
                .filter(|r| r.has(CapabilityName::ObservePersons))
                .map(|r| r.location.clone()),
        );
        match plan_person_search(&snapshot, person, &avail, &m.site, &history, &st.held(), &skip) {
            Ok(PersonSearch::Known { room }) => Ok(Planned::Answer(room)),
            Ok(PersonSearch::Tour { plan, .. }) => Ok(Planned::Steps(plan)),
            Err(_) if !avail.iter().any(|r| is_controllable(r) && r.has(CapabilityName::MoveTo)) => {
                Err("no available entity with capability move_to".into())
            }
            Err(_) => Err(format!("{} was not found in any room", display_name(person))),
        }
    }

    fn install(&mut self, st: &mut ExecutionState, plan: Plan, announcement: String, now: Millis, fx: &mut Vec<Effect>) {
        let _ = now;
        st.step_status = vec![StepStatus::Pending; plan.steps.len()];
        st.cursor = 0;
        st.plan = plan;
        st.phase = Phase::Executing;
        let steps = st.plan.step_names();
        fx.push(Effect::Log(Event::PlanCreated {
            request_id: st.id().to_string(),
            revision: st.revisions,
            steps: steps.clone(),
        }));
        st.revisions += 1;
        fx.push(Effect::Log(Event::Announcement {
            request_id: st.id().to_string(),
            text: announcement.clone(),
        }));
        fx.push(Effect::Broadcast(Payload::PlanEvent(PlanEventPayload {
            request_id: st.id().to_string(),
            goal: st.request.goal.clone(),
            steps,
            replans: st.replan_count,
            announcement,
        })));
    }

    /// Runs backend-side steps until a command is outstanding or the plan ends.
    fn advance(&mut self, st: &mut ExecutionState, m: &mut Model, now: Millis, fx: &mut Vec<Effect>) {
        loop {
            if st.phase != Phase::Executing {
                return;
            }
            let idx = st.cursor;
            if idx >= st.plan.steps.len() {
                self.complete(st, m, now, fx);
                return;
            }
            if st.step_status[idx] == StepStatus::Skipped {
                st.cursor += 1;
                continue;
            }
            let step = st.plan.steps[idx].clone();
            st.step_status[idx] = StepStatus::Running;
            fx.push(Effect::Log(Event::StepStarted {
                request_id: st.id().to_string(),
                step: idx,
                action: step.to_string(),
            }));
            self.progress(st, m, None, fx);
            match step.name {
                ActionName::AcquireControl => {
                    let ids: BTreeSet<Symbol> = step.args.iter().cloned().collect();
                    match m.entities.acquire_control(st.id(), &ids, now) {
                        Ok(lease) => {
                            fx.push(Effect::Log(Event::LeaseAcquired {
                                lease_id: lease.lease_id.clone(),
                                request_id: st.id().to_string(),
                                entities: lease.entity_ids.iter().cloned().collect(),
                            }));
                            st.leases.push(lease);
                            self.step_done(st, idx, fx);
                        }
                        Err(EntityError::LeaseDenied { blocker, reason }) => {
                            fx.push(Effect::Log(Event::LeaseDenied {
                                request_id: st.id().to_string(),
                                blocker: blocker.clone(),
                                reason: reason.clone(),
                            }));
                            self.step_failed(st, idx, Outcome::EntityFault, fx);
                            self.exclude(st, &blocker, m, fx);
                            let note = format!("{} is not available, the plan changed.", self.speaker_name(&blocker, m));
                            self.replan(st, format!("lease denied: {blocker} is {reason}"), note, m, now, fx);
                            return;
                        }
                        Err(other) => {
                            self.step_failed(st, idx, Outcome::EntityFault, fx);
                            self.finish(st, Phase::Failed, Some(other.to_string()), None, m, now, fx);
                            return;
                        }
                    }
                }
                ActionName::ReleaseControl => {
                    let ids: BTreeSet<Symbol> = step.args.iter().cloned().collect();
                    self.release(st, &ids, m, fx);
                    self.step_done(st, idx, fx);
                }
                _ => {
                    self.dispatch(st, idx, &step, m, now, fx);
                    return;
                }
            }
        }
    }

    fn dispatch(
        &mut self,
        st: &mut ExecutionState,
        idx: usize,
        step: &GroundAction,
        m: &mut Model,
        now: Millis,
        fx: &mut Vec<Effect>,
    ) {
        let actor = step.actor.as_str();
        let record = m.entities.get(actor);
        let reachable = record.is_some_and(|r| {
            r.status != EntityStatus::Offline && (!is_controllable(r) || st.held().contains(actor))
        });
        if !reachable {
            self.step_failed(st, idx, Outcome::EntityFault, fx);
            self.exclude(st, actor, m, fx);
            let note = format!("{} is not available, the plan changed.", self.speaker_name(actor, m));
            self.replan(st, format!("{actor} cannot take commands"), note, m, now, fx);
            return;
        }
        self.next_command += 1;
        let command_id = format!("c{}", self.next_command);
        let timeout_ms = ((step.est_duration_ms.max(1) as f64) * self.config.timeout_factor).round() as Millis;
        st.running = Some(Running {
            command_id: command_id.clone(),
            step: idx,
            deadline: now + timeout_ms.max(1),
        });
        fx.push(Effect::Command {
            entity: actor.to_string(),
            command: CommandPayload {
                command_id,
                request_id: st.id().to_string(),
                step: idx,
                action: step.name,
                actor: actor.to_string(),
                args: step.args.clone(),
                timeout_ms: timeout_ms.max(1),
                say: say_text(step),
            },
        });
    }

    fn step_done(&self, st: &mut ExecutionState, idx: usize, fx: &mut Vec<Effect>) {
        let step = &st.plan.steps[idx];
        st.step_status[idx] = StepStatus::Done;
        st.done_weight += step.est_duration_ms.max(0);
        st.cursor = idx + 1;
        fx.push(Effect::Log(Event::StepFinished {
            request_id: st.id().to_string(),
            step: idx,
            action: step.to_string(),
            outcome: Outcome::Success,
        }));
    }

    fn step_failed(&self, st: &mut ExecutionState, idx: usize, outcome: Outcome, fx: &mut Vec<Effect>) {
        st.step_status[idx] = StepStatus::Failed;
        fx.push(Effect::Log(Event::StepFinished {
            request_id: st.id().to_string(),
            step: idx,
            action: st.plan.steps[idx].to_string(),
            outcome,
        }));
    }

    fn finish_running(
        &mut self,
        st: &mut ExecutionState,
        outcome: Outcome,
        reason: Option<String>,
        m: &mut Model,
        now: Millis,
        fx: &mut Vec<Effect>,
    ) {
        let Some(run) = st.running.take() else {
            return;
        };
        let idx = run.step;
        let step = st.plan.steps[idx].clone();
        let actor = self.speaker_name(&step.actor, m);
        let person = step.person().map(display_name);
        let why = |default: String| reason.clone().unwrap_or(default);
        match outcome {
            Outcome::Success => {
                self.step_done(st, idx, fx);
                apply_effects(&step, st, &mut m.knowledge, now);
                if let GoalSpec::FindPerson { person } = &st.request.goal {
                    let snapshot = m.knowledge.snapshot(now);
                    if let Some(s) = snapshot.persons.get(person) {
                        if s.freshness == Freshness::Active {
                            st.answer = Some(s.room.clone());
                            for i in st.cursor..st.plan.steps.len() {
                                if st.plan.steps[i].name != ActionName::ReleaseControl {
                                    st.step_status[i] = StepStatus::Skipped;
                                }
                            }
                        }
                    }
                }
                self.advance(st, m, now, fx);
            }
            Outcome::PersonAbsent => {
                self.step_failed(st, idx, outcome, fx);
                let p = step.person().unwrap_or_default().to_string();
                if let Some(room) = step.room() {
                    m.knowledge.retract_sighting(&p, room, now);
                    fx.push(Effect::Log(Event::SightingRetracted {
                        request_id: st.id().to_string(),
                        person: p.clone(),
                        room: room.to_string(),
                    }));
                }
                let note = if is_helper(st, idx, &p) {
                    KEY_HOLDER_MISSING.to_string()
                } else {
                    format!("cannot find {}, the plan changed.", display_name(&p))
                };
                self.replan(st, why(format!("{p} is not there")), note, m, now, fx);
            }
            Outcome::PersonDeclined => {
                self.step_failed(st, idx, outcome, fx);
                let p = step.person().unwrap_or_default().to_string();
                st.unaskable.insert(p.clone());
                let note = format!("{} cannot help, the plan changed.", person.unwrap_or_default());
                self.replan(st, why(format!("{p} declined")), note, m, now, fx);
            }
            Outcome::Timeout => {
                self.step_failed(st, idx, outcome, fx);
                let note = match (PersonRequest::for_action(step.name), step.person()) {
                    (Some(_), Some(p)) => {
                        st.unaskable.insert(p.to_string());
                        format!("{} did not answer, the plan changed.", display_name(p))
                    }
                    _ => {
                        self.exclude(st, &step.actor, m, fx);
                        format!("{actor} is not responding, the plan changed.")
                    }
                };
                self.replan(st, why("timeout".into()), note, m, now, fx);
            }
            Outcome::EntityFault => {
                self.step_failed(st, idx, outcome, fx);
                self.exclude(st, &step.actor, m, fx);
                let note = format!("{actor} cannot continue, the plan changed.");
                self.replan(st, why(format!("{} reported a fault", step.actor)), note, m, now, fx);
            }
        }
    }

    fn replan(
        &mut self,
        st: &mut ExecutionState,
        reason: String,
        note: String,
        m: &mut Model,
        now: Millis,
        fx: &mut Vec<Effect>,
    ) {
        st.running = None;
        fx.push(Effect::Log(Event::Replanning {
            request_id: st.id().to_string(),
            count: st.replan_count + 1,
            reason: reason.clone(),
        }));
        if st.replan_count >= self.config.max_replans {
            let why = format!("gave up after {} replans, last failure: {reason}", st.replan_count);
            self.finish(st, Phase::Failed, Some(why), None, m, now, fx);
            return;
        }
        st.replan_count += 1;
        st.phase = Phase::Replanning;
        self.progress(st, m, None, fx);
        let previous_helpers = helpers(&st.plan);
        match self.make_plan(st, m, now) {
            Ok(Planned::Steps(plan)) => {
                let text = if note == KEY_HOLDER_MISSING {
                    let new_helpers = helpers(&plan);
                    if !new_helpers.is_empty() && new_helpers != previous_helpers {
                        format!("{note} {SEARCHING_ANOTHER} {ANOTHER_FOUND}")
                    } else {
                        format!("{note} {SEARCHING_ANOTHER} A new plan is set.")
                    }
                } else {
                    format!("{note} A new plan is set.")
                };
                self.install(st, plan, text, now, fx);
                self.advance(st, m, now, fx);
            }
            Ok(Planned::Answer(room)) => {
                st.answer = Some(room);
                let empty = self.empty_plan(st, now);
                self.install(st, empty, format!("{note} A new plan is set."), now, fx);
                self.advance(st, m, now, fx);
            }
            Err(why) => {
                fx.push(Effect::Log(Event::Announcement {
                    request_id: st.id().to_string(),
                    text: note,
                }));
                self.finish(st, Phase::Failed, Some(why), None, m, now, fx);
            }
        }
    }

    fn complete(&mut self, st: &mut ExecutionState, m: &mut Model, now: Millis, fx: &mut Vec<Effect>) {
        match st.request.goal.clone() {
            GoalSpec::FindPerson { person } => match st.answer.clone() {
                Some(room) => {
                    let text = format!("{} is in the {}.", display_name(&person), spoken(&room));
                    self.finish(st, Phase::Done, None, Some(text), m, now, fx);
                }
                None => {
                    let why = format!("{} was not found in any room", display_name(&person));
                    self.finish(st, Phase::Failed, Some(why), None, m, now, fx);
                }
            },
            GoalSpec::Achieve { atoms } => {
                let snapshot = m.knowledge.snapshot(now);
                let missing: Vec<String> = atoms
                    .iter()
                    .filter(|a| !snapshot.contains(a))
                    .map(ToString::to_string)
                    .collect();
                if missing.is_empty() {
                    self.finish(st, Phase::Done, None, Some(GOAL_ACHIEVED.into()), m, now, fx);
                } else {
                    let reason = format!("goal not reached, missing {}", missing.join(", "));
                    self.replan(st, reason, "The plan changed.".into(), m, now, fx);
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &mut self,
        st: &mut ExecutionState,
        phase: Phase,
        reason: Option<String>,
        announcement: Option<String>,
        m: &mut Model,
        now: Millis,
        fx: &mut Vec<Effect>,
    ) {
        st.running = None;
        let everything = st.held();
        self.release(st, &everything, m, fx);
        st.phase = phase;
        st.finished_at = Some(now);
        st.reason = reason.clone();
        if phase == Phase::Done {
            st.percent = 100.0;
        }
        if let Some(text) = &announcement {
            fx.push(Effect::Log(Event::Announcement {
                request_id: st.id().to_string(),
                text: text.clone(),
            }));
        }
        fx.push(Effect::Log(Event::Progress {
            request_id: st.id().to_string(),
            percent: st.percent,
            descriptor: phase.to_string(),
        }));
        fx.push(Effect::Log(Event::Terminal {
            request_id: st.id().to_string(),
            phase,
            reason: reason.clone(),
            answer: st.answer.clone(),
        }));
        fx.push(Effect::Broadcast(Payload::ProgressEvent(ProgressEventPayload {
            request_id: st.id().to_string(),
            phase,
            percent: st.percent,
            cursor: st.cursor,
            total: st.plan.steps.len(),
            descriptor: phase.to_string(),
            involved: Vec::new(),
            announcement,
            prompt: None,
            answer: st.answer.clone(),
            message: reason,
        })));
        if self.active.as_deref() == Some(st.id()) {
            self.active = None;
        }
    }

    fn progress(&self, st: &mut ExecutionState, m: &Model, announcement: Option<String>, fx: &mut Vec<Effect>) {
        st.percent = st.percent.max(st.raw_percent());
        let descriptor = match (st.phase, st.current_step()) {
            (Phase::Executing, Some(step)) => describe(step, m),
            (phase, _) => phase.to_string(),
        };
        fx.push(Effect::Log(Event::Progress {
            request_id: st.id().to_string(),
            percent: st.percent,
            descriptor: descriptor.clone(),
        }));
        fx.push(Effect::Broadcast(Payload::ProgressEvent(ProgressEventPayload {
            request_id: st.id().to_string(),
            phase: st.phase,
            percent: st.percent,
            cursor: st.cursor,
            total: st.plan.steps.len(),
            descriptor,
            involved: involved(st, m),
            announcement,
            prompt: None,
            answer: None,
            message: None,
        })));
    }

    /// Releases `entities` from this request's leases.
    fn release(&self, st: &mut ExecutionState, entities: &BTreeSet<Symbol>, m: &mut Model, fx: &mut Vec<Effect>) {
        for lease in &mut st.leases {
            let released = m.entities.release_entities(&lease.lease_id, entities);
            if released.is_empty() {
                continue;
            }
            lease.entity_ids.retain(|e| !released.contains(e));
            fx.push(Effect::Log(Event::LeaseReleased {
                lease_id: lease.lease_id.clone(),
                request_id: st.request.request_id.clone(),
                entities: released.into_iter().collect(),
            }));
        }
        st.leases.retain(|l| !l.entity_ids.is_empty());
    }

    fn exclude(&self, st: &mut ExecutionState, entity: &str, m: &mut Model, fx: &mut Vec<Effect>) {
        st.excluded.insert(entity.to_string());
        let one: BTreeSet<Symbol> = [entity.to_string()].into_iter().collect();
        self.release(st, &one, m, fx);
    }

    fn speaker_name(&self, entity: &str, m: &Model) -> String {
        entity_name(entity, m)
    }
}

fn entity_name(entity: &str, m: &Model) -> String {
    match m.entities.get(entity) {
        Some(r) if !r.voice_label.is_empty() => r.voice_label.clone(),
        _ => display_name(entity),
    }
}

/// Entities the executor may plan with: online ones plus those this request
/// already controls, minus the ones it gave up on.
fn available<'a>(st: &ExecutionState, entities: &'a EntityManager) -> Vec<&'a EntityRecord> {
    let held = st.held();
    entities
        .records()
        .filter(|r| !st.excluded.contains(&r.entity_id))
        .filter(|r| match r.status {
            EntityStatus::Online => true,
            EntityStatus::Controlled => held.contains(&r.entity_id),
            EntityStatus::Offline => false,
        })
        .collect()
}

fn involved(st: &ExecutionState, m: &Model) -> Vec<Symbol> {
    if st.phase != Phase::Executing {
        return Vec::new();
    }
    let _ = m;
    st.current_step()
        .map(|s| s.entities().into_iter().map(str::to_string).collect())
        .unwrap_or_default()
}

/// Room of the first step that does real work; where a robot has to get to.
fn first_required_room(steps: &[GroundAction]) -> Option<&str> {
    steps
        .iter()
        .find(|s| !s.name.is_bookkeeping() && s.name != ActionName::Move)
        .and_then(|s| s.room())
        .or_else(|| steps.iter().find(|s| s.name == ActionName::Move).and_then(|s| s.room()))
}

/// Persons asked to fetch something in this plan.
fn helpers(plan: &Plan) -> BTreeSet<Symbol> {
    plan.steps
        .iter()
        .filter(|s| s.name == ActionName::AskFetch)
        .filter_map(|s| s.person().map(str::to_string))
        .collect()
}

/// Whether `person` was going to be asked to fetch something at or after `idx`.
fn is_helper(st: &ExecutionState, idx: usize, person: &str) -> bool {
    st.plan.steps[idx..]
        .iter()
        .any(|s| s.name == ActionName::AskFetch && s.person() == Some(person))
}

fn apply_effects(step: &GroundAction, st: &mut ExecutionState, knowledge: &mut KnowledgeStore, now: Millis) {
    for atom in &step.deletes {
        if atom.predicate.is_observable() && !atom.predicate.is_functional() {
            let _ = knowledge.assert_fact(Fact::retracted(atom.clone(), now, SOURCE_INFERENCE));
        }
    }
    for atom in &step.adds {
        match atom.predicate {
            Predicate::Located => {
                st.located.insert(atom.clone());
            }
            Predicate::Checked => {
                st.checked_rooms.insert(atom.arg(1).to_string());
            }
            p if p.is_observable() => {
                let _ = knowledge.assert_fact(Fact::asserted(atom.clone(), now, SOURCE_INFERENCE));
            }
            _ => {}
        }
    }
}

fn explain(err: &PlanError, atoms: &[Atom], snapshot: &Snapshot, avail: &[&EntityRecord]) -> String {
    match err {
        PlanError::SearchLimit(_) => err.to_string(),
        PlanError::Unsolvable { unsatisfiable } => {
            let known = snapshot.objects_known();
            let unknown: Vec<String> = atoms
                .iter()
                .filter(|a| a.predicate == Predicate::Holding && !known.contains(a.arg(1)))
                .map(|a| format!("stored({},?)", a.arg(1)))
                .collect();
            if !unknown.is_empty() {
                return format!("unsatisfiable {}", unknown.join(", "));
            }
            if !avail
                .iter()
                .any(|r| is_controllable(r) && r.has(CapabilityName::MoveTo))
            {
                return "no available entity with capability move_to".into();
            }
            let parts: Vec<String> = unsatisfiable.iter().map(ToString::to_string).collect();
            format!("unsatisfiable {}", parts.join(", "))
        }
    }
}

/// The operator-facing text of a step.
pub fn describe(step: &GroundAction, m: &Model) -> String {
    let a = |i: usize| step.args.get(i).map(String::as_str).unwrap_or("");
    let task = match step.name {
        ActionName::AcquireControl => return "Request control of entities".into(),
        ActionName::ReleaseControl => return "Release control of entities".into(),
        ActionName::Move => format!("go to the {}", spoken(a(1))),
        ActionName::LocatePerson => format!("look for {} in the {}", display_name(a(0)), spoken(a(1))),
        ActionName::AskFetch => format!("ask {} to fetch the {}", display_name(a(0)), spoken(a(1))),
        ActionName::ReceiveObject => format!("receive the {} from {}", spoken(a(1)), display_name(a(0))),
        ActionName::HandoverObject => {
            format!("hand the {} over to {}", spoken(a(1)), display_name(a(0)))
        }
        ActionName::Guide => format!("guide {} to the {}", display_name(a(0)), spoken(a(2))),
        ActionName::ObserveRoom => format!("look around the {}", spoken(a(0))),
        ActionName::Announce => "make an announcement".into(),
    };
    let _ = m;
    format!("executing the task of backend: {task}")
}

fn say_text(step: &GroundAction) -> Option<String> {
    let a = |i: usize| step.args.get(i).map(String::as_str).unwrap_or("");
    match step.name {
        ActionName::AskFetch => Some(format!(
            "Hello {}, could you give me the {}?",
            display_name(a(0)),
            spoken(a(1))
        )),
        ActionName::ReceiveObject => Some(format!(
            "Thank you, {}. Please put the {} on my tray.",
            display_name(a(0)),
            spoken(a(1))
        )),
        ActionName::HandoverObject => Some(format!(
            "Hello {}, here is the {}.",
            display_name(a(0)),
            spoken(a(1))
        )),
        ActionName::Guide => Some(format!(
            "Hello {}, please follow me to the {}.",
            display_name(a(0)),
            spoken(a(2))
        )),
        _ => None,
    }
}

pub fn plan_announcement(plan: &Plan, m: &Model) -> String {
    let find = |name: ActionName| plan.steps.iter().find(|s| s.name == name);
    if plan.steps.is_empty() {
        return "Plan generated. Nothing needs to be done.".into();
    }
    if let Some(s) = find(ActionName::AskFetch) {
        return format!(
            "Plan generated. {} is sent to the {} to fetch the {}.",
            entity_name(&s.actor, m),
            spoken(&s.args[3]),
            spoken(&s.args[1])
        );
    }
    if let Some(s) = find(ActionName::Guide) {
        return format!(
            "Plan generated. {} will guide {} to the {}.",
            entity_name(&s.actor, m),
            display_name(&s.args[0]),
            spoken(&s.args[2])
        );
    }
    if let Some(s) = find(ActionName::ObserveRoom) {
        return format!(
            "Plan generated. {} is sent to look for the person.",
            entity_name(&s.actor, m)
        );
    }
    if let Some(s) = find(ActionName::HandoverObject) {
        return format!(
            "Plan generated. {} will hand the {} over to {}.",
            entity_name(&s.actor, m),
            spoken(&s.args[1]),
            display_name(&s.args[0])
        );
    }
    format!("Plan generated with {} steps.", plan.steps.len())
}
