//! The run's event log: one totally ordered stream of backend and simulator
//! events, stored as NDJSON. Nothing wall-clock dependent goes in here, so
//! two runs with the same inputs produce identical files.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::atom::{Millis, Symbol};
use crate::entity::EntityKind;
use crate::protocol::{Decision, ErrorCode, Kind, Outcome, PeerKind, Phase};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimEvent {
    CommandStarted {
        entity: Symbol,
        command_id: String,
        action: String,
    },
    /// `outcome` is a step outcome, `superseded` or `no_response`.
    CommandCompleted {
        entity: Symbol,
        command_id: String,
        outcome: String,
    },
    Sighting {
        entity: Symbol,
        room: Symbol,
        persons: Vec<Symbol>,
    },
    PersonMoved {
        person: Symbol,
        from: Option<Symbol>,
        to: Option<Symbol>,
    },
    Decision {
        person: Symbol,
        request: String,
        decision: Decision,
    },
    AnnouncementRendered {
        entity: Symbol,
        text: String,
    },
}

impl SimEvent {
    fn render(&self) -> String {
        match self {
            SimEvent::CommandStarted {
                entity,
                command_id,
                action,
            } => format!("command_started {entity} {command_id} {action}"),
            SimEvent::CommandCompleted {
                entity,
                command_id,
                outcome,
            } => format!("command_completed {entity} {command_id} {outcome}"),
            SimEvent::Sighting {
                entity,
                room,
                persons,
            } => format!("sighting {entity} {room} {}", persons.join(",")),
            SimEvent::PersonMoved { person, from, to } => format!(
                "person_moved {person} {} {}",
                from.as_deref().unwrap_or("absent"),
                to.as_deref().unwrap_or("absent")
            ),
            SimEvent::Decision {
                person,
                request,
                decision,
            } => format!("decision {person} {request} {}", serde_plain(decision)),
            SimEvent::AnnouncementRendered { entity, text } => {
                format!("announcement_rendered {entity} {text}")
            }
        }
    }
}

fn serde_plain<T: Serialize>(value: &T) -> String {
    match serde_json::to_value(value) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(other) => other.to_string(),
        Err(_) => String::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    SessionOpened {
        session: String,
        peer: PeerKind,
    },
    SessionClosed {
        session: String,
        reason: String,
    },
    Inbound {
        session: String,
        from: String,
        kind: Kind,
        msg_id: String,
    },
    Outbound {
        to: String,
        kind: Kind,
        msg_id: String,
        #[serde(default, skip_serializing_if = "String::is_empty")]
        detail: String,
    },
    ProtocolError {
        session: String,
        code: ErrorCode,
        message: String,
    },
    EntityRegistered {
        entity: Symbol,
        entity_kind: EntityKind,
        room: Symbol,
    },
    EntityOffline {
        entity: Symbol,
    },
    EntityOnline {
        entity: Symbol,
    },
    VisitorRegistered {
        person: Symbol,
    },
    LeaseAcquired {
        lease_id: String,
        request_id: String,
        entities: Vec<Symbol>,
    },
    LeaseReleased {
        lease_id: String,
        request_id: String,
        entities: Vec<Symbol>,
    },
    LeaseDenied {
        request_id: String,
        blocker: Symbol,
        reason: String,
    },
    SightingRetracted {
        request_id: String,
        person: Symbol,
        room: Symbol,
    },
    GoalSubmitted {
        request_id: String,
        goal: String,
        requested_by: Symbol,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        text: Option<String>,
    },
    GoalRejected {
        session: String,
        code: ErrorCode,
        message: String,
    },
    PlanCreated {
        request_id: String,
        revision: u32,
        steps: Vec<String>,
    },
    StepStarted {
        request_id: String,
        step: usize,
        action: String,
    },
    StepFinished {
        request_id: String,
        step: usize,
        action: String,
        outcome: Outcome,
    },
    Progress {
        request_id: String,
        percent: f64,
        descriptor: String,
    },
    Announcement {
        request_id: String,
        text: String,
    },
    Replanning {
        request_id: String,
        count: u32,
        reason: String,
    },
    Cancelled {
        request_id: String,
    },
    Terminal {
        request_id: String,
        phase: Phase,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        answer: Option<Symbol>,
    },
    StaleResult {
        request_id: String,
        command_id: String,
        step: usize,
    },
    PromptRaised {
        prompt_id: String,
        entity: Symbol,
        person: Symbol,
    },
    PromptAnswered {
        prompt_id: String,
        decision: Decision,
    },
    Sim {
        detail: SimEvent,
    },
}

impl Event {
    /// One-line text form used by expectation patterns. The first word is
    /// always the event name.
    pub fn render(&self) -> String {
        match self {
            Event::SessionOpened { session, peer } => {
                format!("session_opened {session} {}", serde_plain(peer))
            }
            Event::SessionClosed { session, reason } => format!("session_closed {session} {reason}"),
            Event::Inbound {
                session,
                from,
                kind,
                msg_id,
            } => format!("inbound {from} {kind} {msg_id} {session}"),
            Event::Outbound {
                to,
                kind,
                msg_id,
                detail,
            } => {
                if detail.is_empty() {
                    format!("outbound {to} {kind} {msg_id}")
                } else {
                    format!("outbound {to} {kind} {msg_id} {detail}")
                }
            }
            Event::ProtocolError {
                session,
                code,
                message,
            } => format!("protocol_error {session} {code} {message}"),
            Event::EntityRegistered {
                entity,
                entity_kind,
                room,
            } => format!("entity_registered {entity} {} {room}", serde_plain(entity_kind)),
            Event::EntityOffline { entity } => format!("entity_offline {entity}"),
            Event::EntityOnline { entity } => format!("entity_online {entity}"),
            Event::VisitorRegistered { person } => format!("visitor_registered {person}"),
            Event::LeaseAcquired {
                lease_id,
                request_id,
                entities,
            } => format!("lease_acquired {request_id} {lease_id} {}", entities.join(",")),
            Event::LeaseReleased {
                lease_id,
                request_id,
                entities,
            } => format!("lease_released {request_id} {lease_id} {}", entities.join(",")),
            Event::LeaseDenied {
                request_id,
                blocker,
                reason,
            } => format!("lease_denied {request_id} {blocker} {reason}"),
            Event::SightingRetracted {
                request_id,
                person,
                room,
            } => format!("sighting_retracted {request_id} person_at({person},{room})"),
            Event::GoalSubmitted {
                request_id,
                goal,
                requested_by,
                ..
            } => format!("goal_submitted {request_id} {goal} {requested_by}"),
            Event::GoalRejected {
                session,
                code,
                message,
            } => format!("goal_rejected {session} {code} {message}"),
            Event::PlanCreated {
                request_id,
                revision,
                steps,
            } => format!("plan_created {request_id} {revision} {}", steps.join(" ")),
            Event::StepStarted {
                request_id,
                step,
                action,
            } => format!("step_started {request_id} {step} {action}"),
            Event::StepFinished {
                request_id,
                step,
                action,
                outcome,
            } => format!("step_finished {request_id} {step} {action} {outcome}"),
            Event::Progress {
                request_id,
                percent,
                descriptor,
            } => format!("progress {request_id} {percent:.1} {descriptor}"),
            Event::Announcement { request_id, text } => format!("announcement {request_id} {text}"),
            Event::Replanning {
                request_id,
                count,
                reason,
            } => format!("replanning {request_id} {count} {reason}"),
            Event::Cancelled { request_id } => format!("cancelled {request_id}"),
            Event::Terminal {
                request_id,
                phase,
                reason,
                answer,
            } => {
                let mut line = format!("terminal {request_id} {phase}");
                if let Some(a) = answer {
                    line.push_str(&format!(" answer={a}"));
                }
                if let Some(r) = reason {
                    line.push(' ');
                    line.push_str(r);
                }
                line
            }
            Event::StaleResult {
                request_id,
                command_id,
                step,
            } => format!("stale_result {request_id} {command_id} {step}"),
            Event::PromptRaised {
                prompt_id,
                entity,
                person,
            } => format!("prompt_raised {prompt_id} {entity} {person}"),
            Event::PromptAnswered { prompt_id, decision } => {
                format!("prompt_answered {prompt_id} {}", serde_plain(decision))
            }
            Event::Sim { detail } => format!("sim {}", detail.render()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub seq: u64,
    pub at: Millis,
    #[serde(flatten)]
    pub event: Event,
}

impl LogRecord {
    pub fn render(&self) -> String {
        self.event.render()
    }
}

#[derive(Debug, Clone, Default)]
pub struct EventLog {
    records: Vec<LogRecord>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, at: Millis, event: Event) {
        let seq = self.records.len() as u64;
        self.records.push(LogRecord { seq, at, event });
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_ndjson<W: Write>(&self, out: W) -> io::Result<()> {
        write_records(&self.records, out)
    }

    pub fn to_ndjson(&self) -> String {
        let mut buf = Vec::new();
        self.write_ndjson(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }
}

pub fn write_records<W: Write>(records: &[LogRecord], mut out: W) -> io::Result<()> {
    for record in records {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records<R: BufRead>(input: R) -> io::Result<Vec<LogRecord>> {
    let mut records = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| {
            io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1))
        })?;
        records.push(record);
    }
    Ok(records)
}
