//! Wire protocol: one JSON envelope per line.
//!
//! The same envelope travels over the entity TCP stream and the console
//! WebSocket. Decoding distinguishes three failure classes: the line is not
//! a JSON object (`frame_error`), the kind is unknown (`unknown_kind`), or the
//! payload does not fit the kind (`schema_error`).

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::atom::{Atom, Millis, Symbol};
use crate::entity::{ControlLease, EntityDescriptor, EntityRecord};
use crate::knowledge::Freshness;
use crate::planner::ActionName;
use crate::site::Layout;

pub const MAX_FRAME_BYTES: usize = 64 * 1024;
pub const MAX_CONSECUTIVE_FRAME_ERRORS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Hello,
    Ack,
    Heartbeat,
    Observation,
    Command,
    CommandResult,
    GoalRequest,
    CancelRequest,
    PlanEvent,
    ProgressEvent,
    StateSnapshot,
    Error,
}

impl Kind {
    pub const ALL: [Kind; 12] = [
        Kind::Hello,
        Kind::Ack,
        Kind::Heartbeat,
        Kind::Observation,
        Kind::Command,
        Kind::CommandResult,
        Kind::GoalRequest,
        Kind::CancelRequest,
        Kind::PlanEvent,
        Kind::ProgressEvent,
        Kind::StateSnapshot,
        Kind::Error,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kind::Hello => "hello",
            Kind::Ack => "ack",
            Kind::Heartbeat => "heartbeat",
            Kind::Observation => "observation",
            Kind::Command => "command",
            Kind::CommandResult => "command_result",
            Kind::GoalRequest => "goal_request",
            Kind::CancelRequest => "cancel_request",
            Kind::PlanEvent => "plan_event",
            Kind::ProgressEvent => "progress_event",
            Kind::StateSnapshot => "state_snapshot",
            Kind::Error => "error",
        }
    }

    pub fn parse(name: &str) -> Option<Kind> {
        Kind::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Planning,
    Executing,
    Replanning,
    Done,
    Failed,
    Cancelled,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Done | Phase::Failed | Phase::Cancelled)
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Planning => "planning",
            Phase::Executing => "executing",
            Phase::Replanning => "replanning",
            Phase::Done => "done",
            Phase::Failed => "failed",
            Phase::Cancelled => "cancelled",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Pending,
    Running,
    Done,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    PersonAbsent,
    PersonDeclined,
    Timeout,
    EntityFault,
}

impl Outcome {
    pub fn name(self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::PersonAbsent => "person_absent",
            Outcome::PersonDeclined => "person_declined",
            Outcome::Timeout => "timeout",
            Outcome::EntityFault => "entity_fault",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// What a person is being asked to do.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PersonRequest {
    AskFetch,
    Receive,
    Handover,
    Guide,
}

impl PersonRequest {
    pub fn for_action(action: ActionName) -> Option<PersonRequest> {
        match action {
            ActionName::AskFetch => Some(PersonRequest::AskFetch),
            ActionName::ReceiveObject => Some(PersonRequest::Receive),
            ActionName::HandoverObject => Some(PersonRequest::Handover),
            ActionName::Guide => Some(PersonRequest::Guide),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PersonRequest::AskFetch => "ask_fetch",
            PersonRequest::Receive => "receive",
            PersonRequest::Handover => "handover",
            PersonRequest::Guide => "guide",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accept,
    Decline,
    Ignore,
}

/// A question put to a live human helper.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prompt {
    pub prompt_id: String,
    pub request_id: String,
    pub person: Symbol,
    pub request: PersonRequest,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum GoalSpec {
    /// Reach a state containing every atom.
    Achieve { atoms: Vec<Atom> },
    /// Report where a person is.
    FindPerson { person: Symbol },
}

impl fmt::Display for GoalSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GoalSpec::Achieve { atoms } => {
                let parts: Vec<String> = atoms.iter().map(ToString::to_string).collect();
                f.write_str(&parts.join("&"))
            }
            GoalSpec::FindPerson { person } => write!(f, "find_person({person})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HelloPayload {
    /// Present on entity sessions: the registration descriptor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity: Option<EntityDescriptor>,
    /// Present on console sessions: the operator's person id, used as the
    /// speaker of text goals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub person: Option<Symbol>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AckPayload {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    /// Raised by an entity that needs a live answer from a helper.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<Prompt>,
    /// Answer to a prompt, from a console and relayed to the entity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<Decision>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeartbeatPayload {
    pub entity_id: Symbol,
    pub location: Symbol,
    #[serde(default)]
    pub busy: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationPayload {
    pub entity_id: Symbol,
    /// Room the entity sensed.
    pub room: Symbol,
    pub observed_at: Millis,
    pub atoms: Vec<Atom>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandPayload {
    pub command_id: String,
    pub request_id: String,
    pub step: usize,
    pub action: ActionName,
    pub actor: Symbol,
    pub args: Vec<Symbol>,
    pub timeout_ms: Millis,
    /// Line the entity speaks while carrying out the step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub say: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandResultPayload {
    pub command_id: String,
    pub request_id: String,
    pub step: usize,
    pub outcome: Outcome,
    /// Facts the entity saw while executing, e.g. the persons actually present.
    #[serde(default)]
    pub observations: Vec<Atom>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalRequestPayload {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal: Option<GoalSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requested_by: Option<Symbol>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CancelRequestPayload {
    /// Omitted means the request currently executing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanEventPayload {
    pub request_id: String,
    pub goal: GoalSpec,
    pub steps: Vec<String>,
    pub replans: u32,
    pub announcement: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProgressEventPayload {
    pub request_id: String,
    pub phase: Phase,
    pub percent: f64,
    pub cursor: usize,
    pub total: usize,
    pub descriptor: String,
    #[serde(default)]
    pub involved: Vec<Symbol>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub announcement: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<Prompt>,
    /// Room where a searched person was found.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<Symbol>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomView {
    pub id: Symbol,
    pub neighbours: Vec<Symbol>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<Layout>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonView {
    pub person: Symbol,
    pub room: Symbol,
    pub observed_at: Millis,
    pub freshness: Freshness,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestView {
    pub request_id: String,
    pub goal: GoalSpec,
    pub phase: Phase,
    pub steps: Vec<String>,
    pub step_status: Vec<StepStatus>,
    pub cursor: usize,
    pub percent: f64,
    pub involved: Vec<Symbol>,
    pub replans: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldView {
    pub as_of: Millis,
    pub rooms: Vec<RoomView>,
    pub entities: Vec<EntityRecord>,
    /// Latest sighting per person, expired ones included so a console can
    /// drop them explicitly.
    pub persons: Vec<PersonView>,
    pub facts: Vec<Atom>,
    pub leases: Vec<ControlLease>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active: Option<RequestView>,
    #[serde(default)]
    pub queued: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSnapshotPayload {
    /// Empty in a query, filled in the reply.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view: Option<WorldView>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    FrameError,
    UnknownKind,
    SchemaError,
    Unauthorized,
    NotRegistered,
    Conflict,
    Validation,
    NotUnderstood,
    Clarification,
    Unsolvable,
}

impl ErrorCode {
    pub fn name(self) -> &'static str {
        match self {
            ErrorCode::FrameError => "frame_error",
            ErrorCode::UnknownKind => "unknown_kind",
            ErrorCode::SchemaError => "schema_error",
            ErrorCode::Unauthorized => "unauthorized",
            ErrorCode::NotRegistered => "not_registered",
            ErrorCode::Conflict => "conflict",
            ErrorCode::Validation => "validation",
            ErrorCode::NotUnderstood => "not_understood",
            ErrorCode::Clarification => "clarification",
            ErrorCode::Unsolvable => "unsolvable",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorPayload {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub near_misses: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Payload {
    Hello(HelloPayload),
    Ack(AckPayload),
    Heartbeat(HeartbeatPayload),
    Observation(ObservationPayload),
    Command(CommandPayload),
    CommandResult(CommandResultPayload),
    GoalRequest(GoalRequestPayload),
    CancelRequest(CancelRequestPayload),
    PlanEvent(PlanEventPayload),
    ProgressEvent(ProgressEventPayload),
    StateSnapshot(StateSnapshotPayload),
    Error(ErrorPayload),
}

impl Payload {
    pub fn kind(&self) -> Kind {
        match self {
            Payload::Hello(_) => Kind::Hello,
            Payload::Ack(_) => Kind::Ack,
            Payload::Heartbeat(_) => Kind::Heartbeat,
            Payload::Observation(_) => Kind::Observation,
            Payload::Command(_) => Kind::Command,
            Payload::CommandResult(_) => Kind::CommandResult,
            Payload::GoalRequest(_) => Kind::GoalRequest,
            Payload::CancelRequest(_) => Kind::CancelRequest,
            Payload::PlanEvent(_) => Kind::PlanEvent,
            Payload::ProgressEvent(_) => Kind::ProgressEvent,
            Payload::StateSnapshot(_) => Kind::StateSnapshot,
            Payload::Error(_) => Kind::Error,
        }
    }

    fn from_value(kind: Kind, value: Value) -> Result<Payload, serde_json::Error> {
        use serde_json::from_value as v;
        Ok(match kind {
            Kind::Hello => Payload::Hello(v(value)?),
            Kind::Ack => Payload::Ack(v(value)?),
            Kind::Heartbeat => Payload::Heartbeat(v(value)?),
            Kind::Observation => Payload::Observation(v(value)?),
            Kind::Command => Payload::Command(v(value)?),
            Kind::CommandResult => Payload::CommandResult(v(value)?),
            Kind::GoalRequest => Payload::GoalRequest(v(value)?),
            Kind::CancelRequest => Payload::CancelRequest(v(value)?),
            Kind::PlanEvent => Payload::PlanEvent(v(value)?),
            Kind::ProgressEvent => Payload::ProgressEvent(v(value)?),
            Kind::StateSnapshot => Payload::StateSnapshot(v(value)?),
            Kind::Error => Payload::Error(v(value)?),
        })
    }

    /// Constraints serde cannot express.
    fn check(&self) -> Result<(), String> {
        let finite = |x: f64, what: &str| {
            if x.is_finite() {
                Ok(())
            } else {
                Err(format!("{what} must be a finite number"))
            }
        };
        match self {
            Payload::ProgressEvent(p) => {
                finite(p.percent, "percent")?;
                if !(0.0..=100.0).contains(&p.percent) {
                    return Err("percent must lie in [0, 100]".into());
                }
            }
            Payload::GoalRequest(g) => {
                if g.text.is_some() == g.goal.is_some() {
                    return Err("goal_request needs exactly one of `text` or `goal`".into());
                }
            }
            Payload::Hello(h) => {
                if let Some(e) = &h.entity {
                    for c in &e.capabilities {
                        for x in c.params.values() {
                            finite(*x, "capability parameter")?;
                        }
                    }
                }
            }
            Payload::StateSnapshot(StateSnapshotPayload { view: Some(v) }) => {
                if let Some(a) = &v.active {
                    finite(a.percent, "percent")?;
                }
                for r in &v.rooms {
                    if let Some(l) = r.layout {
                        for x in [l.x, l.y, l.w, l.h] {
                            finite(x, "layout coordinate")?;
                        }
                    }
                }
                for e in &v.entities {
                    for c in &e.capabilities {
                        for x in c.params.values() {
                            finite(*x, "capability parameter")?;
                        }
                    }
                }
            }
            Payload::Ack(a) if a.prompt_id.is_some() != a.decision.is_some() => {
                return Err("`prompt_id` and `decision` go together".into());
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub msg_id: String,
    pub session_id: String,
    pub payload: Payload,
    pub sent_at: Millis,
    /// `msg_id` of the message this one answers.
    pub reply_to: Option<String>,
}

impl Envelope {
    pub fn new(msg_id: impl Into<String>, session_id: impl Into<String>, payload: Payload, sent_at: Millis) -> Self {
        Envelope {
            msg_id: msg_id.into(),
            session_id: session_id.into(),
            payload,
            sent_at,
            reply_to: None,
        }
    }

    pub fn replying_to(mut self, msg_id: &str) -> Self {
        self.reply_to = Some(msg_id.to_string());
        self
    }

    pub fn kind(&self) -> Kind {
        self.payload.kind()
    }
}

#[derive(Serialize)]
struct WireOut<'a> {
    msg_id: &'a str,
    session_id: &'a str,
    kind: Kind,
    payload: &'a Payload,
    sent_at: Millis,
    #[serde(skip_serializing_if = "Option::is_none")]
    reply_to: &'a Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireIn {
    msg_id: String,
    session_id: String,
    #[serde(rename = "kind")]
    _kind: Value,
    payload: Value,
    sent_at: Millis,
    #[serde(default)]
    reply_to: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{code}: {message}")]
pub struct DecodeError {
    pub code: ErrorCode,
    pub message: String,
    /// Set when the line was readable enough to name the offending message.
    pub msg_id: Option<String>,
}

impl DecodeError {
    fn new(code: ErrorCode, message: impl Into<String>, msg_id: Option<String>) -> Self {
        DecodeError {
            code,
            message: message.into(),
            msg_id,
        }
    }

    pub fn to_payload(&self) -> Payload {
        Payload::Error(ErrorPayload {
            code: self.code,
            message: self.message.clone(),
            near_misses: Vec::new(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot encode envelope: {0}")]
pub struct EncodeError(pub String);

/// Serializes an envelope as one JSON line terminated by `\n`.
pub fn encode_envelope(env: &Envelope) -> Result<Vec<u8>, EncodeError> {
    env.payload.check().map_err(EncodeError)?;
    let wire = WireOut {
        msg_id: &env.msg_id,
        session_id: &env.session_id,
        kind: env.kind(),
        payload: &env.payload,
        sent_at: env.sent_at,
        reply_to: &env.reply_to,
    };
    let mut line = serde_json::to_vec(&wire).map_err(|e| EncodeError(e.to_string()))?;
    if line.len() > MAX_FRAME_BYTES {
        return Err(EncodeError(format!(
            "frame of {} bytes exceeds the {MAX_FRAME_BYTES} byte limit",
            line.len()
        )));
    }
    line.push(b'\n');
    Ok(line)
}

pub fn encode_line(env: &Envelope) -> Result<String, EncodeError> {
    let bytes = encode_envelope(env)?;
    Ok(String::from_utf8(bytes).expect("serde_json emits UTF-8"))
}

/// Parses one line. A single trailing `\n` (or `\r\n`) is accepted.
pub fn decode_envelope(line: &[u8]) -> Result<Envelope, DecodeError> {
    let line = line.strip_suffix(b"\n").unwrap_or(line);
    let line = line.strip_suffix(b"\r").unwrap_or(line);
    if line.len() > MAX_FRAME_BYTES {
        return Err(DecodeError::new(
            ErrorCode::FrameError,
            format!("frame longer than {MAX_FRAME_BYTES} bytes"),
            None,
        ));
    }
    if line.contains(&b'\n') {
        return Err(DecodeError::new(ErrorCode::FrameError, "interior newline", None));
    }
    let value: Value = serde_json::from_slice(line)
        .map_err(|e| DecodeError::new(ErrorCode::FrameError, format!("malformed JSON: {e}"), None))?;
    let Value::Object(map) = &value else {
        return Err(DecodeError::new(ErrorCode::FrameError, "frame is not a JSON object", None));
    };
    let msg_id = map.get("msg_id").and_then(Value::as_str).map(str::to_string);
    let kind = match map.get("kind") {
        Some(Value::String(name)) => Kind::parse(name).ok_or_else(|| {
            DecodeError::new(ErrorCode::UnknownKind, format!("unknown kind `{name}`"), msg_id.clone())
        })?,
        Some(_) => {
            return Err(DecodeError::new(ErrorCode::SchemaError, "`kind` must be a string", msg_id))
        }
        None => return Err(DecodeError::new(ErrorCode::SchemaError, "missing field `kind`", msg_id)),
    };
    let wire: WireIn = serde_json::from_value(value)
        .map_err(|e| DecodeError::new(ErrorCode::SchemaError, e.to_string(), msg_id.clone()))?;
    let payload = Payload::from_value(kind, wire.payload).map_err(|e| {
        DecodeError::new(ErrorCode::SchemaError, format!("{kind} payload: {e}"), msg_id.clone())
    })?;
    payload
        .check()
        .map_err(|e| DecodeError::new(ErrorCode::SchemaError, format!("{kind} payload: {e}"), msg_id.clone()))?;
    Ok(Envelope {
        msg_id: wire.msg_id,
        session_id: wire.session_id,
        payload,
        sent_at: wire.sent_at,
        reply_to: wire.reply_to,
    })
}

/// Splits a byte stream into lines. Only complete lines are handed out; a
/// line that grows past the frame limit is dropped up to its newline and
/// reported once as a frame error.
#[derive(Debug, Default)]
pub struct LineFramer {
    buf: Vec<u8>,
    overflowed: bool,
}

impl LineFramer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) -> Vec<Result<Vec<u8>, DecodeError>> {
        let mut out = Vec::new();
        for &b in bytes {
            if b == b'\n' {
                if self.overflowed {
                    self.overflowed = false;
                } else {
                    out.push(Ok(std::mem::take(&mut self.buf)));
                }
                self.buf.clear();
                continue;
            }
            if self.overflowed {
                continue;
            }
            self.buf.push(b);
            if self.buf.len() > MAX_FRAME_BYTES {
                self.buf.clear();
                self.overflowed = true;
                out.push(Err(DecodeError::new(
                    ErrorCode::FrameError,
                    format!("frame longer than {MAX_FRAME_BYTES} bytes"),
                    None,
                )));
            }
        }
        out
    }

    /// Bytes of an unfinished line still buffered.
    pub fn pending(&self) -> usize {
        self.buf.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeerKind {
    Entity,
    Console,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub session_id: String,
    pub peer_kind: PeerKind,
    pub authenticated_entity: Option<Symbol>,
    /// Operator identity announced by a console hello.
    pub operator: Option<Symbol>,
    pub opened_at: Millis,
    pub frame_errors: u32,
}

impl Session {
    pub fn new(session_id: impl Into<String>, peer_kind: PeerKind, opened_at: Millis) -> Self {
        Session {
            session_id: session_id.into(),
            peer_kind,
            authenticated_entity: None,
            operator: None,
            opened_at,
            frame_errors: 0,
        }
    }

    /// Counts a decode result; returns true when the session must close.
    pub fn note_decode(&mut self, result: &Result<Envelope, DecodeError>) -> bool {
        match result {
            Err(e) if e.code == ErrorCode::FrameError => {
                self.frame_errors += 1;
                self.frame_errors >= MAX_CONSECUTIVE_FRAME_ERRORS
            }
            _ => {
                self.frame_errors = 0;
                false
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    EntityManager,
    KnowledgeManager,
    Executor,
    /// Helper prompts and answers passing between an entity and the consoles.
    PromptRelay,
    Snapshot,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RouteError {
    #[error("`{kind}` is not accepted from {peer:?} sessions")]
    Unauthorized { kind: Kind, peer: PeerKind },
    #[error("entity session has not completed hello")]
    NotRegistered,
}

/// Routes by kind and session role. Entity sessions must complete `hello`
/// before anything else; goal and cancel requests from entities are only
/// taken from entities that can hear people (announce-capable, non-mobile),
/// which is enforced by the caller since it needs the registry.
pub fn route(env: &Envelope, session: &Session) -> Result<Target, RouteError> {
    let kind = env.kind();
    let unauthorized = || RouteError::Unauthorized {
        kind,
        peer: session.peer_kind,
    };
    match session.peer_kind {
        PeerKind::Entity => {
            if kind != Kind::Hello && session.authenticated_entity.is_none() {
                return Err(RouteError::NotRegistered);
            }
            match &env.payload {
                Payload::Hello(h) if h.entity.is_some() => Ok(Target::EntityManager),
                Payload::Heartbeat(_) => Ok(Target::EntityManager),
                Payload::Observation(_) => Ok(Target::KnowledgeManager),
                Payload::CommandResult(_) => Ok(Target::Executor),
                Payload::GoalRequest(_) | Payload::CancelRequest(_) => Ok(Target::Executor),
                Payload::Ack(a) if a.prompt.is_some() => Ok(Target::PromptRelay),
                _ => Err(unauthorized()),
            }
        }
        PeerKind::Console => match &env.payload {
            Payload::Hello(h) if h.entity.is_none() => Ok(Target::EntityManager),
            Payload::GoalRequest(_) | Payload::CancelRequest(_) => Ok(Target::Executor),
            Payload::StateSnapshot(s) if s.view.is_none() => Ok(Target::Snapshot),
            Payload::Ack(a) if a.decision.is_some() && a.prompt.is_none() => Ok(Target::PromptRelay),
            _ => Err(unauthorized()),
        },
    }
}
