//! Proptest strategies for every envelope kind, and a corpus of malformed
//! lines with the error class each must produce.

use icps::atom::{Atom, Predicate};
use icps::entity::{Capability, CapabilityName, ControlLease, EntityDescriptor, EntityKind, EntityRecord, EntityStatus};
use icps::knowledge::Freshness;
use icps::planner::ActionName;
use icps::protocol::*;
use icps::site::Layout;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

pub fn sym() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_]{0,8}"
}

/// Arbitrary Unicode, control characters and quotes included.
pub fn text() -> impl Strategy<Value = String> {
    prop::collection::vec(any::<char>(), 0..16).prop_map(String::from_iter)
}

pub fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        any::<f64>().prop_filter("finite", |x| x.is_finite()),
        -1.0e6..1.0e6f64,
        Just(0.0),
    ]
}

pub fn millis() -> impl Strategy<Value = i64> {
    any::<i64>()
}

pub fn count() -> impl Strategy<Value = usize> {
    any::<u32>().prop_map(|n| n as usize)
}

pub fn atom() -> impl Strategy<Value = Atom> {
    prop::sample::select(Predicate::ALL.to_vec()).prop_flat_map(|p| {
        prop::collection::vec(sym(), p.arity()).prop_map(move |args| Atom::new(p, args).expect("arity matches"))
    })
}

pub fn atoms() -> impl Strategy<Value = Vec<Atom>> {
    prop::collection::vec(atom(), 0..5)
}

pub fn goal_spec() -> impl Strategy<Value = GoalSpec> {
    prop_oneof![
        atoms().prop_map(|atoms| GoalSpec::Achieve { atoms }),
        sym().prop_map(|person| GoalSpec::FindPerson { person }),
    ]
}

pub fn capability() -> impl Strategy<Value = Capability> {
    (
        prop::sample::select(vec![
            CapabilityName::MoveTo,
            CapabilityName::ObservePersons,
            CapabilityName::AskPerson,
            CapabilityName::ReceiveObject,
            CapabilityName::HandoverObject,
            CapabilityName::Announce,
            CapabilityName::RegisterVisitor,
        ]),
        prop::collection::btree_map(sym(), finite(), 0..3),
    )
        .prop_map(|(name, params)| Capability { name, params })
}

pub fn entity_kind() -> impl Strategy<Value = EntityKind> {
    prop::sample::select(vec![EntityKind::MobileRobot, EntityKind::SmartLobby, EntityKind::Receptionist])
}

pub fn descriptor() -> impl Strategy<Value = EntityDescriptor> {
    (sym(), entity_kind(), sym(), prop::collection::vec(capability(), 0..4), text()).prop_map(
        |(entity_id, kind, location, capabilities, voice_label)| EntityDescriptor {
            entity_id,
            kind,
            location,
            capabilities,
            voice_label,
        },
    )
}

pub fn record() -> impl Strategy<Value = EntityRecord> {
    (
        descriptor(),
        prop::sample::select(vec![EntityStatus::Online, EntityStatus::Offline, EntityStatus::Controlled]),
        millis(),
        any::<bool>(),
    )
        .prop_map(|(d, status, last_heartbeat, busy)| EntityRecord {
            entity_id: d.entity_id,
            kind: d.kind,
            location: d.location,
            capabilities: d.capabilities,
            status,
            last_heartbeat,
            busy,
            voice_label: d.voice_label,
        })
}

pub fn prompt() -> impl Strategy<Value = Prompt> {
    (
        text(),
        text(),
        sym(),
        prop::sample::select(vec![
            PersonRequest::AskFetch,
            PersonRequest::Receive,
            PersonRequest::Handover,
            PersonRequest::Guide,
        ]),
        text(),
    )
        .prop_map(|(prompt_id, request_id, person, request, text)| Prompt {
            prompt_id,
            request_id,
            person,
            request,
            text,
        })
}

pub fn phase() -> impl Strategy<Value = Phase> {
    prop::sample::select(vec![
        Phase::Planning,
        Phase::Executing,
        Phase::Replanning,
        Phase::Done,
        Phase::Failed,
        Phase::Cancelled,
    ])
}

pub fn outcome() -> impl Strategy<Value = Outcome> {
    prop::sample::select(vec![
        Outcome::Success,
        Outcome::PersonAbsent,
        Outcome::PersonDeclined,
        Outcome::Timeout,
        Outcome::EntityFault,
    ])
}

pub fn action() -> impl Strategy<Value = ActionName> {
    prop::sample::select(vec![
        ActionName::AcquireControl,
        ActionName::Announce,
        ActionName::AskFetch,
        ActionName::Guide,
        ActionName::HandoverObject,
        ActionName::LocatePerson,
        ActionName::Move,
        ActionName::ObserveRoom,
        ActionName::ReceiveObject,
        ActionName::ReleaseControl,
    ])
}

pub fn decision() -> impl Strategy<Value = Decision> {
    prop::sample::select(vec![Decision::Accept, Decision::Decline, Decision::Ignore])
}

pub fn error_code() -> impl Strategy<Value = ErrorCode> {
    prop::sample::select(vec![
        ErrorCode::FrameError,
        ErrorCode::UnknownKind,
        ErrorCode::SchemaError,
        ErrorCode::Unauthorized,
        ErrorCode::NotRegistered,
        ErrorCode::Conflict,
        ErrorCode::Validation,
        ErrorCode::NotUnderstood,
        ErrorCode::Clarification,
        ErrorCode::Unsolvable,
    ])
}

pub fn layout() -> impl Strategy<Value = Layout> {
    (finite(), finite(), finite(), finite()).prop_map(|(x, y, w, h)| Layout { x, y, w, h })
}

pub fn request_view() -> impl Strategy<Value = RequestView> {
    (
        text(),
        goal_spec(),
        phase(),
        prop::collection::vec(text(), 0..4),
        prop::collection::vec(
            prop::sample::select(vec![
                StepStatus::Pending,
                StepStatus::Running,
                StepStatus::Done,
                StepStatus::Failed,
                StepStatus::Skipped,
            ]),
            0..4,
        ),
        count(),
        0.0..=100.0f64,
        prop::collection::vec(sym(), 0..3),
        any::<u32>(),
    )
        .prop_map(
            |(request_id, goal, phase, steps, step_status, cursor, percent, involved, replans)| RequestView {
                request_id,
                goal,
                phase,
                steps,
                step_status,
                cursor,
                percent,
                involved,
                replans,
            },
        )
}

pub fn world_view() -> impl Strategy<Value = WorldView> {
    let room = (sym(), prop::collection::vec(sym(), 0..3), prop::option::of(layout()))
        .prop_map(|(id, neighbours, layout)| RoomView { id, neighbours, layout });
    let person = (
        sym(),
        sym(),
        millis(),
        prop::sample::select(vec![Freshness::Active, Freshness::Recent, Freshness::Expired]),
    )
        .prop_map(|(person, room, observed_at, freshness)| PersonView {
            person,
            room,
            observed_at,
            freshness,
        });
    let lease = (text(), text(), prop::collection::btree_set(sym(), 0..3), millis()).prop_map(
        |(lease_id, request_id, entity_ids, granted_at)| ControlLease {
            lease_id,
            request_id,
            entity_ids,
            granted_at,
        },
    );
    (
        millis(),
        prop::collection::vec(room, 0..3),
        prop::collection::vec(record(), 0..3),
        prop::collection::vec(person, 0..3),
        atoms(),
        prop::collection::vec(lease, 0..2),
        prop::option::of(request_view()),
        prop::collection::vec(text(), 0..3),
    )
        .prop_map(|(as_of, rooms, entities, persons, facts, leases, active, queued)| WorldView {
            as_of,
            rooms,
            entities,
            persons,
            facts,
            leases,
            active,
            queued,
        })
}

pub fn payload_of(kind: Kind) -> BoxedStrategy<Payload> {
    use prop::option::of;
    match kind {
        Kind::Hello => (of(descriptor()), of(sym()))
            .prop_map(|(entity, person)| Payload::Hello(HelloPayload { entity, person }))
            .boxed(),
        Kind::Ack => (of(text()), of(text()), of(prompt()), of((text(), decision())))
            .prop_map(|(request_id, note, prompt, answer)| {
                let (prompt_id, decision) = answer.map_or((None, None), |(p, d)| (Some(p), Some(d)));
                Payload::Ack(AckPayload {
                    request_id,
                    note,
                    prompt,
                    prompt_id,
                    decision,
                })
            })
            .boxed(),
        Kind::Heartbeat => (sym(), sym(), any::<bool>())
            .prop_map(|(entity_id, location, busy)| {
                Payload::Heartbeat(HeartbeatPayload {
                    entity_id,
                    location,
                    busy,
                })
            })
            .boxed(),
        Kind::Observation => (sym(), sym(), millis(), atoms())
            .prop_map(|(entity_id, room, observed_at, atoms)| {
                Payload::Observation(ObservationPayload {
                    entity_id,
                    room,
                    observed_at,
                    atoms,
                })
            })
            .boxed(),
        Kind::Command => (text(), text(), count(), action(), sym(), prop::collection::vec(sym(), 0..4), millis(), of(text()))
            .prop_map(|(command_id, request_id, step, action, actor, args, timeout_ms, say)| {
                Payload::Command(CommandPayload {
                    command_id,
                    request_id,
                    step,
                    action,
                    actor,
                    args,
                    timeout_ms,
                    say,
                })
            })
            .boxed(),
        Kind::CommandResult => (text(), text(), count(), outcome(), atoms(), of(text()))
            .prop_map(|(command_id, request_id, step, outcome, observations, reason)| {
                Payload::CommandResult(CommandResultPayload {
                    command_id,
                    request_id,
                    step,
                    outcome,
                    observations,
                    reason,
                })
            })
            .boxed(),
        Kind::GoalRequest => (
            of(text()),
            prop_oneof![text().prop_map(|t| (Some(t), None)), goal_spec().prop_map(|g| (None, Some(g)))],
            of(sym()),
        )
            .prop_map(|(request_id, (text, goal), requested_by)| {
                Payload::GoalRequest(GoalRequestPayload {
                    request_id,
                    text,
                    goal,
                    requested_by,
                })
            })
            .boxed(),
        Kind::CancelRequest => of(text())
            .prop_map(|request_id| Payload::CancelRequest(CancelRequestPayload { request_id }))
            .boxed(),
        Kind::PlanEvent => (text(), goal_spec(), prop::collection::vec(text(), 0..9), any::<u32>(), text())
            .prop_map(|(request_id, goal, steps, replans, announcement)| {
                Payload::PlanEvent(PlanEventPayload {
                    request_id,
                    goal,
                    steps,
                    replans,
                    announcement,
                })
            })
            .boxed(),
        Kind::ProgressEvent => (
            (text(), phase(), 0.0..=100.0f64, count(), count(), text()),
            (prop::collection::vec(sym(), 0..3), of(text()), of(prompt()), of(sym()), of(text())),
        )
            .prop_map(
                |((request_id, phase, percent, cursor, total, descriptor), (involved, announcement, prompt, answer, message))| {
                    Payload::ProgressEvent(ProgressEventPayload {
                        request_id,
                        phase,
                        percent,
                        cursor,
                        total,
                        descriptor,
                        involved,
                        announcement,
                        prompt,
                        answer,
                        message,
                    })
                },
            )
            .boxed(),
        Kind::StateSnapshot => of(world_view())
            .prop_map(|view| Payload::StateSnapshot(StateSnapshotPayload { view }))
            .boxed(),
        Kind::Error => (error_code(), text(), prop::collection::vec(text(), 0..3))
            .prop_map(|(code, message, near_misses)| Payload::Error(ErrorPayload { code, message, near_misses }))
            .boxed(),
    }
}

pub fn envelope_of(kind: Kind) -> impl Strategy<Value = Envelope> {
    (text(), text(), payload_of(kind), millis(), prop::option::of(text())).prop_map(
        |(msg_id, session_id, payload, sent_at, reply_to)| Envelope {
            msg_id,
            session_id,
            payload,
            sent_at,
            reply_to,
        },
    )
}

pub fn any_envelope() -> impl Strategy<Value = Envelope> {
    prop::sample::select(Kind::ALL.to_vec()).prop_flat_map(envelope_of)
}


/// Round-trips `cases` generated envelopes of every kind. Returns how many
/// were checked.
pub fn round_trip_every_kind(cases: u32) -> Result<usize, String> {
    let mut total = 0;
    for kind in Kind::ALL {
        let mut runner = TestRunner::new(Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        });
        runner
            .run(&envelope_of(kind), |env| {
                prop_assert_eq!(env.kind(), kind);
                let line = encode_envelope(&env).map_err(|e| TestCaseError::fail(e.to_string()))?;
                prop_assert_eq!(line.iter().filter(|&&b| b == b'\n').count(), 1);
                prop_assert_eq!(line.last(), Some(&b'\n'));
                let back = decode_envelope(&line).map_err(|e| TestCaseError::fail(e.to_string()))?;
                prop_assert_eq!(&back, &env);
                prop_assert_eq!(encode_envelope(&back).unwrap(), line);
                Ok(())
            })
            .map_err(|e| format!("{kind}: {e}"))?;
        total += cases as usize;
    }
    Ok(total)
}

pub const VALID: &str = r#"{"msg_id":"m1","session_id":"s1","kind":"heartbeat","payload":{"entity_id":"johnny","location":"lobby"},"sent_at":5}"#;

pub fn malformed_corpus() -> Vec<(&'static str, Vec<u8>, ErrorCode)> {
    use ErrorCode::*;
    vec![
        ("empty line", b"".to_vec(), FrameError),
        ("not json", b"hello there".to_vec(), FrameError),
        ("truncated object", VALID.as_bytes()[..40].to_vec(), FrameError),
        ("array frame", b"[1,2,3]".to_vec(), FrameError),
        ("string frame", b"\"heartbeat\"".to_vec(), FrameError),
        ("invalid utf8", b"{\"msg_id\":\"\xff\xfe\"}".to_vec(), FrameError),
        ("interior newline", format!("{VALID}\n{VALID}").into_bytes(), FrameError),
        ("oversized", format!(r#"{{"msg_id":"{}"}}"#, "x".repeat(MAX_FRAME_BYTES)).into_bytes(), FrameError),
        ("number out of range", VALID.replace(r#""sent_at":5"#, r#""sent_at":1e999"#).into_bytes(), FrameError),
        ("unknown kind", VALID.replace("heartbeat", "teleport").into_bytes(), UnknownKind),
        ("kind not a string", VALID.replace(r#""heartbeat""#, "7").into_bytes(), SchemaError),
        ("missing kind", VALID.replace(r#""kind":"heartbeat","#, "").into_bytes(), SchemaError),
        ("missing msg_id", VALID.replace(r#""msg_id":"m1","#, "").into_bytes(), SchemaError),
        ("missing payload field", VALID.replace(r#","location":"lobby""#, "").into_bytes(), SchemaError),
        ("unknown envelope field", VALID.replace(r#""sent_at":5"#, r#""sent_at":5,"extra":1"#).into_bytes(), SchemaError),
        ("unknown payload field", VALID.replace(r#""location":"lobby""#, r#""location":"lobby","speed":3"#).into_bytes(), SchemaError),
        ("wrong field type", VALID.replace(r#""sent_at":5"#, r#""sent_at":"soon""#).into_bytes(), SchemaError),
        ("payload of another kind", VALID.replace("heartbeat", "cancel_request").into_bytes(), SchemaError),
        (
            "bad atom",
            br#"{"msg_id":"m2","session_id":"s1","kind":"observation","payload":{"entity_id":"johnny","room":"lobby","observed_at":1,"atoms":["person_at(andrea)"]},"sent_at":1}"#.to_vec(),
            SchemaError,
        ),
        (
            "unknown predicate",
            br#"{"msg_id":"m2","session_id":"s1","kind":"observation","payload":{"entity_id":"johnny","room":"lobby","observed_at":1,"atoms":["flying(johnny)"]},"sent_at":1}"#.to_vec(),
            SchemaError,
        ),
        (
            "percent out of range",
            br#"{"msg_id":"m3","session_id":"s1","kind":"progress_event","payload":{"request_id":"r1","phase":"executing","percent":150.0,"cursor":1,"total":2,"descriptor":"x"},"sent_at":1}"#.to_vec(),
            SchemaError,
        ),
        (
            "goal with text and spec",
            br#"{"msg_id":"m4","session_id":"s1","kind":"goal_request","payload":{"text":"hi","goal":{"type":"find_person","person":"sarah"}},"sent_at":1}"#.to_vec(),
            SchemaError,
        ),
        (
            "goal with neither",
            br#"{"msg_id":"m5","session_id":"s1","kind":"goal_request","payload":{},"sent_at":1}"#.to_vec(),
            SchemaError,
        ),
        (
            "decision without prompt",
            br#"{"msg_id":"m6","session_id":"s1","kind":"ack","payload":{"decision":"accept"},"sent_at":1}"#.to_vec(),
            SchemaError,
        ),
        (
            "unknown goal type",
            br#"{"msg_id":"m7","session_id":"s1","kind":"goal_request","payload":{"goal":{"type":"dance"}},"sent_at":1}"#.to_vec(),
            SchemaError,
        ),
        (
            "unknown action",
            br#"{"msg_id":"m8","session_id":"s1","kind":"command","payload":{"command_id":"c","request_id":"r","step":0,"action":"fly","actor":"johnny","args":[],"timeout_ms":1},"sent_at":1}"#.to_vec(),
            SchemaError,
        ),
    ]
}

/// Every corpus line must fail with its expected error class.
pub fn check_malformed_corpus() -> Result<usize, String> {
    let corpus = malformed_corpus();
    for (name, bytes, code) in &corpus {
        match decode_envelope(bytes) {
            Ok(_) => return Err(format!("{name}: decoded")),
            Err(e) if e.code != *code => return Err(format!("{name}: expected {code}, got {e}")),
            Err(e) if e.message.is_empty() => return Err(format!("{name}: empty message")),
            Err(_) => {}
        }
    }
    Ok(corpus.len())
}
