//! Scenario files: a TOML description of the office world.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::atom::{Atom, Millis, Symbol};
use crate::entity::{Capability, CapabilityName, EntityDescriptor, EntityKind};
use crate::knowledge::{Fact, SOURCE_SCENARIO};
use crate::protocol::{Decision, PersonRequest};
use crate::site::{Layout, SiteMap, Timing};

pub const FORMAT: u32 = 1;
pub const ABSENT: &str = "absent";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

pub fn secs(s: f64) -> Millis {
    (s * 1000.0).round() as Millis
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingSpec {
    pub sensing_s: Option<f64>,
    pub heartbeat_s: Option<f64>,
    pub observe_s: Option<f64>,
    pub interaction_s: Option<f64>,
    pub bookkeeping_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub to: Symbol,
    pub travel_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomSpec {
    pub id: Symbol,
    #[serde(default)]
    pub layout: Option<Layout>,
    #[serde(default)]
    pub edges: Vec<EdgeSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntitySpec {
    pub id: Symbol,
    pub kind: EntityKind,
    pub room: Symbol,
    #[serde(default)]
    pub voice_label: String,
    /// Defaults to the kind's standard set.
    #[serde(default)]
    pub capabilities: Option<Vec<CapabilityName>>,
    /// Stops heartbeats and ignores commands from this time on.
    #[serde(default)]
    pub silent_after_s: Option<f64>,
}

impl EntitySpec {
    pub fn descriptor(&self) -> EntityDescriptor {
        let capabilities = match &self.capabilities {
            None => self.kind.default_capabilities(),
            Some(names) => {
                let defaults = self.kind.default_capabilities();
                names
                    .iter()
                    .map(|n| {
                        defaults
                            .iter()
                            .find(|c| c.name == *n)
                            .cloned()
                            .unwrap_or_else(|| Capability::new(*n))
                    })
                    .collect()
            }
        };
        EntityDescriptor {
            entity_id: self.id.clone(),
            kind: self.kind,
            location: self.room.clone(),
            capabilities,
            voice_label: self.voice_label.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Response {
    Accept,
    Decline,
    Ignore,
    /// Ask a live console user.
    Interactive,
}

impl From<Decision> for Response {
    fn from(d: Decision) -> Self {
        match d {
            Decision::Accept => Response::Accept,
            Decision::Decline => Response::Decline,
            Decision::Ignore => Response::Ignore,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub from_s: f64,
    /// A room id or `absent`.
    pub room: Symbol,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonSpec {
    pub id: Symbol,
    #[serde(default)]
    pub can_open: Vec<Symbol>,
    #[serde(default)]
    pub visitor: bool,
    #[serde(default)]
    pub schedule: Vec<Segment>,
    /// Missing request kinds default to accept.
    #[serde(default)]
    pub responses: BTreeMap<PersonRequest, Response>,
}

impl PersonSpec {
    pub fn response(&self, request: PersonRequest) -> Response {
        self.responses.get(&request).copied().unwrap_or(Response::Accept)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageSpec {
    pub id: Symbol,
    pub room: Symbol,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub id: Symbol,
    pub storage: Symbol,
}

/// A historical fact fed to the backend before the run starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimerSpec {
    pub fact: String,
    /// Seconds relative to the scenario epoch, usually negative.
    pub offset_s: f64,
    #[serde(default = "default_primer_source")]
    pub source: String,
}

fn default_primer_source() -> String {
    SOURCE_SCENARIO.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimelineItem {
    pub at_s: f64,
    /// Command text to submit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal: Option<String>,
    #[serde(default, rename = "as", skip_serializing_if = "Option::is_none")]
    pub speaker: Option<Symbol>,
    /// Entity that relays the command; the console when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub via: Option<Symbol>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
    /// Request to cancel; an empty string means the running one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cancel: Option<String>,
    /// Answer to the oldest open prompt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<Decision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub format: u32,
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub timing: TimingSpec,
    pub rooms: Vec<RoomSpec>,
    #[serde(default)]
    pub entities: Vec<EntitySpec>,
    #[serde(default)]
    pub persons: Vec<PersonSpec>,
    #[serde(default)]
    pub storages: Vec<StorageSpec>,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub primer: Vec<PrimerSpec>,
    #[serde(default)]
    pub timeline: Vec<TimelineItem>,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Scenario::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        let scenario: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.format != FORMAT {
            return Err(invalid("format", format!("unsupported format {}, expected {FORMAT}", self.format)));
        }
        if self.rooms.is_empty() {
            return Err(invalid("rooms", "at least one room is required"));
        }
        let mut rooms = BTreeSet::new();
        for (i, room) in self.rooms.iter().enumerate() {
            if room.id.is_empty() || room.id == ABSENT {
                return Err(invalid(format!("rooms[{i}].id"), format!("`{}` is not a usable room id", room.id)));
            }
            if !rooms.insert(room.id.as_str()) {
                return Err(invalid(format!("rooms[{i}].id"), format!("duplicate room `{}`", room.id)));
            }
        }
        for (i, room) in self.rooms.iter().enumerate() {
            for (j, edge) in room.edges.iter().enumerate() {
                let field = format!("rooms[{i}].edges[{j}]");
                if !rooms.contains(edge.to.as_str()) {
                    return Err(invalid(format!("{field}.to"), format!("unknown room `{}`", edge.to)));
                }
                if !(edge.travel_seconds.is_finite() && edge.travel_seconds > 0.0) {
                    return Err(invalid(format!("{field}.travel_seconds"), "must be a positive number"));
                }
            }
        }
        if !self.site().is_connected() {
            return Err(invalid("rooms", "room graph is not connected"));
        }

        let mut names = BTreeSet::new();
        for (i, e) in self.entities.iter().enumerate() {
            if !names.insert(e.id.as_str()) {
                return Err(invalid(format!("entities[{i}].id"), format!("duplicate id `{}`", e.id)));
            }
            if !rooms.contains(e.room.as_str()) {
                return Err(invalid(format!("entities[{i}].room"), format!("unknown room `{}`", e.room)));
            }
        }
        let storages: BTreeMap<&str, &str> =
            self.storages.iter().map(|s| (s.id.as_str(), s.room.as_str())).collect();
        for (i, s) in self.storages.iter().enumerate() {
            if !rooms.contains(s.room.as_str()) {
                return Err(invalid(format!("storages[{i}].room"), format!("unknown room `{}`", s.room)));
            }
            if self.storages[..i].iter().any(|o| o.id == s.id) {
                return Err(invalid(format!("storages[{i}].id"), format!("duplicate storage `{}`", s.id)));
            }
        }
        for (i, p) in self.persons.iter().enumerate() {
            if !names.insert(p.id.as_str()) {
                return Err(invalid(format!("persons[{i}].id"), format!("duplicate id `{}`", p.id)));
            }
            for (j, s) in p.can_open.iter().enumerate() {
                if !storages.contains_key(s.as_str()) {
                    return Err(invalid(format!("persons[{i}].can_open[{j}]"), format!("unknown storage `{s}`")));
                }
            }
            let mut last = f64::NEG_INFINITY;
            for (j, seg) in p.schedule.iter().enumerate() {
                let field = format!("persons[{i}].schedule[{j}]");
                if seg.room != ABSENT && !rooms.contains(seg.room.as_str()) {
                    return Err(invalid(format!("{field}.room"), format!("unknown room `{}`", seg.room)));
                }
                if !seg.from_s.is_finite() || seg.from_s < last {
                    return Err(invalid(format!("{field}.from_s"), "segments must be in time order"));
                }
                last = seg.from_s;
            }
        }
        let mut objects = BTreeSet::new();
        for (i, o) in self.objects.iter().enumerate() {
            if !objects.insert(o.id.as_str()) || names.contains(o.id.as_str()) {
                return Err(invalid(format!("objects[{i}].id"), format!("duplicate id `{}`", o.id)));
            }
            if !storages.contains_key(o.storage.as_str()) {
                return Err(invalid(format!("objects[{i}].storage"), format!("unknown storage `{}`", o.storage)));
            }
        }
        for (i, p) in self.primer.iter().enumerate() {
            p.fact
                .parse::<Atom>()
                .map_err(|e| invalid(format!("primer[{i}].fact"), e.to_string()))?;
            if !p.offset_s.is_finite() {
                return Err(invalid(format!("primer[{i}].offset_s"), "must be a number"));
            }
        }
        for (i, t) in self.timeline.iter().enumerate() {
            let field = format!("timeline[{i}]");
            let actions = [t.goal.is_some(), t.cancel.is_some(), t.answer.is_some()];
            if actions.iter().filter(|x| **x).count() != 1 {
                return Err(invalid(field, "exactly one of goal, cancel or answer is required"));
            }
            if !(t.at_s.is_finite() && t.at_s >= 0.0) {
                return Err(invalid(format!("{field}.at_s"), "must be a non-negative number"));
            }
            if let Some(via) = &t.via {
                if !self.entities.iter().any(|e| e.id == *via) {
                    return Err(invalid(format!("{field}.via"), format!("unknown entity `{via}`")));
                }
            }
        }
        let t = &self.timing;
        for (name, v) in [
            ("sensing_s", t.sensing_s),
            ("heartbeat_s", t.heartbeat_s),
            ("observe_s", t.observe_s),
            ("interaction_s", t.interaction_s),
            ("bookkeeping_s", t.bookkeeping_s),
        ] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return Err(invalid(format!("timing.{name}"), "must be a positive number"));
                }
            }
        }
        Ok(())
    }

    pub fn timing(&self) -> Timing {
        let d = Timing::default();
        let or = |v: Option<f64>, default: Millis| v.map(secs).unwrap_or(default);
        Timing {
            sensing_tick_ms: or(self.timing.sensing_s, d.sensing_tick_ms),
            heartbeat_ms: or(self.timing.heartbeat_s, d.heartbeat_ms),
            observe_ms: or(self.timing.observe_s, d.observe_ms),
            interaction_ms: or(self.timing.interaction_s, d.interaction_ms),
            bookkeeping_ms: or(self.timing.bookkeeping_s, d.bookkeeping_ms),
        }
    }

    pub fn site(&self) -> SiteMap {
        let mut site = SiteMap::new(self.timing());
        for room in &self.rooms {
            site.add_room(&room.id);
            if let Some(layout) = room.layout {
                site.set_layout(&room.id, layout);
            }
        }
        for room in &self.rooms {
            for edge in &room.edges {
                if site.has_room(&edge.to) {
                    site.add_edge(&room.id, &edge.to, secs(edge.travel_seconds));
                }
            }
        }
        site
    }

    /// Static facts every run starts from: storage contents and locations,
    /// who can open what, plus the primer history.
    pub fn seed_facts(&self) -> Vec<Fact> {
        let mut facts = Vec::new();
        for s in &self.storages {
            facts.push(Fact::asserted(Atom::storage_at(&s.id, &s.room), 0, SOURCE_SCENARIO));
        }
        for o in &self.objects {
            facts.push(Fact::asserted(Atom::stored(&o.id, &o.storage), 0, SOURCE_SCENARIO));
        }
        for p in &self.persons {
            for s in &p.can_open {
                facts.push(Fact::asserted(Atom::can_open(&p.id, s), 0, SOURCE_SCENARIO));
            }
        }
        for p in &self.primer {
            if let Ok(atom) = p.fact.parse::<Atom>() {
                facts.push(Fact::asserted(atom, secs(p.offset_s), p.source.clone()));
            }
        }
        facts
    }

    pub fn person(&self, id: &str) -> Option<&PersonSpec> {
        self.persons.iter().find(|p| p.id == id)
    }

    pub fn entity(&self, id: &str) -> Option<&EntitySpec> {
        self.entities.iter().find(|e| e.id == id)
    }
}
