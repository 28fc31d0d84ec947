use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::atom::{Atom, Millis, Symbol};

/// Action schemas. Variants are declared in alphabetical order so the derived
/// ordering matches a lexicographic comparison of the names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionName {
    AcquireControl,
    Announce,
    AskFetch,
    Guide,
    HandoverObject,
    LocatePerson,
    Move,
    ObserveRoom,
    ReceiveObject,
    ReleaseControl,
}

impl ActionName {
    pub fn name(self) -> &'static str {
        match self {
            ActionName::AcquireControl => "acquire_control",
            ActionName::Announce => "announce",
            ActionName::AskFetch => "ask_fetch",
            ActionName::Guide => "guide",
            ActionName::HandoverObject => "handover_object",
            ActionName::LocatePerson => "locate_person",
            ActionName::Move => "move",
            ActionName::ObserveRoom => "observe_room",
            ActionName::ReceiveObject => "receive_object",
            ActionName::ReleaseControl => "release_control",
        }
    }

    /// Lease bookkeeping steps run inside the backend, not on an entity.
    pub fn is_bookkeeping(self) -> bool {
        matches!(self, ActionName::AcquireControl | ActionName::ReleaseControl)
    }

    /// Steps whose outcome depends on a person cooperating or being present.
    pub fn involves_person(self) -> bool {
        matches!(
            self,
            ActionName::AskFetch
                | ActionName::Guide
                | ActionName::HandoverObject
                | ActionName::LocatePerson
                | ActionName::ReceiveObject
        )
    }
}

impl fmt::Display for ActionName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A fully instantiated STRIPS action.
///
/// For `acquire_control`/`release_control` the `args` hold the sorted entity
/// set and `actor` is its first member. For every other action `actor` is the
/// executing entity and `args` exclude it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroundAction {
    pub name: ActionName,
    pub actor: Symbol,
    pub args: Vec<Symbol>,
    pub preconds: BTreeSet<Atom>,
    pub adds: BTreeSet<Atom>,
    pub deletes: BTreeSet<Atom>,
    pub est_duration_ms: Millis,
}

impl GroundAction {
    /// Entities this step commands or leases.
    pub fn entities(&self) -> Vec<&str> {
        if self.name.is_bookkeeping() {
            self.args.iter().map(String::as_str).collect()
        } else {
            vec![self.actor.as_str()]
        }
    }

    /// The person this step interacts with, if any.
    pub fn person(&self) -> Option<&str> {
        match self.name {
            ActionName::AskFetch
            | ActionName::Guide
            | ActionName::HandoverObject
            | ActionName::LocatePerson
            | ActionName::ReceiveObject => Some(self.args[0].as_str()),
            _ => None,
        }
    }

    /// Room where the step takes place (destination for moves).
    pub fn room(&self) -> Option<&str> {
        match self.name {
            ActionName::Move => Some(self.args[1].as_str()),
            ActionName::Guide => Some(self.args[1].as_str()),
            ActionName::ObserveRoom => Some(self.args[0].as_str()),
            ActionName::LocatePerson
            | ActionName::AskFetch
            | ActionName::ReceiveObject
            | ActionName::HandoverObject => self.args.last().map(String::as_str),
            _ => None,
        }
    }

    pub fn object(&self) -> Option<&str> {
        match self.name {
            ActionName::AskFetch | ActionName::ReceiveObject | ActionName::HandoverObject => {
                Some(self.args[1].as_str())
            }
            _ => None,
        }
    }

    pub(crate) fn sort_key(&self) -> (ActionName, &str, &[Symbol]) {
        (self.name, self.actor.as_str(), self.args.as_slice())
    }
}

impl Ord for GroundAction {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sort_key()
            .cmp(&other.sort_key())
            .then_with(|| self.preconds.cmp(&other.preconds))
            .then_with(|| self.adds.cmp(&other.adds))
            .then_with(|| self.deletes.cmp(&other.deletes))
            .then_with(|| self.est_duration_ms.cmp(&other.est_duration_ms))
    }
}

impl PartialOrd for GroundAction {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for GroundAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.name.is_bookkeeping() {
            write!(f, "{}({})", self.name, self.args.join(","))
        } else if self.args.is_empty() {
            write!(f, "{}({})", self.name, self.actor)
        } else {
            write!(f, "{}({},{})", self.name, self.actor, self.args.join(","))
        }
    }
}
