//! Ground atoms shared by the knowledge store, the planner and the wire protocol.
//!
//! Atoms render as `predicate(arg1,arg2)` and that text form is also their
//! JSON representation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Milliseconds since the scenario epoch. Negative values are historical
/// (primer facts observed before the run started).
pub type Millis = i64;

pub type Symbol = String;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    At,
    PersonAt,
    Holding,
    Stored,
    StorageAt,
    CanOpen,
    RegisteredPerson,
    // planner-only bookkeeping predicates
    Controlled,
    Free,
    Located,
    Checked,
}

impl Predicate {
    pub const ALL: [Predicate; 11] = [
        Predicate::At,
        Predicate::PersonAt,
        Predicate::Holding,
        Predicate::Stored,
        Predicate::StorageAt,
        Predicate::CanOpen,
        Predicate::RegisteredPerson,
        Predicate::Controlled,
        Predicate::Free,
        Predicate::Located,
        Predicate::Checked,
    ];

    /// Predicates that entities may report and the knowledge store keeps.
    pub const OBSERVABLE: [Predicate; 7] = [
        Predicate::At,
        Predicate::PersonAt,
        Predicate::Holding,
        Predicate::Stored,
        Predicate::StorageAt,
        Predicate::CanOpen,
        Predicate::RegisteredPerson,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Predicate::At => "at",
            Predicate::PersonAt => "person_at",
            Predicate::Holding => "holding",
            Predicate::Stored => "stored",
            Predicate::StorageAt => "storage_at",
            Predicate::CanOpen => "can_open",
            Predicate::RegisteredPerson => "registered_person",
            Predicate::Controlled => "controlled",
            Predicate::Free => "free",
            Predicate::Located => "located",
            Predicate::Checked => "checked",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Predicate::RegisteredPerson | Predicate::Controlled | Predicate::Free => 1,
            _ => 2,
        }
    }

    pub fn is_observable(self) -> bool {
        Self::OBSERVABLE.contains(&self)
    }

    /// Location predicates: a new record for the same first argument
    /// supersedes every older record with a different second argument.
    pub fn is_functional(self) -> bool {
        matches!(self, Predicate::At | Predicate::PersonAt)
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Predicate {
    type Err = AtomError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|p| p.name() == s)
            .ok_or_else(|| AtomError::UnknownPredicate(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AtomError {
    #[error("unknown predicate `{0}`")]
    UnknownPredicate(String),
    #[error("{predicate} takes {expected} argument(s), got {got}")]
    Arity {
        predicate: Predicate,
        expected: usize,
        got: usize,
    },
    #[error("malformed atom `{0}`")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Atom {
    pub predicate: Predicate,
    pub args: Vec<Symbol>,
}

impl Atom {
    pub fn new<I, S>(predicate: Predicate, args: I) -> Result<Self, AtomError>
    where
        I: IntoIterator<Item = S>,
        S: Into<Symbol>,
    {
        let args: Vec<Symbol> = args.into_iter().map(Into::into).collect();
        if args.len() != predicate.arity() {
            return Err(AtomError::Arity {
                predicate,
                expected: predicate.arity(),
                got: args.len(),
            });
        }
        Ok(Atom { predicate, args })
    }

    fn pair(predicate: Predicate, a: &str, b: &str) -> Self {
        Atom {
            predicate,
            args: vec![a.to_string(), b.to_string()],
        }
    }

    fn single(predicate: Predicate, a: &str) -> Self {
        Atom {
            predicate,
            args: vec![a.to_string()],
        }
    }

    pub fn at(entity: &str, room: &str) -> Self {
        Self::pair(Predicate::At, entity, room)
    }
    pub fn person_at(person: &str, room: &str) -> Self {
        Self::pair(Predicate::PersonAt, person, room)
    }
    pub fn holding(holder: &str, object: &str) -> Self {
        Self::pair(Predicate::Holding, holder, object)
    }
    pub fn stored(object: &str, storage: &str) -> Self {
        Self::pair(Predicate::Stored, object, storage)
    }
    pub fn storage_at(storage: &str, room: &str) -> Self {
        Self::pair(Predicate::StorageAt, storage, room)
    }
    pub fn can_open(person: &str, storage: &str) -> Self {
        Self::pair(Predicate::CanOpen, person, storage)
    }
    pub fn registered_person(person: &str) -> Self {
        Self::single(Predicate::RegisteredPerson, person)
    }
    pub fn controlled(entity: &str) -> Self {
        Self::single(Predicate::Controlled, entity)
    }
    pub fn free(entity: &str) -> Self {
        Self::single(Predicate::Free, entity)
    }
    pub fn located(person: &str, room: &str) -> Self {
        Self::pair(Predicate::Located, person, room)
    }
    pub fn checked(entity: &str, room: &str) -> Self {
        Self::pair(Predicate::Checked, entity, room)
    }

    pub fn arg(&self, i: usize) -> &str {
        &self.args[i]
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.predicate, self.args.join(","))
    }
}

impl FromStr for Atom {
    type Err = AtomError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (name, rest) = s
            .split_once('(')
            .ok_or_else(|| AtomError::Malformed(s.to_string()))?;
        let inner = rest
            .strip_suffix(')')
            .ok_or_else(|| AtomError::Malformed(s.to_string()))?;
        let predicate: Predicate = name.trim().parse()?;
        let args: Vec<&str> = if inner.trim().is_empty() {
            Vec::new()
        } else {
            inner.split(',').map(str::trim).collect()
        };
        if args.iter().any(|a| a.is_empty()) {
            return Err(AtomError::Malformed(s.to_string()));
        }
        Atom::new(predicate, args)
    }
}

impl Serialize for Atom {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Atom {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Canonical symbol spelling: lowercase words joined by underscores.
pub fn normalize_symbol(text: &str) -> Symbol {
    text.split(|c: char| c.is_whitespace() || c == '_' || c == '-')
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join("_")
}

/// Inverse of [`normalize_symbol`] for speech-like output.
pub fn spoken(symbol: &str) -> String {
    symbol.replace('_', " ")
}

/// `andrea` -> `Andrea`, used for names in announcements.
pub fn display_name(symbol: &str) -> String {
    let mut chars = symbol.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect::<String>().replace('_', " "),
        None => String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_form_round_trips() {
        let atom = Atom::holding("markus", "smart_safety_belt");
        assert_eq!(atom.to_string(), "holding(markus,smart_safety_belt)");
        assert_eq!("holding(markus, smart_safety_belt)".parse::<Atom>().unwrap(), atom);
    }

    #[test]
    fn arity_is_checked() {
        assert!(matches!(
            "registered_person(a,b)".parse::<Atom>(),
            Err(AtomError::Arity { expected: 1, got: 2, .. })
        ));
        assert!(matches!(
            "teleported(a)".parse::<Atom>(),
            Err(AtomError::UnknownPredicate(_))
        ));
        assert!("at(a,)".parse::<Atom>().is_err());
    }

    #[test]
    fn symbols_normalize() {
        assert_eq!(normalize_symbol("Smart  Safety belt"), "smart_safety_belt");
        assert_eq!(spoken("secretary_office"), "secretary office");
        assert_eq!(display_name("johnny"), "Johnny");
    }
}
