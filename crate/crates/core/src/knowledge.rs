//! Timestamped fact store.
//!
//! Every report is appended to a log; reads go through a latest-record view.
//! Location predicates (`at`, `person_at`) are functional on their first
//! argument: the newest record for a given entity or person decides where it
//! is, and a retraction as the newest record means "location unknown".
//! Person sightings decay into freshness classes; everything else is
//! non-decaying.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::atom::{Atom, AtomError, Millis, Predicate, Symbol};

pub const SOURCE_SCENARIO: &str = "scenario";
pub const SOURCE_INFERENCE: &str = "inference";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Asserted,
    Retracted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fact {
    pub atom: Atom,
    pub observed_at: Millis,
    pub source: String,
    pub polarity: Polarity,
}

impl Fact {
    pub fn asserted(atom: Atom, observed_at: Millis, source: impl Into<String>) -> Self {
        Fact {
            atom,
            observed_at,
            source: source.into(),
            polarity: Polarity::Asserted,
        }
    }

    pub fn retracted(atom: Atom, observed_at: Millis, source: impl Into<String>) -> Self {
        Fact {
            atom,
            observed_at,
            source: source.into(),
            polarity: Polarity::Retracted,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Freshness {
    Active,
    Recent,
    Expired,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreshnessWindows {
    pub active_ms: Millis,
    pub recall_ms: Millis,
}

impl Default for FreshnessWindows {
    fn default() -> Self {
        FreshnessWindows {
            active_ms: 300_000,
            recall_ms: 1_800_000,
        }
    }
}

impl FreshnessWindows {
    /// Classifies a sighting by its age. Both window bounds are inclusive.
    pub fn classify(&self, age_ms: Millis) -> Freshness {
        let age = age_ms.max(0);
        if age <= self.active_ms {
            Freshness::Active
        } else if age <= self.recall_ms {
            Freshness::Recent
        } else {
            Freshness::Expired
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sighting {
    pub room: Symbol,
    pub observed_at: Millis,
    pub freshness: Freshness,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub as_of: Millis,
    pub atoms: BTreeSet<Atom>,
    /// Latest location record per person, including expired ones.
    pub persons: BTreeMap<Symbol, Sighting>,
}

impl Snapshot {
    pub fn freshness(&self, person: &str) -> Option<Freshness> {
        self.persons.get(person).map(|s| s.freshness)
    }

    pub fn person_room(&self, person: &str) -> Option<&str> {
        self.atoms
            .iter()
            .find(|a| a.predicate == Predicate::PersonAt && a.args[0] == person)
            .map(|a| a.args[1].as_str())
    }

    pub fn contains(&self, atom: &Atom) -> bool {
        self.atoms.contains(atom)
    }

    /// Every symbol mentioned by an atom, used for name resolution.
    pub fn symbols(&self) -> BTreeSet<&str> {
        self.atoms
            .iter()
            .flat_map(|a| a.args.iter().map(String::as_str))
            .collect()
    }

    pub fn persons_known(&self) -> BTreeSet<&str> {
        self.atoms
            .iter()
            .filter_map(|a| match a.predicate {
                Predicate::PersonAt | Predicate::CanOpen | Predicate::RegisteredPerson => {
                    Some(a.args[0].as_str())
                }
                _ => None,
            })
            .chain(self.persons.keys().map(String::as_str))
            .collect()
    }

    pub fn objects_known(&self) -> BTreeSet<&str> {
        self.atoms
            .iter()
            .filter(|a| matches!(a.predicate, Predicate::Stored | Predicate::Holding))
            .map(|a| {
                if a.predicate == Predicate::Stored {
                    a.args[0].as_str()
                } else {
                    a.args[1].as_str()
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KnowledgeError {
    #[error(transparent)]
    Atom(#[from] AtomError),
    #[error("predicate `{0}` is not stored by the knowledge manager")]
    NotObservable(Predicate),
    #[error("person name must not be empty")]
    EmptyName,
}

/// Query pattern: a predicate plus one slot per argument, `None` matching anything.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pattern {
    pub predicate: Predicate,
    pub args: Vec<Option<Symbol>>,
}

impl Pattern {
    pub fn new(predicate: Predicate, args: Vec<Option<&str>>) -> Result<Self, KnowledgeError> {
        if !predicate.is_observable() {
            return Err(KnowledgeError::NotObservable(predicate));
        }
        if args.len() != predicate.arity() {
            return Err(AtomError::Arity {
                predicate,
                expected: predicate.arity(),
                got: args.len(),
            }
            .into());
        }
        Ok(Pattern {
            predicate,
            args: args.into_iter().map(|a| a.map(str::to_string)).collect(),
        })
    }

    /// Parses `person_at(andrea,?)`; `?` and `_` are wildcards.
    pub fn parse(text: &str) -> Result<Self, KnowledgeError> {
        let text = text.trim();
        let (name, rest) = text
            .split_once('(')
            .ok_or_else(|| AtomError::Malformed(text.to_string()))?;
        let inner = rest
            .strip_suffix(')')
            .ok_or_else(|| AtomError::Malformed(text.to_string()))?;
        let predicate: Predicate = name.trim().parse()?;
        let args = inner
            .split(',')
            .map(str::trim)
            .map(|a| if a == "?" || a == "_" { None } else { Some(a) })
            .collect();
        Pattern::new(predicate, args)
    }

    fn matches(&self, atom: &Atom) -> bool {
        atom.predicate == self.predicate
            && self
                .args
                .iter()
                .zip(&atom.args)
                .all(|(p, a)| p.as_ref().is_none_or(|p| p == a))
    }
}

#[derive(Debug, Clone, Default)]
pub struct KnowledgeStore {
    log: Vec<Fact>,
    windows: FreshnessWindows,
}

impl KnowledgeStore {
    pub fn new(windows: FreshnessWindows) -> Self {
        KnowledgeStore {
            log: Vec::new(),
            windows,
        }
    }

    pub fn windows(&self) -> FreshnessWindows {
        self.windows
    }

    pub fn log(&self) -> &[Fact] {
        &self.log
    }

    pub fn assert_fact(&mut self, fact: Fact) -> Result<(), KnowledgeError> {
        let predicate = fact.atom.predicate;
        if !predicate.is_observable() {
            return Err(KnowledgeError::NotObservable(predicate));
        }
        if fact.atom.args.len() != predicate.arity() {
            return Err(AtomError::Arity {
                predicate,
                expected: predicate.arity(),
                got: fact.atom.args.len(),
            }
            .into());
        }
        self.log.push(fact);
        Ok(())
    }

    pub fn retract_sighting(&mut self, person: &str, room: &str, at: Millis) {
        self.log.push(Fact::retracted(
            Atom::person_at(person, room),
            at,
            SOURCE_INFERENCE,
        ));
    }

    pub fn register_person(
        &mut self,
        name: &str,
        home_room: Option<&str>,
        at: Millis,
        source: &str,
    ) -> Result<(), KnowledgeError> {
        let name = crate::atom::normalize_symbol(name);
        if name.is_empty() {
            return Err(KnowledgeError::EmptyName);
        }
        let already = self
            .latest_view(Millis::MAX)
            .values()
            .any(|(_, f)| {
                f.atom == Atom::registered_person(&name) && f.polarity == Polarity::Asserted
            });
        if !already {
            self.log
                .push(Fact::asserted(Atom::registered_person(&name), at, source));
        }
        if let Some(room) = home_room {
            self.log.push(Fact::asserted(
                Atom::person_at(&name, &crate::atom::normalize_symbol(room)),
                at,
                source,
            ));
        }
        Ok(())
    }

    /// Newest record per atom key among facts observed no later than `as_of`,
    /// with its log position. Ties on `observed_at` go to the later entry.
    fn latest_view(&self, as_of: Millis) -> BTreeMap<&Atom, (usize, &Fact)> {
        let mut latest: BTreeMap<&Atom, (usize, &Fact)> = BTreeMap::new();
        for (i, fact) in self.log.iter().enumerate() {
            if fact.observed_at > as_of {
                continue;
            }
            match latest.get(&fact.atom) {
                Some((_, prev)) if prev.observed_at > fact.observed_at => {}
                _ => {
                    latest.insert(&fact.atom, (i, fact));
                }
            }
        }
        latest
    }

    /// Latest-record view with functional supersession applied: for `at` and
    /// `person_at`, only the newest record per first argument survives.
    fn current_records(&self, as_of: Millis) -> Vec<&Fact> {
        let mut heads: BTreeMap<(Predicate, &str), (usize, &Fact)> = BTreeMap::new();
        let mut out = Vec::new();
        for (i, fact) in self.latest_view(as_of).into_values() {
            let predicate = fact.atom.predicate;
            if !predicate.is_functional() {
                out.push(fact);
                continue;
            }
            let key = (predicate, fact.atom.args[0].as_str());
            let newer = heads
                .get(&key)
                .is_none_or(|(j, prev)| (fact.observed_at, i) > (prev.observed_at, *j));
            if newer {
                heads.insert(key, (i, fact));
            }
        }
        out.extend(heads.into_values().map(|(_, f)| f));
        out.retain(|f| f.polarity == Polarity::Asserted);
        out
    }

    pub fn snapshot(&self, as_of: Millis) -> Snapshot {
        let mut atoms = BTreeSet::new();
        let mut persons = BTreeMap::new();
        for fact in self.current_records(as_of) {
            if fact.atom.predicate == Predicate::PersonAt {
                let freshness = self.windows.classify(as_of - fact.observed_at);
                persons.insert(
                    fact.atom.args[0].clone(),
                    Sighting {
                        room: fact.atom.args[1].clone(),
                        observed_at: fact.observed_at,
                        freshness,
                    },
                );
                if freshness == Freshness::Expired {
                    continue;
                }
            }
            atoms.insert(fact.atom.clone());
        }
        Snapshot {
            as_of,
            atoms,
            persons,
        }
    }

    /// Current records matching `pattern`, sorted by atom. Freshness is not
    /// applied; callers get the observation time with every record.
    pub fn query(&self, pattern: &Pattern) -> Vec<Fact> {
        let mut hits: Vec<Fact> = self
            .current_records(Millis::MAX)
            .into_iter()
            .filter(|f| pattern.matches(&f.atom))
            .cloned()
            .collect();
        hits.sort_by(|a, b| a.atom.cmp(&b.atom));
        hits
    }

    /// Rooms where `person` was ever sighted, newest sighting first.
    pub fn sighting_history(&self, person: &str) -> Vec<(Symbol, Millis)> {
        let mut last: BTreeMap<&str, Millis> = BTreeMap::new();
        for fact in &self.log {
            if fact.atom.predicate == Predicate::PersonAt
                && fact.polarity == Polarity::Asserted
                && fact.atom.args[0] == person
            {
                let slot = last.entry(fact.atom.args[1].as_str()).or_insert(fact.observed_at);
                *slot = (*slot).max(fact.observed_at);
            }
        }
        let mut rooms: Vec<(Symbol, Millis)> =
            last.into_iter().map(|(r, t)| (r.to_string(), t)).collect();
        rooms.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        rooms
    }

    pub fn dump_ndjson<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for fact in &self.log {
            serde_json::to_writer(&mut out, fact)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}
