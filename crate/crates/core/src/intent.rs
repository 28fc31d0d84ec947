//! Command text to goals. A small closed grammar; names must match a known
//! symbol exactly once lowercased and underscore-joined.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::atom::{normalize_symbol, Atom, Symbol};
use crate::knowledge::Snapshot;
use crate::protocol::GoalSpec;

pub const PHRASINGS: [&str; 5] = [
    "i want <object>",
    "bring me <object>",
    "bring <object> to <person>",
    "where is <person>",
    "guide <person|me> to <room|person>",
];

const FILLER: [&str; 4] = ["the", "a", "an", "please"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IntentError {
    #[error("not understood, try: {}", .phrasings.join(" | "))]
    NotUnderstood { phrasings: Vec<String> },
    #[error("{message}")]
    Clarification {
        message: String,
        near_misses: Vec<Symbol>,
    },
}

impl IntentError {
    fn not_understood() -> Self {
        IntentError::NotUnderstood {
            phrasings: PHRASINGS.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn near_misses(&self) -> &[Symbol] {
        match self {
            IntentError::Clarification { near_misses, .. } => near_misses,
            IntentError::NotUnderstood { .. } => &[],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Noun {
    Object,
    Person,
    Room,
}

impl Noun {
    fn label(self) -> &'static str {
        match self {
            Noun::Object => "object",
            Noun::Person => "person",
            Noun::Room => "room",
        }
    }
}

struct Vocabulary<'a> {
    objects: BTreeSet<&'a str>,
    persons: BTreeSet<&'a str>,
    rooms: BTreeSet<&'a str>,
}

impl<'a> Vocabulary<'a> {
    fn of(&self, noun: Noun) -> &BTreeSet<&'a str> {
        match noun {
            Noun::Object => &self.objects,
            Noun::Person => &self.persons,
            Noun::Room => &self.rooms,
        }
    }

    fn resolve(&self, words: &[&str], nouns: &[Noun]) -> Result<(Noun, Symbol), IntentError> {
        let symbol = normalize_symbol(&words.join(" "));
        let hits: Vec<Noun> = nouns
            .iter()
            .copied()
            .filter(|n| self.of(*n).contains(symbol.as_str()))
            .collect();
        match hits.as_slice() {
            [one] => Ok((*one, symbol)),
            [] => {
                let labels: Vec<&str> = nouns.iter().map(|n| n.label()).collect();
                Err(IntentError::Clarification {
                    message: format!("unknown {} `{symbol}`", labels.join(" or ")),
                    near_misses: self.near_misses(&symbol, nouns),
                })
            }
            _ => Err(IntentError::Clarification {
                message: format!("`{symbol}` is ambiguous"),
                near_misses: vec![symbol],
            }),
        }
    }

    /// Known symbols sharing a word with `symbol` or within two edits of it.
    fn near_misses(&self, symbol: &str, nouns: &[Noun]) -> Vec<Symbol> {
        let words: BTreeSet<&str> = symbol.split('_').collect();
        let mut out: BTreeSet<Symbol> = BTreeSet::new();
        for noun in nouns {
            for known in self.of(*noun) {
                let shares = known.split('_').any(|w| words.contains(w));
                if shares || strsim::levenshtein(known, symbol) <= 2 {
                    out.insert(known.to_string());
                }
            }
        }
        out.into_iter().collect()
    }
}

fn tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '_' || c == '-'))
        .filter(|w| !w.is_empty() && !FILLER.contains(w))
        .map(str::to_string)
        .collect()
}

/// Parses one command. `speaker` is the already-resolved requester, needed
/// only by first-person phrasings.
pub fn parse_command<'a>(
    text: &str,
    speaker: Option<&str>,
    snapshot: &'a Snapshot,
    rooms: impl IntoIterator<Item = &'a str>,
) -> Result<GoalSpec, IntentError> {
    let vocab = Vocabulary {
        objects: snapshot.objects_known(),
        persons: snapshot.persons_known(),
        rooms: rooms.into_iter().collect(),
    };
    let owned = tokens(text);
    let t: Vec<&str> = owned.iter().map(String::as_str).collect();
    let to_split = |rest: &[&str]| -> Option<usize> { rest.iter().rposition(|w| *w == "to") };
    let me = || {
        speaker.map(str::to_string).ok_or_else(|| IntentError::Clarification {
            message: "cannot tell who is asking".into(),
            near_misses: Vec::new(),
        })
    };
    let holding = |holder: Symbol, object: Symbol| GoalSpec::Achieve {
        atoms: vec![Atom::holding(&holder, &object)],
    };

    match t.as_slice() {
        ["i", "want" | "need", rest @ ..] | ["bring" | "get", "me", rest @ ..] if !rest.is_empty() => {
            let (_, object) = vocab.resolve(rest, &[Noun::Object])?;
            Ok(holding(me()?, object))
        }
        ["where", "is", rest @ ..] if !rest.is_empty() => {
            let (_, person) = vocab.resolve(rest, &[Noun::Person])?;
            Ok(GoalSpec::FindPerson { person })
        }
        ["bring" | "take", rest @ ..] => {
            let Some(at) = to_split(rest).filter(|&i| i > 0 && i + 1 < rest.len()) else {
                return Err(IntentError::not_understood());
            };
            let (_, object) = vocab.resolve(&rest[..at], &[Noun::Object])?;
            let (_, person) = vocab.resolve(&rest[at + 1..], &[Noun::Person])?;
            Ok(holding(person, object))
        }
        ["guide", rest @ ..] => {
            let Some(at) = to_split(rest).filter(|&i| i > 0 && i + 1 < rest.len()) else {
                return Err(IntentError::not_understood());
            };
            let person = match &rest[..at] {
                ["me"] => me()?,
                words => vocab.resolve(words, &[Noun::Person])?.1,
            };
            let (kind, target) = vocab.resolve(&rest[at + 1..], &[Noun::Room, Noun::Person])?;
            let room = match kind {
                Noun::Room => target,
                _ => snapshot
                    .person_room(&target)
                    .map(str::to_string)
                    .ok_or_else(|| IntentError::Clarification {
                        message: format!("where `{target}` is right now is not known"),
                        near_misses: Vec::new(),
                    })?,
            };
            Ok(GoalSpec::Achieve {
                atoms: vec![Atom::person_at(&person, &room)],
            })
        }
        _ => Err(IntentError::not_understood()),
    }
}
