//! Forward state-space search over ground actions.
//!
//! All actions cost one step, so uniform-cost search degenerates to
//! breadth-first search. Actions are expanded in `(name, actor, args)` order
//! and each state keeps the first path that reached it, which makes the
//! returned plan the lexicographically smallest among the shortest ones.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::atom::{Atom, Millis};
use crate::planner::action::GroundAction;

/// Upper bound on expanded states before the search gives up.
pub const DEFAULT_STATE_LIMIT: usize = 2_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub request_id: String,
    pub goal: BTreeSet<Atom>,
    pub steps: Vec<GroundAction>,
    pub created_at: Millis,
    pub planning_ms: u64,
}

impl Plan {
    pub fn step_names(&self) -> Vec<String> {
        self.steps.iter().map(ToString::to_string).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("unsolvable: cannot reach {}", render(.unsatisfiable))]
    Unsolvable { unsatisfiable: Vec<Atom> },
    #[error("search gave up after {0} states")]
    SearchLimit(usize),
}

fn render(atoms: &[Atom]) -> String {
    atoms
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Clone, PartialEq, Eq, Hash)]
struct Bits(Box<[u64]>);

impl Bits {
    fn new(len: usize) -> Self {
        Bits(vec![0; len.div_ceil(64)].into_boxed_slice())
    }
    fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }
    fn clear(&mut self, i: usize) {
        self.0[i / 64] &= !(1 << (i % 64));
    }
    fn get(&self, i: usize) -> bool {
        self.0[i / 64] & (1 << (i % 64)) != 0
    }
}

struct Compiled {
    pre: Vec<usize>,
    add: Vec<usize>,
    del: Vec<usize>,
}

struct Interner<'a> {
    ids: BTreeMap<&'a Atom, usize>,
}

impl<'a> Interner<'a> {
    fn id(&mut self, atom: &'a Atom) -> usize {
        let next = self.ids.len();
        *self.ids.entry(atom).or_insert(next)
    }
}

/// Atoms reachable when delete effects are ignored.
pub fn relaxed_reachable(init: &BTreeSet<Atom>, actions: &[GroundAction]) -> BTreeSet<Atom> {
    let mut reached = init.clone();
    loop {
        let before = reached.len();
        for action in actions {
            if action.preconds.iter().all(|p| reached.contains(p)) {
                reached.extend(action.adds.iter().cloned());
            }
        }
        if reached.len() == before {
            return reached;
        }
    }
}

fn unsolvable(init: &BTreeSet<Atom>, goal: &BTreeSet<Atom>, actions: &[GroundAction]) -> PlanError {
    let reachable = relaxed_reachable(init, actions);
    let mut missing: Vec<Atom> = goal.iter().filter(|g| !reachable.contains(g)).cloned().collect();
    if missing.is_empty() {
        missing = goal.iter().filter(|g| !init.contains(g)).cloned().collect();
    }
    PlanError::Unsolvable {
        unsatisfiable: missing,
    }
}

/// Shortest plan (by step count) from `init` to any state containing `goal`.
pub fn search(
    init: &BTreeSet<Atom>,
    goal: &BTreeSet<Atom>,
    actions: &[GroundAction],
    state_limit: usize,
) -> Result<Vec<GroundAction>, PlanError> {
    if goal.iter().all(|g| init.contains(g)) {
        return Ok(Vec::new());
    }

    let mut order: Vec<&GroundAction> = actions.iter().collect();
    order.sort();
    order.dedup();

    // Actions needing an atom that is neither initially true nor added by
    // anything can never fire.
    let producible: BTreeSet<&Atom> = init
        .iter()
        .chain(order.iter().flat_map(|a| a.adds.iter()))
        .collect();
    order.retain(|a| a.preconds.iter().all(|p| producible.contains(p)));
    if goal.iter().any(|g| !producible.contains(g)) {
        return Err(unsolvable(init, goal, actions));
    }

    let mut interner = Interner {
        ids: BTreeMap::new(),
    };
    for atom in init.iter().chain(goal.iter()) {
        interner.id(atom);
    }
    let compiled: Vec<Compiled> = order
        .iter()
        .map(|a| Compiled {
            pre: a.preconds.iter().map(|p| interner.id(p)).collect(),
            add: a.adds.iter().map(|p| interner.id(p)).collect(),
            del: a.deletes.iter().map(|p| interner.id(p)).collect(),
        })
        .collect();
    let width = interner.ids.len();
    let goal_ids: Vec<usize> = goal.iter().map(|g| interner.ids[g]).collect();

    let mut start = Bits::new(width);
    for atom in init {
        start.set(interner.ids[atom]);
    }

    // Node table: state, parent node, action index.
    let mut nodes: Vec<(Bits, usize, usize)> = vec![(start.clone(), usize::MAX, usize::MAX)];
    let mut seen: HashSet<Bits> = HashSet::new();
    seen.insert(start);
    let mut frontier = VecDeque::from([0usize]);

    while let Some(node) = frontier.pop_front() {
        for (ai, action) in compiled.iter().enumerate() {
            let state = &nodes[node].0;
            if !action.pre.iter().all(|&p| state.get(p)) {
                continue;
            }
            let mut next = state.clone();
            for &d in &action.del {
                next.clear(d);
            }
            for &a in &action.add {
                next.set(a);
            }
            if seen.contains(&next) {
                continue;
            }
            let reached_goal = goal_ids.iter().all(|&g| next.get(g));
            seen.insert(next.clone());
            nodes.push((next, node, ai));
            let id = nodes.len() - 1;
            if reached_goal {
                let mut steps = Vec::new();
                let mut cur = id;
                while nodes[cur].1 != usize::MAX {
                    steps.push(order[nodes[cur].2].clone());
                    cur = nodes[cur].1;
                }
                steps.reverse();
                return Ok(steps);
            }
            if nodes.len() > state_limit {
                return Err(PlanError::SearchLimit(state_limit));
            }
            frontier.push_back(id);
        }
    }
    Err(unsolvable(init, goal, actions))
}

/// Runs [`search`] and wraps the result with its wall-clock planning time.
pub fn plan(
    init: &BTreeSet<Atom>,
    goal: &BTreeSet<Atom>,
    actions: &[GroundAction],
) -> Result<Plan, PlanError> {
    let started = Instant::now();
    let steps = search(init, goal, actions, DEFAULT_STATE_LIMIT)?;
    Ok(Plan {
        request_id: String::new(),
        goal: goal.clone(),
        steps,
        created_at: 0,
        planning_ms: started.elapsed().as_millis() as u64,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum Violation {
    #[error("step {step} ({action}) is missing {}", render(.missing))]
    Precondition {
        step: usize,
        action: String,
        missing: Vec<Atom>,
    },
    #[error("goal not reached, missing {}", render(.missing))]
    GoalNotReached { missing: Vec<Atom> },
}

/// Forward-simulates `steps` from `init` and checks that `goal` holds at the end.
pub fn validate_steps(
    steps: &[GroundAction],
    init: &BTreeSet<Atom>,
    goal: &BTreeSet<Atom>,
) -> Result<BTreeSet<Atom>, Violation> {
    let mut state = init.clone();
    for (i, step) in steps.iter().enumerate() {
        let missing: Vec<Atom> = step
            .preconds
            .iter()
            .filter(|p| !state.contains(*p))
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(Violation::Precondition {
                step: i,
                action: step.to_string(),
                missing,
            });
        }
        for d in &step.deletes {
            state.remove(d);
        }
        state.extend(step.adds.iter().cloned());
    }
    let missing: Vec<Atom> = goal.iter().filter(|g| !state.contains(*g)).cloned().collect();
    if missing.is_empty() {
        Ok(state)
    } else {
        Err(Violation::GoalNotReached { missing })
    }
}

pub fn validate_plan(plan: &Plan, init: &BTreeSet<Atom>) -> Result<(), Violation> {
    validate_steps(&plan.steps, init, &plan.goal).map(|_| ())
}
