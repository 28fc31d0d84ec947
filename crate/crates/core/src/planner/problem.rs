//! Standalone problem files: the grounded init, goal and action set of one
//! planning call, so instances can be replayed outside a run.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::atom::Atom;
use crate::planner::action::GroundAction;
use crate::planner::search::{plan, Plan, PlanError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    #[serde(default)]
    pub request_id: String,
    pub init: BTreeSet<Atom>,
    pub goal: BTreeSet<Atom>,
    pub actions: Vec<GroundAction>,
}

impl Problem {
    pub fn solve(&self) -> Result<Plan, PlanError> {
        let mut solved = plan(&self.init, &self.goal, &self.actions)?;
        solved.request_id = self.request_id.clone();
        Ok(solved)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}
