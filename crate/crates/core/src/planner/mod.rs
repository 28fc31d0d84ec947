//! Automatic planning: grounding, shortest-plan search, validation and the
//! person-search tour.

mod action;
mod ground;
mod problem;
mod search;
mod tour;

pub use action::{ActionName, GroundAction};
pub use ground::{goal_with_release, ground_domain, initial_state, is_controllable, ANNOUNCE_TEXT};
pub use problem::Problem;
pub use search::{
    plan, relaxed_reachable, search, validate_plan, validate_steps, Plan, PlanError, Violation,
    DEFAULT_STATE_LIMIT,
};
pub use tour::{candidate_rooms, plan_person_search, rank_robots, PersonSearch};
