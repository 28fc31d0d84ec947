//! Deterministic office simulator: scenario files and the world they drive.

pub mod scenario;
pub mod world;

pub use scenario::{Response, Scenario, ScenarioError, TimelineItem};
pub use world::{Outgoing, Place, World};
