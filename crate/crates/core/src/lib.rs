//! Centralized coordination backend for robots, smart infrastructure and
//! people in an office, with a deterministic simulator to drive it.

pub mod atom;
pub mod entity;
pub mod knowledge;
pub mod planner;
pub mod site;
pub mod protocol;
pub mod eventlog;
pub mod backend;
pub mod executor;
pub mod intent;
pub mod sim;
pub mod report;
pub mod expect;
pub mod harness;
pub mod server;
