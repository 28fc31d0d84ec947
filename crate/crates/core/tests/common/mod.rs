//! Checks shared by the integration tests and the acceptance report.
#![allow(dead_code)]

pub mod criteria;
pub mod gen;
pub mod leases;
pub mod oracle;
pub mod runs;
