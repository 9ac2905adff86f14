//! Library surface of the experiment harness, shared by the binary and the
//! integration tests.

pub mod config;
pub mod csv;
pub mod report;
pub mod runner;
pub mod slope;
pub mod svg;
