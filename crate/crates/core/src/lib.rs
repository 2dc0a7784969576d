//! Pulse-level NMR simulation of a three-path interference test of the Born rule.

pub mod config;
pub mod engine;
pub mod error;
pub mod grape;
pub mod harness;
pub mod linalg;
pub mod noise;
pub mod paths;
pub mod report;
pub mod spin_system;
pub mod stats;

pub use error::{Error, Result};
