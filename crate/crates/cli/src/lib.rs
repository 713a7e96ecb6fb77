//! Batch experiment runner for the doubling lab.
//!
//! * [`commands`]: configurations and pure runners producing report bytes;
//! * [`journal`]: the append-only JSON-lines provenance record;
//! * [`format`]: nine-significant-digit CSV output;
//! * [`app`]: argument parsing, atomic file output and exit codes.

pub mod app;
pub mod commands;
pub mod format;
pub mod journal;
