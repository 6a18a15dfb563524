//! Experiment harness: synthetic identity corpus, toy training and
//! ablations, curation runs and benchmark scoring behind one CLI.

pub mod ablate;
pub mod commands;
pub mod config;
pub mod corpus;
pub mod error;
pub mod experiment;
pub mod synth;
