//! Experiment harness: data files, study configuration, Monte-Carlo runs,
//! censoring sweeps, probability exports and MTTF reports.

pub mod config;
pub mod io;
pub mod mttf;
pub mod probs;
pub mod sim;
pub mod sweep;
