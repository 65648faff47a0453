//! Toolkit for personalised preference training, twinned simulated-user
//! evaluation, and the choice-model and ranking statistics used to analyse
//! both.
//!
//! Modules, bottom-up:
//!
//! - [`model`]: trials, conversations, rankings, error covariates
//! - [`policy`], [`training`]: toy policy with soft user tokens, DPO / P-DPO
//! - [`agents`], [`experiment`]: assistants, simulated users, judges, trial runner
//! - [`metrics`], [`stats`], [`choice`], [`bdm`], [`traits`]: analysis
//! - [`ingest`], [`report`]: dataset validation and JSON reports
//!
//! Data-parallel loops run through [`exec::Exec`]; the `parallel` feature
//! (on by default) backs them with rayon.

pub mod agents;
pub mod bdm;
pub mod choice;
pub mod exec;
pub mod experiment;
pub mod ingest;
pub mod json;
pub mod metrics;
pub mod model;
pub mod policy;
pub mod report;
pub mod seed;
pub mod stats;
pub mod traits;
pub mod training;
