//! Command-line front end: manifests, runs and comparison tables.

pub mod manifest;
pub mod run;
pub mod table;
