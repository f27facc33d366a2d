//! Command line and local annotation service for layered character models.

pub mod cli;
pub mod service;

pub use cli::run;
