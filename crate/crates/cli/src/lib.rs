//! Command-line front end: classification runs, evaluation reports, and
//! synthetic fixtures.

pub mod app;
pub mod classify;
pub mod error;
pub mod evaluate;
pub mod io;
pub mod make_fixture;
pub mod report;
pub mod synth;

pub use error::CliError;
