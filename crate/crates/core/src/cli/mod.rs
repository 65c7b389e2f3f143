//! Problem-file driven front end: `run`, `sweep` and `gradcheck`.

pub mod commands;
pub mod output;
pub mod problem_file;

pub use commands::{exit_code, gradient_check, run, sweep, sweep_offsets, GradientCheckReport, Overrides, ProfileRow, RunSummary};
pub use problem_file::{ProblemDefinition, StateSpec};
