//! Command-line workflows: argument handling, training and test runs, and
//! learning-curve plots.

pub mod args;
pub mod plot;
pub mod run;

pub use args::{parse_args, Mode, RunArgs};
pub use run::{run, run_test, run_train};
