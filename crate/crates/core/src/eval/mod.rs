//! Tracking error metrics and evaluation reports.

pub mod metrics;
pub mod report;

pub use metrics::{e_pos, e_vel, pose_errors};
pub use report::{evaluate_policy, mean_std, run_episodes, EpisodeErrors, EvalOptions, EvalReport, FnPolicy, Policy, SeedRow};
