//! Closed-loop code-plan execution for long-horizon tabletop rearrangement.

pub mod cli;
pub mod llm;
pub mod orchestrator;
pub mod planlang;
pub mod planner;
pub mod reporter;
pub mod sim;
pub mod skills;
pub mod tasks;
pub mod world;
