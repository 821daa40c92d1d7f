//! Command-line front end: project files, plan files, rendering and checks.

pub mod commands;
pub mod error;
pub mod plan;
pub mod project;
pub mod render;
pub mod suites;
