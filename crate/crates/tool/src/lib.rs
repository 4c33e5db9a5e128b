//! Command line front end: dataset synthesis and the four processing modes.

pub mod app;
pub mod commands;
pub mod config;
