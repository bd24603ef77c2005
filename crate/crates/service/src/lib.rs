//! HTTP/JSON API and command-line entry points for the labeling engine.

pub mod api;
pub mod cli;
