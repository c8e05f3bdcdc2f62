//! IO, file formats, and command plumbing around `pointrank-core`: the XYZ
//! and manifest formats, the binary checkpoint container, metric reports,
//! ordering export, and the subcommand implementations the `pointrank`
//! binary dispatches to.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod ordering_file;
pub mod report;
pub mod threads;
pub mod xyz;
