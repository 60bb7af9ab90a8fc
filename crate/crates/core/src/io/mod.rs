//! Configuration files, result containers, model-checker export and the
//! pipeline behind the command-line tool.

pub mod config;
pub mod container;
pub mod pipeline;
pub mod prism;
