//! Finite abstractions of discrete-time stochastic control systems and
//! max-min controller synthesis for safety, reachability and reach-avoid
//! objectives.

pub mod abstraction;
pub mod bench;
pub mod error;
pub mod expr;
pub mod grid;
pub mod io;
pub mod model;
pub mod noise;
pub mod parallel;
pub mod sim;
pub mod synthesis;

pub use error::Error;
