//! Cross-cluster consistent broadcast between two replicated state machines.
//!
//! A sending RSM streams committed messages to a receiving RSM. Each message
//! crosses the boundary once in the failure-free case; receivers relay it
//! internally and report cumulative acknowledgments, and senders detect loss
//! from repeated acknowledgments and resend from a rotating sender/receiver
//! pair.

pub mod bounds;
pub mod cli;
pub mod error;
pub mod node;
pub mod receiver;
pub mod scheduler;
pub mod sender;
pub mod sim;
pub mod types;

pub use error::{Error, Result};
