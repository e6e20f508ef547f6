//! Milestone-based earned-value management for multi-team software
//! portfolios: planning packages refined into activities, exact PV/EV/AC
//! rollups with CPI/SPI, two-level change control, integration scoring with
//! SME review, an annual lifecycle with reports, and curated stack manifests.
//!
//! All mutations are [`Command`]s executed by an [`Engine`], which appends
//! them to a command log; replaying the log reproduces the model exactly.

pub mod command;
pub mod domain;
pub mod engine;
pub mod error;
pub mod evm;
pub mod fixture;
pub mod ids;
pub mod kpp;
pub mod lifecycle;
pub mod model;
pub mod money;
pub mod period;
pub mod planning;
pub mod stack;
pub mod store;
#[cfg(test)]
mod testkit;

pub use command::{Command, Outcome};
pub use domain::{EvTechnique, PortfolioConfig, Role};
pub use engine::{Clock, CommandLogEntry, Engine};
pub use error::{Error, ErrorCategory, Result};
pub use ids::NodeId;
pub use model::Model;
pub use money::{Money, Ratio};
pub use period::{Horizon, Period};
