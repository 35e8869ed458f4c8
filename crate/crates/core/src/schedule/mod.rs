//! Removal and learning-rate schedules.

pub mod lr;
pub mod removal;

pub use lr::{LrConfig, LrKind};
pub use removal::{bundled_names, RemovalEvent, RemovalSchedule};
