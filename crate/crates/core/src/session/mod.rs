//! Session planning, file-based pipeline and reports.

mod config;
mod manifest;
mod pipeline;
mod report;

pub use config::*;
pub use manifest::*;
pub use pipeline::*;
pub use report::*;
