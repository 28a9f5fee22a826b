//! Run storage, the review HTTP API, and the `cpm` command line.

pub mod api;
pub mod cli;
pub mod error;
pub mod manifest;

pub use api::{router, serve, AppState};
pub use error::{ServiceError, ServiceResult};
pub use manifest::RunManifest;
