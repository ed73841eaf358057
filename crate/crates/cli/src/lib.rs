//! Command-line and HTTP front ends over `znq-core`.

pub mod api;
pub mod server;
