//! Ground-station gateway: the `agriswarm` CLI and the HTTP/WebSocket service
//! used by the dashboard to create missions and steer live runs.

pub mod api;
pub mod error;
pub mod mission;
pub mod runs;
pub mod store;

pub use api::{router, AppState};
pub use error::GatewayError;
