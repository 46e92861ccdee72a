//! The 3D manipulation tool service: reconstruct once, then render views.

pub mod action;
pub mod config;
pub mod http;
pub mod recon;
pub mod session;

pub use action::{Action, ErrorCode, ImageRef, ToolError, ToolOutput, ToolResult};
pub use config::{ConfigError, ToolkitConfig};
pub use recon::{BridgeClient, BridgeConfig, CachedReconstructor, FixtureReconstructor, ImagePayload, ReconError, Reconstructor};
pub use session::{replay, Handled, HistoryEntry, HistoryRecord, HistorySnapshot, Session, Toolkit};

use std::sync::Arc;

/// Picks the reconstruction backend from the config: bridge if a URL is
/// set, fixture scenes otherwise, wrapped by the disk cache when configured.
pub fn reconstructor_from_config(cfg: &ToolkitConfig) -> Result<Arc<dyn Reconstructor>, ReconError> {
    let inner: Box<dyn Reconstructor> = match &cfg.bridge.url {
        Some(url) => Box::new(BridgeClient::new(url, cfg.bridge.clone())?),
        None => Box::new(FixtureReconstructor::default()),
    };
    Ok(match &cfg.cache_dir {
        Some(dir) => Arc::new(CachedReconstructor::new(dir, Some(inner))),
        None => Arc::from(inner),
    })
}
