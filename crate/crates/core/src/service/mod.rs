//! HTTP service: image sessions, regions, background training jobs with
//! server-sent progress events, resampling and export.

mod api;
mod error;
mod jobs;
mod state;
mod store;

use std::future::Future;

pub use api::router;
pub use error::ApiError;
pub use jobs::{EventBody, JobEvent, JobMethod, JobState, JobSummary};
pub use state::{AppState, ServiceConfig, BIND_ENV, DATA_DIR_ENV};
pub use store::{BundleInfo, RegionEntry, RegionMethod, ResultInfo, SessionMeta};

/// Version carried in every request and reply payload as `"v"`.
pub const API_VERSION: u32 = 1;

/// Serve until `shutdown` resolves, then cancel running jobs and wait for
/// their workers so partial bundles reach the disk.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let app = router(state.clone());
    let st = state.clone();
    axum::serve(listener, app)
        .with_graceful_shutdown(async move {
            shutdown.await;
            log::info!("shutting down; cancelling running jobs");
            st.cancel_all();
        })
        .await?;
    state.join_workers().await;
    Ok(())
}
