//! Provider gateway and REST service for reasoning-trace visualization.

pub mod api;
pub mod config;
pub mod gateway;

pub use api::{router, AppState, ReasonRequest, ReasonResponse, Timing};
pub use config::{
    load_registry, load_registry_file, mock_provider, ConfigError, MockBehavior, ProviderProfile,
    Registry, WireProtocol, CONFIG_ENV,
};
pub use gateway::{
    Gateway, GatewayError, GenerationParams, GenerationRequest, GenerationResult, MockTransport,
    Transport,
};

/// Serves `state` on an already-bound listener until the future is dropped
/// or `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}
