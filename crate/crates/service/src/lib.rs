//! HTTP service for the dialogue collection protocol and human-bot chat.
//!
//! Collect sessions show model candidates for every turn and record whether
//! the annotator selected, revised or rewrote one; a session can only be
//! finished after the minimum number of annotated rounds and then awaits
//! review. Chat sessions answer each user message with the
//! highest-preference candidate.

mod api;
mod config;
mod queue;
pub mod session;
mod store;

use std::sync::Arc;

use anyhow::Context;
use prefchat_core::generation::DecodeConfig;
use prefchat_core::Model;

pub use api::{router, ApiError, AppState, SessionView};
pub use config::ServiceConfig;
pub use queue::{CandidateGenerator, InferenceQueue, ModelGenerator, QueueError};
pub use store::{Event, ExportFilter, Store, Verdict};

/// Builds the shared state from the configured data directory.
pub fn build_state(cfg: &ServiceConfig, generator: impl CandidateGenerator) -> anyhow::Result<Arc<AppState>> {
    cfg.validate()?;
    let (store, sessions) = Store::open(&cfg.data_dir).with_context(|| format!("opening {}", cfg.data_dir.display()))?;
    log::info!("loaded {} sessions from {}", sessions.len(), cfg.data_dir.display());
    let queue = InferenceQueue::spawn(generator, cfg.queue_capacity);
    Ok(AppState::new(store, sessions, queue, cfg.seed))
}

pub fn model_generator(cfg: &ServiceConfig) -> anyhow::Result<ModelGenerator> {
    let path = cfg.checkpoint.as_ref().context("no model checkpoint configured")?;
    let model = Model::load(path)?;
    let decode = DecodeConfig {
        k: cfg.k,
        temperature: cfg.temperature,
        max_new_tokens: cfg.max_new_tokens,
        n_candidates: cfg.n_candidates,
        rng_seed: cfg.seed,
    };
    Ok(ModelGenerator { model, decode })
}

/// Serves until Ctrl-C.
pub async fn serve(cfg: ServiceConfig) -> anyhow::Result<()> {
    let generator = model_generator(&cfg)?;
    let state = build_state(&cfg, generator)?;
    let listener = tokio::net::TcpListener::bind(&cfg.bind).await.with_context(|| format!("binding {}", cfg.bind))?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
