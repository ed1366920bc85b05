//! Single-consumer inference queue in front of the candidate generator.

use std::sync::mpsc::{sync_channel, SyncSender, TrySendError};
use std::thread;

use prefchat_core::generation::{generate_candidates, DecodeConfig, ScoredCandidate};
use prefchat_core::{DialogueContext, Model};
use tokio::sync::oneshot;

pub trait CandidateGenerator: Send + 'static {
    fn generate(&mut self, ctx: &DialogueContext, seed: u64) -> prefchat_core::Result<Vec<ScoredCandidate>>;
}

pub struct ModelGenerator {
    pub model: Model,
    pub decode: DecodeConfig,
}

impl CandidateGenerator for ModelGenerator {
    fn generate(&mut self, ctx: &DialogueContext, seed: u64) -> prefchat_core::Result<Vec<ScoredCandidate>> {
        let cfg = DecodeConfig { rng_seed: seed, ..self.decode.clone() };
        generate_candidates(&self.model, ctx, &cfg)
    }
}

type Reply = oneshot::Sender<prefchat_core::Result<Vec<ScoredCandidate>>>;

#[derive(Debug, thiserror::Error)]
pub enum QueueError {
    #[error("inference queue is full")]
    Full,
    #[error("inference worker stopped")]
    Stopped,
    #[error(transparent)]
    Generation(#[from] prefchat_core::Error),
}

#[derive(Clone)]
pub struct InferenceQueue {
    tx: SyncSender<(DialogueContext, u64, Reply)>,
}

impl InferenceQueue {
    pub fn spawn(mut generator: impl CandidateGenerator, capacity: usize) -> Self {
        let (tx, rx) = sync_channel::<(DialogueContext, u64, Reply)>(capacity);
        thread::Builder::new()
            .name("inference".into())
            .spawn(move || {
                for (ctx, seed, reply) in rx {
                    // The requester may have gone away; nothing to do then.
                    let _ = reply.send(generator.generate(&ctx, seed));
                }
            })
            .expect("spawn inference thread");
        Self { tx }
    }

    pub async fn generate(&self, ctx: DialogueContext, seed: u64) -> Result<Vec<ScoredCandidate>, QueueError> {
        let (reply, rx) = oneshot::channel();
        self.tx.try_send((ctx, seed, reply)).map_err(|e| match e {
            TrySendError::Full(_) => QueueError::Full,
            TrySendError::Disconnected(_) => QueueError::Stopped,
        })?;
        Ok(rx.await.map_err(|_| QueueError::Stopped)??)
    }
}
