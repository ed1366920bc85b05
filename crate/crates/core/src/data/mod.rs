//! Annotated dialogue records, their JSONL persistence, training-quadruple
//! construction, corpus statistics and splitting.

pub mod fixtures;
mod io;
mod quadruple;
mod record;
mod split;
mod stats;
pub mod synth;

pub use io::{load_dataset, read_records, save_dataset, write_records};
pub use quadruple::{build_quadruples, is_trainable, keyed_rng, TrainingQuadruple};
pub use record::{Action, AnnotatedTurn, DialogueRecord, RecordStatus, Split, MIN_ANNOTATED_ROUNDS, SCHEMA_VERSION};
pub use split::split_dataset;
pub use stats::{compute_stats, compute_stats_with, ActionProportions, CorpusStats};
