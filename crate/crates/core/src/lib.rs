//! Structured character personas built chapter by chapter.
//!
//! The pipeline has two phases. Initialization distills an unstructured
//! character-information document into five core traits. Persona training then
//! walks the ordered chapter summaries one epoch at a time: each of the eight
//! traits is extracted from the chapter, internal traits are generalized and
//! replaced, external traits are appended chronologically, and a snapshot is
//! persisted after every epoch so that a conversation can be pinned to any
//! point in the narrative.
//!
//! The crate also carries the evaluation arithmetic used to compare personas
//! against human judgments: Big Five facet scoring, per-facet gap comparison
//! and Likert rating aggregation.

pub mod clock;
pub mod config;
pub mod corpus;
pub mod cpt;
mod error;
pub mod evaluation;
pub mod gateway;
pub mod inference;
pub mod initializer;
pub mod persona;
pub mod pipeline;
pub mod prompts;
pub mod store;
pub mod tokenize;
pub mod workspace;

pub use clock::{Clock, FixedClock, SystemClock};
pub use config::{AppConfig, ProviderSpec};
pub use corpus::{
    compute_stats, load_corpus, save_corpus, synthetic_corpus, ChapterSummary, CharacterCorpus, CorpusStats,
};
pub use cpt::{train, train_epoch, EpochOutcome, OutcomeRecord, TrainFailure, TrainRun, TraitStatus};
pub use error::{Error, ErrorClass, Result};
pub use gateway::{
    CompletionRequest, CompletionResult, FinishReason, Gateway, MockProvider, Provider, ProviderConfig, RetryPolicy,
    Role,
};
pub use inference::{assemble, build_tone, respond, AssembledPersona, ChatSession, ToneProfile};
pub use initializer::{initialize, Initialized};
pub use persona::{InitPersona, PersonaSnapshot, TraitEntry, TraitKey, TraitKind, TraitSection};
pub use pipeline::{CallParams, GenerationSettings, Pipeline};
pub use prompts::PromptSet;
pub use store::{CharacterRecord, EpochDescriptor, Lineage, PersonaStore, StoreError};
pub use tokenize::{Tokenizer, WordPunctTokenizer};
pub use workspace::{CharacterDescriptor, PersonaView, Workspace};
