//! Shared setup for the benchmarks: a deterministic mock pipeline and a
//! fully trained synthetic character.

use std::path::Path;
use std::sync::Arc;

use persona_core::gateway::{Fallback, MockScript};
use persona_core::{
    initialize, synthetic_corpus, train, CharacterCorpus, FixedClock, Gateway, GenerationSettings, Lineage,
    MockProvider, PersonaStore, Pipeline, PromptSet,
};

/// Pipeline over a digest-answering mock with pinned timestamps.
pub fn mock_pipeline(parallel: bool) -> Pipeline {
    let provider = Arc::new(MockProvider::new(MockScript::new(), Fallback::Digest));
    Pipeline::new(Arc::new(Gateway::mock(provider)), PromptSet::default())
        .with_clock(Arc::new(FixedClock::epoch()))
        .with_settings(GenerationSettings {
            parallel,
            ..GenerationSettings::default()
        })
}

pub fn corpus(chapters: u32) -> CharacterCorpus {
    synthetic_corpus("bench", chapters, 40)
}

/// Initializes and trains `corpus` into a fresh store at `root`.
pub fn trained(root: &Path, corpus: &CharacterCorpus, pipeline: &Pipeline) -> Lineage {
    let store = PersonaStore::open(root).expect("store opens");
    let lineage = store
        .lineage(&corpus.character_id, &pipeline.prompts)
        .expect("lineage opens");
    let init = initialize(pipeline, corpus).expect("initialization succeeds");
    lineage.put_snapshot(&init.snapshot).expect("epoch 0 stored");
    train(pipeline, corpus, &lineage, None, &mut |_| {}).expect("training succeeds");
    lineage
}
