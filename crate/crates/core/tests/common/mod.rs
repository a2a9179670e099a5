#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use persona_core::gateway::{Fallback, MockScript};
use persona_core::{
    initialize, train, CharacterCorpus, FixedClock, Gateway, GenerationSettings, Lineage, MockProvider, PersonaStore,
    Pipeline, PromptSet,
};

pub fn pipeline(provider: &Arc<MockProvider>, parallel: bool) -> Pipeline {
    Pipeline::new(Arc::new(Gateway::mock(provider.clone())), PromptSet::default())
        .with_clock(Arc::new(FixedClock::epoch()))
        .with_settings(GenerationSettings {
            parallel,
            ..GenerationSettings::default()
        })
}

pub fn digest_provider() -> Arc<MockProvider> {
    Arc::new(MockProvider::new(MockScript::new(), Fallback::Digest))
}

/// Initializes and fully trains `corpus` into a store at `root`.
pub fn build_store(root: &Path, corpus: &CharacterCorpus, pipeline: &Pipeline) -> Lineage {
    let store = PersonaStore::open(root).unwrap();
    let lineage = store.lineage(&corpus.character_id, &pipeline.prompts).unwrap();
    let init = initialize(pipeline, corpus).unwrap();
    lineage.put_snapshot(&init.snapshot).unwrap();
    train(pipeline, corpus, &lineage, None, &mut |_| {}).unwrap();
    lineage
}

/// Every regular file under `root` with its bytes, keyed by relative path.
pub fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}
