//! Phase one: distill the character-information document into the five
//! initialization traits and produce the epoch-0 snapshot.

use std::collections::BTreeMap;

use crate::corpus::CharacterCorpus;
use crate::cpt::{extract_from, ExtractionSource};
use crate::persona::{empty_snapshot, InitPersona, PersonaSnapshot, TraitKey};
use crate::pipeline::Pipeline;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct Initialized {
    pub persona: InitPersona,
    pub snapshot: PersonaSnapshot,
    /// Non-fatal findings, e.g. a chapter title quoted in the init text.
    pub warnings: Vec<String>,
    pub refined_info_tokens: usize,
}

/// Runs one extraction per initialization trait over the information document.
/// Any failure aborts the whole phase; nothing partial is returned.
pub fn initialize(pipeline: &Pipeline, corpus: &CharacterCorpus) -> Result<Initialized> {
    if corpus.info_doc.trim().is_empty() {
        return Err(Error::precondition("character information document is empty"));
    }
    let source = ExtractionSource::CharacterInfo(&corpus.info_doc);
    let extract = |key: TraitKey| -> Result<String> {
        let text = extract_from(pipeline, corpus, key, &source)?;
        if text.is_empty() {
            return Err(Error::validation(format!(
                "initialization produced no text for trait {key}"
            )));
        }
        Ok(text)
    };

    let results: Vec<(TraitKey, Result<String>)> = if pipeline.settings.parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = TraitKey::INIT
                .into_iter()
                .map(|key| (key, s.spawn(move || extract(key))))
                .collect();
            handles
                .into_iter()
                .map(|(key, h)| (key, h.join().expect("extraction thread panicked")))
                .collect()
        })
    } else {
        TraitKey::INIT.into_iter().map(|k| (k, extract(k))).collect()
    };

    let mut texts = BTreeMap::new();
    for (key, result) in results {
        texts.insert(key, result?);
    }
    let persona = InitPersona::from_map(texts)?;

    let warnings = corpus
        .chapters
        .iter()
        .filter(|ch| ch.title.chars().count() >= 4)
        .flat_map(|ch| {
            persona
                .iter()
                .filter(|(_, text)| text.contains(ch.title.as_str()))
                .map(move |(key, _)| {
                    format!(
                        "initialization text for {key} mentions chapter {} title \"{}\"; it may contain story progress",
                        ch.index, ch.title
                    )
                })
        })
        .collect::<Vec<_>>();
    for w in &warnings {
        tracing::warn!("{w}");
    }

    let mut snapshot = empty_snapshot(&corpus.character_id, pipeline.clock.now())?;
    snapshot.init_block = Some(persona.clone());
    snapshot.provider_fingerprint = pipeline.provider_fingerprint();
    let refined_info_tokens = persona.token_count(pipeline.tokenizer.as_ref());
    Ok(Initialized {
        persona,
        snapshot,
        warnings,
        refined_info_tokens,
    })
}
