//! Phase two: epoch-wise persona training over ordered chapter summaries.
//!
//! Each epoch extracts all eight traits from one chapter. Non-empty Type A
//! extractions are generalized together with the current profile and replace
//! it; non-empty Type B extractions are appended with the epoch number. Empty
//! extractions leave a section untouched. An epoch either completes for every
//! trait or produces nothing.

use std::collections::HashMap;
use std::fmt;
use std::time::Instant;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::corpus::{ChapterSummary, CharacterCorpus};
use crate::gateway::{CompletionRequest, FinishReason, GatewayError, Message};
use crate::persona::{chapter_source_id, ChapterRef, PersonaSnapshot, TraitEntry, TraitKey, TraitKind};
use crate::pipeline::Pipeline;
use crate::prompts::render;
use crate::store::Lineage;
use crate::{Error, Result};

/// What an extraction call reads.
#[derive(Debug, Clone, Copy)]
pub enum ExtractionSource<'a> {
    /// The unstructured information document (initialization).
    CharacterInfo(&'a str),
    Chapter(&'a ChapterSummary),
}

impl ExtractionSource<'_> {
    fn document(&self) -> &str {
        match self {
            ExtractionSource::CharacterInfo(doc) => doc,
            ExtractionSource::Chapter(ch) => &ch.body,
        }
    }

    fn stage_instruction(&self) -> String {
        match self {
            ExtractionSource::CharacterInfo(_) => "The document is general reference information about the character. \
                 Treat the story as not yet begun: leave out every event, relationship change and \
                 development that happens during the plot, and describe the character as they are \
                 at the very beginning."
                .to_string(),
            ExtractionSource::Chapter(ch) => format!(
                "The document summarizes chapter {} (\"{}\") of the story. Describe only what this chapter shows.",
                ch.index, ch.title
            ),
        }
    }
}

/// Builds the extraction request for `key` over `source`.
pub fn extraction_request(
    pipeline: &Pipeline,
    corpus: &CharacterCorpus,
    key: TraitKey,
    source: &ExtractionSource<'_>,
) -> CompletionRequest {
    let instruction = source.stage_instruction();
    let vars: HashMap<&str, &str> = [
        ("character", corpus.display_name.as_str()),
        ("trait_name", key.display_name()),
        ("trait_definition", key.definition()),
        ("chapter_body", source.document()),
        ("stage_instruction", instruction.as_str()),
        ("language_tag", corpus.language_tag.as_str()),
    ]
    .into_iter()
    .collect();
    let params = pipeline.settings.extraction;
    CompletionRequest {
        system_prompt: render(&pipeline.prompts.extraction, &vars),
        messages: Vec::new(),
        max_tokens: params.max_tokens,
        temperature: params.temperature,
        attachment: Some(source.document().to_string()),
    }
}

const NO_PROFILE: &str = "(no profile yet)";

/// Builds the generalization request. The fresh extraction is also the user
/// message so that an echoing provider passes it through unchanged.
pub fn generalization_request(
    pipeline: &Pipeline,
    corpus: &CharacterCorpus,
    prior: Option<&str>,
    extracted: &str,
    key: TraitKey,
) -> CompletionRequest {
    let vars: HashMap<&str, &str> = [
        ("character", corpus.display_name.as_str()),
        ("trait_name", key.display_name()),
        ("trait_definition", key.definition()),
        ("prior_text", prior.unwrap_or(NO_PROFILE)),
        ("extracted_text", extracted),
        ("language_tag", corpus.language_tag.as_str()),
    ]
    .into_iter()
    .collect();
    let params = pipeline.settings.generalization;
    CompletionRequest {
        system_prompt: render(&pipeline.prompts.generalization, &vars),
        messages: vec![Message::user(extracted)],
        max_tokens: params.max_tokens,
        temperature: params.temperature,
        attachment: None,
    }
}

/// `NONE` (any case, optional trailing period) and blank replies mean the
/// source says nothing about the trait.
fn normalize_extraction(text: &str) -> String {
    let t = text.trim();
    if t.trim_end_matches('.').eq_ignore_ascii_case("none") {
        String::new()
    } else {
        t.to_string()
    }
}

fn call(pipeline: &Pipeline, request: &CompletionRequest) -> Result<String> {
    let result = pipeline.gateway.complete(request)?;
    if result.finish_reason == FinishReason::ProviderError {
        return Err(GatewayError::Protocol("provider reported an error finish".into()).into());
    }
    Ok(result.text)
}

pub(crate) fn extract_from(
    pipeline: &Pipeline,
    corpus: &CharacterCorpus,
    key: TraitKey,
    source: &ExtractionSource<'_>,
) -> Result<String> {
    let request = extraction_request(pipeline, corpus, key, source);
    Ok(normalize_extraction(&call(pipeline, &request)?))
}

/// Extracts one trait from a chapter summary. An empty result means the
/// chapter reveals nothing about the trait.
pub fn extract_trait(
    pipeline: &Pipeline,
    corpus: &CharacterCorpus,
    chapter: &ChapterSummary,
    key: TraitKey,
) -> Result<String> {
    if chapter.body.trim().is_empty() {
        return Err(Error::precondition(format!("chapter {} body is empty", chapter.index)));
    }
    let tokens = pipeline.tokenizer.count(&chapter.body);
    if tokens > pipeline.settings.max_chapter_tokens {
        return Err(Error::precondition(format!(
            "chapter {} has {tokens} tokens, above the limit of {}",
            chapter.index, pipeline.settings.max_chapter_tokens
        )));
    }
    extract_from(pipeline, corpus, key, &ExtractionSource::Chapter(chapter))
}

/// Refines a Type A trait: merges `extracted` into `prior` and returns the
/// replacement text.
pub fn generalize_trait(
    pipeline: &Pipeline,
    corpus: &CharacterCorpus,
    prior: Option<&str>,
    extracted: &str,
    key: TraitKey,
) -> Result<String> {
    if key.kind() != TraitKind::TypeA {
        return Err(Error::precondition(format!(
            "trait {key} is not generalized (type B traits are appended)"
        )));
    }
    if extracted.trim().is_empty() {
        return Err(Error::precondition("nothing to generalize: extraction is empty"));
    }
    let request = generalization_request(pipeline, corpus, prior, extracted, key);
    let text = call(pipeline, &request)?.trim().to_string();
    if text.is_empty() {
        return Err(Error::validation(format!("generalization erased type A trait {key}")));
    }
    Ok(text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraitStatus {
    /// Type B text appended.
    Extracted,
    /// Type A text generalized and replaced.
    Generalized,
    Empty,
    Failed,
}

/// One run-log line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub epoch: u32,
    #[serde(rename = "trait")]
    pub trait_key: TraitKey,
    pub status: TraitStatus,
    pub latency_ms: u64,
    pub recorded_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct EpochOutcome {
    pub snapshot: PersonaSnapshot,
    pub records: Vec<OutcomeRecord>,
}

/// An epoch that produced no snapshot.
#[derive(Debug)]
pub struct EpochFailure {
    pub epoch: u32,
    /// Per-trait records; failing traits carry [`TraitStatus::Failed`].
    pub records: Vec<OutcomeRecord>,
    pub error: Error,
}

impl fmt::Display for EpochFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "epoch {} failed: {}", self.epoch, self.error)
    }
}

impl std::error::Error for EpochFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

struct TraitUpdate {
    key: TraitKey,
    entry: Option<TraitEntry>,
    status: TraitStatus,
    latency_ms: u64,
}

fn process_trait(
    pipeline: &Pipeline,
    corpus: &CharacterCorpus,
    prev: &PersonaSnapshot,
    chapter: &ChapterSummary,
    key: TraitKey,
) -> Result<TraitUpdate> {
    let started = Instant::now();
    let extracted = extract_trait(pipeline, corpus, chapter, key)?;
    let (text, status) = if extracted.is_empty() {
        (None, TraitStatus::Empty)
    } else if key.kind() == TraitKind::TypeA {
        let prior = prev
            .section(key)
            .latest()
            .map(|e| e.content.as_str())
            .or_else(|| prev.init_block.as_ref().and_then(|b| b.get(key)));
        let text = generalize_trait(pipeline, corpus, prior, &extracted, key)?;
        (Some(text), TraitStatus::Generalized)
    } else {
        (Some(extracted), TraitStatus::Extracted)
    };
    let entry = text
        .map(|t| {
            TraitEntry::new(
                chapter.index,
                t,
                chapter_source_id(chapter.index),
                pipeline.tokenizer.as_ref(),
            )
        })
        .transpose()?;
    Ok(TraitUpdate {
        key,
        entry,
        status,
        latency_ms: pipeline.clock.elapsed(started).as_millis() as u64,
    })
}

/// Folds chapter `prev.epoch + 1` into the persona, returning a new snapshot.
/// `prev` is never modified.
pub fn train_epoch(
    pipeline: &Pipeline,
    corpus: &CharacterCorpus,
    prev: &PersonaSnapshot,
    chapter: &ChapterSummary,
) -> Result<EpochOutcome, EpochFailure> {
    let epoch = chapter.index;
    let fail = |error: Error| EpochFailure {
        epoch,
        records: Vec::new(),
        error,
    };
    if chapter.index != prev.epoch + 1 {
        return Err(fail(Error::precondition(format!(
            "chapter {} cannot follow a snapshot at epoch {}",
            chapter.index, prev.epoch
        ))));
    }
    if prev.init_block.is_none() {
        return Err(fail(Error::precondition(
            "snapshot has no initialization block; run initialization first",
        )));
    }

    let results: Vec<(TraitKey, Result<TraitUpdate>)> = if pipeline.settings.parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = TraitKey::ALL
                .into_iter()
                .map(|key| {
                    (
                        key,
                        s.spawn(move || process_trait(pipeline, corpus, prev, chapter, key)),
                    )
                })
                .collect();
            handles
                .into_iter()
                .map(|(key, h)| (key, h.join().expect("trait worker panicked")))
                .collect()
        })
    } else {
        TraitKey::ALL
            .into_iter()
            .map(|key| (key, process_trait(pipeline, corpus, prev, chapter, key)))
            .collect()
    };

    let now = pipeline.clock.now();
    let mut records = Vec::with_capacity(8);
    let mut updates = Vec::with_capacity(8);
    let mut first_error = None;
    for (key, result) in results {
        match result {
            Ok(update) => {
                records.push(OutcomeRecord {
                    epoch,
                    trait_key: key,
                    status: update.status,
                    latency_ms: update.latency_ms,
                    recorded_at: now,
                    error: None,
                });
                updates.push(update);
            }
            Err(e) => {
                records.push(OutcomeRecord {
                    epoch,
                    trait_key: key,
                    status: TraitStatus::Failed,
                    latency_ms: 0,
                    recorded_at: now,
                    error: Some(e.to_string()),
                });
                first_error.get_or_insert(e);
            }
        }
    }
    if let Some(error) = first_error {
        return Err(EpochFailure { epoch, records, error });
    }

    let mut snapshot = prev.clone();
    snapshot.epoch = epoch;
    snapshot.created_at = now;
    snapshot.provider_fingerprint = pipeline.provider_fingerprint();
    snapshot.source_chapter = Some(ChapterRef {
        index: chapter.index,
        title: chapter.title.clone(),
    });
    for update in updates {
        let Some(entry) = update.entry else { continue };
        let section = snapshot
            .sections
            .get_mut(&update.key)
            .expect("snapshot holds every trait section");
        match section.kind {
            TraitKind::TypeA => section.entries = vec![entry],
            TraitKind::TypeB => section.entries.push(entry),
        }
    }
    Ok(EpochOutcome { snapshot, records })
}

/// Summary of a training run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainRun {
    pub character_id: String,
    pub start_epoch: u32,
    pub end_epoch: u32,
    pub prompt_set: String,
    pub model: String,
    pub log: Vec<OutcomeRecord>,
}

#[derive(Debug)]
pub struct TrainFailure {
    /// Epochs before `failed_epoch` are persisted; `run.log` includes the failed records.
    pub run: TrainRun,
    pub failed_epoch: Option<u32>,
    pub error: Error,
}

impl fmt::Display for TrainFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.failed_epoch {
            Some(e) => write!(f, "training failed at epoch {e}: {}", self.error),
            None => write!(f, "training failed: {}", self.error),
        }
    }
}

impl std::error::Error for TrainFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Trains sequentially from `resume_from` (default: one past the head) to the
/// final chapter, persisting every snapshot and run-log record. `on_epoch` is
/// called after each snapshot is stored.
#[allow(clippy::result_large_err)]
pub fn train(
    pipeline: &Pipeline,
    corpus: &CharacterCorpus,
    lineage: &Lineage,
    resume_from: Option<u32>,
    on_epoch: &mut dyn FnMut(&PersonaSnapshot),
) -> Result<TrainRun, TrainFailure> {
    let chapter_count = corpus.chapters.len() as u32;
    let mut run = TrainRun {
        character_id: corpus.character_id.clone(),
        start_epoch: 0,
        end_epoch: chapter_count,
        prompt_set: pipeline.prompts.version_hash().to_string(),
        model: pipeline.gateway.model_id().to_string(),
        log: Vec::new(),
    };
    let early = |run: &TrainRun, error: Error| TrainFailure {
        run: run.clone(),
        failed_epoch: None,
        error,
    };

    let _lock = lineage.lock().map_err(|e| early(&run, e.into()))?;
    let head = match lineage.head() {
        Ok(Some(h)) => h,
        Ok(None) => {
            return Err(early(
                &run,
                Error::precondition("no epoch-0 snapshot; run initialization first"),
            ))
        }
        Err(e) => return Err(early(&run, e.into())),
    };
    let start = resume_from.unwrap_or(head + 1);
    run.start_epoch = start;
    if start == 0 {
        return Err(early(&run, Error::precondition("training starts at epoch 1")));
    }
    if start <= head {
        return Err(early(
            &run,
            Error::precondition(format!(
                "epochs {start}..={head} are already persisted and snapshots are immutable; resume from {}",
                head + 1
            )),
        ));
    }
    if start > head + 1 {
        return Err(early(
            &run,
            Error::precondition(format!(
                "cannot resume from epoch {start}: latest persisted epoch is {head}"
            )),
        ));
    }
    if start > chapter_count {
        return Err(early(
            &run,
            Error::precondition(format!("all {chapter_count} chapters are already trained")),
        ));
    }

    let mut prev = lineage.get_snapshot(head).map_err(|e| early(&run, e.into()))?;
    for chapter in &corpus.chapters[(start - 1) as usize..] {
        match train_epoch(pipeline, corpus, &prev, chapter) {
            Ok(outcome) => {
                let persisted = lineage
                    .put_snapshot(&outcome.snapshot)
                    .and_then(|_| lineage.append_runlog(&outcome.records));
                if let Err(e) = persisted {
                    return Err(TrainFailure {
                        run,
                        failed_epoch: Some(chapter.index),
                        error: e.into(),
                    });
                }
                run.log.extend(outcome.records);
                on_epoch(&outcome.snapshot);
                prev = outcome.snapshot;
            }
            Err(failure) => {
                let _ = lineage.append_runlog(&failure.records);
                run.log.extend(failure.records);
                return Err(TrainFailure {
                    run,
                    failed_epoch: Some(failure.epoch),
                    error: failure.error,
                });
            }
        }
    }
    Ok(run)
}
