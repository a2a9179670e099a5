//! The future-episode story task.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::CharacterCorpus;
use crate::inference::{respond, AssembledPersona, ChatSession};
use crate::pipeline::Pipeline;

/// Sent verbatim for every story.
pub const STORY_PROMPT: &str = "Based on the given text file, imagine an engaging and specific future episode about what will happen to you, and write it as a novel of approximately 2000 words.";

pub const STORY_WORD_TARGET: usize = 2000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoryTask {
    pub story_id: String,
    pub character_id: String,
    pub epoch: u32,
    /// Position within the batch, from 0.
    pub index: usize,
    pub prompt: String,
    pub word_target: usize,
    pub word_count: usize,
    pub story: String,
    pub model: String,
    pub provider_fingerprint: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoryFailure {
    pub index: usize,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoryRun {
    pub stories: Vec<StoryTask>,
    pub failures: Vec<StoryFailure>,
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

fn story_id(character_id: &str, epoch: u32, fingerprint: &str, index: usize) -> String {
    let mut h = Sha256::new();
    for part in [character_id, &epoch.to_string(), fingerprint, &index.to_string()] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

/// Generates `n` stories, each in a fresh session. A failed story is recorded
/// and the rest continue.
pub fn run_story_task(pipeline: &Pipeline, corpus: &CharacterCorpus, persona: &AssembledPersona, n: usize) -> StoryRun {
    let fingerprint = pipeline.provider_fingerprint();
    let mut run = StoryRun::default();
    for index in 0..n {
        let created_at = pipeline.clock.now();
        let id = story_id(&persona.character_id, persona.epoch, &fingerprint, index);
        let mut session = ChatSession::new(format!("story-{id}"), corpus, persona.clone(), created_at);
        match respond(&mut session, STORY_PROMPT, pipeline) {
            Ok(story) => {
                let words = word_count(&story);
                tracing::info!(story = %id, words, target = STORY_WORD_TARGET, "story generated");
                run.stories.push(StoryTask {
                    story_id: id,
                    character_id: persona.character_id.clone(),
                    epoch: persona.epoch,
                    index,
                    prompt: STORY_PROMPT.to_string(),
                    word_target: STORY_WORD_TARGET,
                    word_count: words,
                    story,
                    model: pipeline.gateway.model_id().to_string(),
                    provider_fingerprint: fingerprint.clone(),
                    created_at,
                });
            }
            Err(e) => {
                tracing::warn!(index, error = %e, "story generation failed");
                run.failures.push(StoryFailure {
                    index,
                    error: e.to_string(),
                });
            }
        }
    }
    run
}
