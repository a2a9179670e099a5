//! Shared context for the persona pipeline stages.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::clock::{Clock, SystemClock};
use crate::gateway::Gateway;
use crate::prompts::PromptSet;
use crate::tokenize::{Tokenizer, WordPunctTokenizer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CallParams {
    pub temperature: f32,
    pub max_tokens: u32,
}

impl Default for CallParams {
    fn default() -> Self {
        CallParams {
            temperature: 0.7,
            max_tokens: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationSettings {
    pub extraction: CallParams,
    pub generalization: CallParams,
    pub inference: CallParams,
    /// Chapters above this many tokens are rejected rather than truncated.
    pub max_chapter_tokens: usize,
    /// Input budget for one inference call (system prompt plus history).
    pub context_budget_tokens: usize,
    /// Number of dialogue exemplars kept for the tone block.
    pub tone_exemplars: usize,
    /// Run the per-trait calls of one epoch on separate threads.
    pub parallel: bool,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        GenerationSettings {
            extraction: CallParams::default(),
            generalization: CallParams::default(),
            inference: CallParams::default(),
            max_chapter_tokens: 32_000,
            context_budget_tokens: 100_000,
            tone_exemplars: 20,
            parallel: true,
        }
    }
}

#[derive(Clone)]
pub struct Pipeline {
    pub gateway: Arc<Gateway>,
    pub prompts: Arc<PromptSet>,
    pub settings: GenerationSettings,
    pub tokenizer: Arc<dyn Tokenizer>,
    pub clock: Arc<dyn Clock>,
}

impl Pipeline {
    pub fn new(gateway: Arc<Gateway>, prompts: PromptSet) -> Self {
        Pipeline {
            gateway,
            prompts: Arc::new(prompts),
            settings: GenerationSettings::default(),
            tokenizer: Arc::new(WordPunctTokenizer),
            clock: Arc::new(SystemClock),
        }
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_settings(mut self, settings: GenerationSettings) -> Self {
        self.settings = settings;
        self
    }

    /// Model identity, prompt-set version and per-stage sampling parameters,
    /// recorded on every snapshot.
    pub fn provider_fingerprint(&self) -> String {
        let s = &self.settings;
        format!(
            "model={};prompts={};g={}/{};h={}/{};f={}/{}",
            self.gateway.model_id(),
            self.prompts.short_hash(),
            s.extraction.temperature,
            s.extraction.max_tokens,
            s.generalization.temperature,
            s.generalization.max_tokens,
            s.inference.temperature,
            s.inference.max_tokens,
        )
    }
}
