//! Persona assembly and in-character chat.
//!
//! The assembled document is Markdown: an "Initial profile" block with the
//! five initialization traits, a "Story so far" block with the trained
//! sections in canonical trait order (Type B entries as epoch-tagged bullets),
//! and an optional "Tone" block of verbatim dialogue exemplars.

use std::collections::HashMap;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::corpus::CharacterCorpus;
use crate::gateway::{CompletionRequest, FinishReason, GatewayError, Message, Role};
pub use crate::persona::AssembledPersona;
use crate::persona::{Block, PersonaSnapshot, SectionOffset, TraitKey, TraitKind};
use crate::pipeline::Pipeline;
use crate::prompts::render;
use crate::{Error, Result};

pub const DEFAULT_TONE_EXEMPLARS: usize = 20;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToneProfile {
    pub character_id: String,
    /// Verbatim corpus dialogue lines.
    pub exemplars: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style_notes: Option<String>,
}

impl ToneProfile {
    pub fn empty(character_id: &str) -> Self {
        ToneProfile {
            character_id: character_id.to_string(),
            ..Default::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.exemplars.is_empty() && self.style_notes.as_deref().is_none_or(str::is_empty)
    }
}

/// Picks up to `k` dialogue lines, longest first; equal lengths keep corpus order.
pub fn build_tone(corpus: &CharacterCorpus, k: usize) -> ToneProfile {
    let mut order: Vec<usize> = (0..corpus.dialogue_lines.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(corpus.dialogue_lines[i].chars().count()), i));
    ToneProfile {
        character_id: corpus.character_id.clone(),
        exemplars: order
            .into_iter()
            .take(k)
            .map(|i| corpus.dialogue_lines[i].clone())
            .collect(),
        style_notes: None,
    }
}

/// Appends text while tracking the length in chars.
struct Writer {
    body: String,
    chars: usize,
    offsets: Vec<SectionOffset>,
}

impl Writer {
    fn push(&mut self, s: &str) {
        self.body.push_str(s);
        self.chars += s.chars().count();
    }

    fn span(&mut self, block: Block, key: Option<TraitKey>, text: &str) {
        let start = self.chars;
        self.push(text);
        self.offsets.push(SectionOffset {
            block,
            key,
            start,
            end: self.chars,
        });
    }
}

/// Renders the tone block content, or `None` when there is nothing to say.
fn render_tone(tone: &ToneProfile) -> Option<String> {
    if tone.is_empty() {
        return None;
    }
    let mut out = String::new();
    if let Some(notes) = tone.style_notes.as_deref().filter(|n| !n.is_empty()) {
        out.push_str(notes.trim());
        out.push_str("\n\n");
    }
    if !tone.exemplars.is_empty() {
        out.push_str("Example lines:\n");
        for line in &tone.exemplars {
            out.push_str("- ");
            out.push_str(line);
            out.push('\n');
        }
    }
    Some(out)
}

/// Builds the persona document from a snapshot and tone profile.
pub fn assemble(snapshot: &PersonaSnapshot, tone: &ToneProfile) -> Result<AssembledPersona> {
    let init = snapshot.init_block.as_ref().ok_or_else(|| {
        Error::precondition(format!(
            "snapshot for `{}` at epoch {} has no initialization block; run initialization first",
            snapshot.character_id, snapshot.epoch
        ))
    })?;
    let mut w = Writer {
        body: String::new(),
        chars: 0,
        offsets: Vec::new(),
    };

    w.push("## Initial profile\n\n");
    for (key, text) in init.iter() {
        w.span(
            Block::Init,
            Some(key),
            &format!("### {}\n\n{}\n\n", key.display_name(), text.trim()),
        );
    }

    let trained: Vec<_> = TraitKey::ALL
        .into_iter()
        .map(|k| snapshot.section(k))
        .filter(|s| !s.entries.is_empty())
        .collect();
    if !trained.is_empty() {
        w.push("## Story so far\n\n");
        for section in trained {
            let mut text = format!("### {}\n\n", section.key.display_name());
            match section.kind {
                TraitKind::TypeA => {
                    for e in &section.entries {
                        text.push_str(e.content.trim());
                        text.push('\n');
                    }
                }
                TraitKind::TypeB => {
                    for e in &section.entries {
                        text.push_str(&format!("- [epoch {}] {}\n", e.epoch, e.content.trim()));
                    }
                }
            }
            text.push('\n');
            w.span(Block::Train, Some(section.key), &text);
        }
    }

    let tone_text = render_tone(tone);
    if let Some(t) = &tone_text {
        w.push("## Tone\n\n");
        w.span(Block::Tone, None, t);
    }

    let body = w.body.trim_end().to_string() + "\n";
    let len = body.chars().count();
    for o in &mut w.offsets {
        o.end = o.end.min(len);
    }
    Ok(AssembledPersona {
        character_id: snapshot.character_id.clone(),
        epoch: snapshot.epoch,
        body,
        tone: tone_text,
        section_offsets: w.offsets,
    })
}

/// Standalone Markdown export of an assembled persona.
pub fn persona_markdown(persona: &AssembledPersona, display_name: &str) -> String {
    format!("# {display_name} (epoch {})\n\n{}", persona.epoch, persona.body)
}

/// A conversation pinned to one epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatSession {
    pub id: String,
    pub character_id: String,
    pub display_name: String,
    pub language_tag: String,
    pub epoch: u32,
    pub persona: Arc<AssembledPersona>,
    pub history: Vec<Message>,
    pub created_at: DateTime<Utc>,
}

impl ChatSession {
    pub fn new(
        id: impl Into<String>,
        corpus: &CharacterCorpus,
        persona: AssembledPersona,
        created_at: DateTime<Utc>,
    ) -> Self {
        ChatSession {
            id: id.into(),
            character_id: persona.character_id.clone(),
            display_name: corpus.display_name.clone(),
            language_tag: corpus.language_tag.clone(),
            epoch: persona.epoch,
            persona: Arc::new(persona),
            history: Vec::new(),
            created_at,
        }
    }

    /// The inference prompt with this session's persona filled in.
    pub fn system_prompt(&self, pipeline: &Pipeline) -> String {
        let vars: HashMap<&str, &str> = [
            ("character", self.display_name.as_str()),
            ("persona", self.persona.body.as_str()),
            ("language_tag", self.language_tag.as_str()),
        ]
        .into_iter()
        .collect();
        render(&pipeline.prompts.inference, &vars)
    }

    /// The request `respond` would send for `utterance`.
    pub fn request(&self, pipeline: &Pipeline, utterance: &str) -> Result<CompletionRequest> {
        let system_prompt = self.system_prompt(pipeline);
        let count = |s: &str| pipeline.tokenizer.count(s);
        let params = pipeline.settings.inference;
        let budget = pipeline.settings.context_budget_tokens;
        let fixed = count(&system_prompt) + count(utterance) + params.max_tokens as usize;
        if fixed > budget {
            return Err(Error::ContextOverflow {
                persona_tokens: count(&system_prompt),
                utterance_tokens: count(utterance),
                reserve_tokens: params.max_tokens as usize,
                budget_tokens: budget,
            });
        }
        // Keep the newest turns that fit; drop the oldest first.
        let mut remaining = budget - fixed;
        let mut keep_from = self.history.len();
        for (i, m) in self.history.iter().enumerate().rev() {
            let t = count(&m.content);
            if t > remaining {
                break;
            }
            remaining -= t;
            keep_from = i;
        }
        while self.history.get(keep_from).is_some_and(|m| m.role == Role::Assistant) {
            keep_from += 1;
        }
        if keep_from > 0 {
            tracing::debug!(session = %self.id, dropped = keep_from, "history truncated to fit budget");
        }
        let mut messages = self.history[keep_from..].to_vec();
        messages.push(Message::user(utterance));
        Ok(CompletionRequest {
            system_prompt,
            messages,
            max_tokens: params.max_tokens,
            temperature: params.temperature,
            attachment: None,
        })
    }

    /// JSON lines, one object per message.
    pub fn transcript_jsonl(&self) -> String {
        let mut out = String::new();
        for (turn, m) in self.history.iter().enumerate() {
            let line = serde_json::json!({
                "session_id": self.id,
                "character_id": self.character_id,
                "epoch": self.epoch,
                "turn": turn,
                "role": m.role,
                "content": m.content,
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out
    }
}

/// Sends one user turn and returns the character's reply. On failure the
/// session history is left as it was.
pub fn respond(session: &mut ChatSession, utterance: &str, pipeline: &Pipeline) -> Result<String> {
    if utterance.trim().is_empty() {
        return Err(Error::precondition("utterance is empty"));
    }
    let request = session.request(pipeline, utterance)?;
    let result = pipeline.gateway.complete(&request)?;
    if result.finish_reason == FinishReason::ProviderError {
        return Err(GatewayError::Protocol("provider reported an error finish".into()).into());
    }
    session.history.push(Message::user(utterance));
    session.history.push(Message::assistant(result.text.clone()));
    Ok(result.text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::{Clock, FixedClock};
    use crate::persona::{empty_snapshot, InitPersona, TraitEntry};
    use crate::tokenize::WordPunctTokenizer;
    use std::collections::BTreeMap;

    fn snapshot() -> PersonaSnapshot {
        let mut s = empty_snapshot("frieren", FixedClock::epoch().now()).unwrap();
        let texts: BTreeMap<_, _> = TraitKey::INIT
            .into_iter()
            .map(|k| (k, format!("init {}", k.as_str())))
            .collect();
        s.init_block = Some(InitPersona::from_map(texts).unwrap());
        s
    }

    fn entry(epoch: u32, text: &str) -> TraitEntry {
        TraitEntry::new(epoch, text, format!("chapter-{epoch:03}"), &WordPunctTokenizer).unwrap()
    }

    #[test]
    fn epoch_zero_without_tone_is_init_only() {
        let p = assemble(&snapshot(), &ToneProfile::empty("frieren")).unwrap();
        assert!(p.body.starts_with("## Initial profile"));
        assert!(!p.body.contains("Story so far"));
        assert!(p.tone.is_none());
        assert!(p.section_offsets.iter().all(|o| o.block == Block::Init));
        assert_eq!(p.section_offsets.len(), 5);
    }

    #[test]
    fn type_b_entries_render_chronologically() {
        let mut s = snapshot();
        s.epoch = 3;
        let rel = s.sections.get_mut(&TraitKey::Relationships).unwrap();
        rel.entries = vec![entry(1, "meets Fern"), entry(3, "travels with Stark")];
        let p = assemble(&s, &ToneProfile::empty("frieren")).unwrap();
        let a = p.body.find("[epoch 1] meets Fern").unwrap();
        let b = p.body.find("[epoch 3] travels with Stark").unwrap();
        assert!(a < b);
    }

    #[test]
    fn offsets_are_ordered_disjoint_and_in_bounds() {
        let mut s = snapshot();
        s.epoch = 2;
        s.sections.get_mut(&TraitKey::Personality).unwrap().entries = vec![entry(2, "warmer")];
        s.sections.get_mut(&TraitKey::Conflict).unwrap().entries = vec![entry(1, "demon attack")];
        let tone = ToneProfile {
            character_id: "frieren".into(),
            exemplars: vec!["It's just a spell.".into()],
            style_notes: None,
        };
        let p = assemble(&s, &tone).unwrap();
        let len = p.body.chars().count();
        let mut last_end = 0;
        for o in &p.section_offsets {
            assert!(o.start >= last_end && o.start <= o.end && o.end <= len);
            last_end = o.end;
        }
        let blocks: Vec<_> = p.section_offsets.iter().map(|o| o.block).collect();
        let mut sorted = blocks.clone();
        sorted.sort();
        assert_eq!(blocks, sorted);
        let tone_span = p.section_offsets.last().unwrap();
        assert!(p.slice(tone_span).contains("It's just a spell."));
        let personality = p
            .section_offsets
            .iter()
            .find(|o| o.block == Block::Train && o.key == Some(TraitKey::Personality))
            .unwrap();
        assert!(p.slice(personality).contains("warmer"));
    }

    #[test]
    fn missing_init_block_is_rejected() {
        let s = empty_snapshot("frieren", FixedClock::epoch().now()).unwrap();
        let err = assemble(&s, &ToneProfile::empty("frieren")).unwrap_err();
        assert!(err.to_string().contains("initialization"));
    }

    #[test]
    fn tone_prefers_longest_then_corpus_order() {
        let corpus = CharacterCorpus {
            character_id: "c".into(),
            display_name: "C".into(),
            info_doc: "info".into(),
            chapters: Vec::new(),
            dialogue_lines: vec!["bb".into(), "a".into(), "cc".into(), "dddd".into()],
            language_tag: "en".into(),
        };
        assert_eq!(build_tone(&corpus, 3).exemplars, vec!["dddd", "bb", "cc"]);
        assert_eq!(build_tone(&corpus, 20).exemplars.len(), 4);
    }
}
