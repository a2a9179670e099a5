//! Persona data model: the eight traits, their kinds, and epoch snapshots.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::tokenize::Tokenizer;
use crate::{Error, Result};

pub const SNAPSHOT_SCHEMA_VERSION: u32 = 1;

/// The eight traits tracked for every character, in canonical rendering order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraitKey {
    Personality,
    PhysicalDescription,
    Motivations,
    Backstory,
    Emotions,
    Relationships,
    GrowthAndChange,
    Conflict,
}

/// How a trait evolves during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraitKind {
    /// Internal attribute: generalized each epoch, the latest text replaces the prior one.
    TypeA,
    /// External attribute: appended each epoch in chronological order.
    TypeB,
}

impl TraitKey {
    pub const ALL: [TraitKey; 8] = [
        TraitKey::Personality,
        TraitKey::PhysicalDescription,
        TraitKey::Motivations,
        TraitKey::Backstory,
        TraitKey::Emotions,
        TraitKey::Relationships,
        TraitKey::GrowthAndChange,
        TraitKey::Conflict,
    ];

    /// Traits distilled during initialization.
    pub const INIT: [TraitKey; 5] = [
        TraitKey::Personality,
        TraitKey::PhysicalDescription,
        TraitKey::Motivations,
        TraitKey::Backstory,
        TraitKey::Relationships,
    ];

    pub fn kind(self) -> TraitKind {
        kind_of(self)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TraitKey::Personality => "personality",
            TraitKey::PhysicalDescription => "physical_description",
            TraitKey::Motivations => "motivations",
            TraitKey::Backstory => "backstory",
            TraitKey::Emotions => "emotions",
            TraitKey::Relationships => "relationships",
            TraitKey::GrowthAndChange => "growth_and_change",
            TraitKey::Conflict => "conflict",
        }
    }

    /// Human-readable heading, e.g. `"Growth and Change"`.
    pub fn display_name(self) -> &'static str {
        match self {
            TraitKey::Personality => "Personality",
            TraitKey::PhysicalDescription => "Physical Description",
            TraitKey::Motivations => "Motivations",
            TraitKey::Backstory => "Backstory",
            TraitKey::Emotions => "Emotions",
            TraitKey::Relationships => "Relationships",
            TraitKey::GrowthAndChange => "Growth and Change",
            TraitKey::Conflict => "Conflict",
        }
    }

    /// Short definition substituted into extraction prompts.
    pub fn definition(self) -> &'static str {
        match self {
            TraitKey::Personality => {
                "the character's enduring temperament and dispositions, such as courage, shyness or humor"
            }
            TraitKey::PhysicalDescription => "how the character looks: build, features, clothing",
            TraitKey::Motivations => "the goals and desires that push the character to act",
            TraitKey::Backstory => "past events and history that shaped who the character is and what they want",
            TraitKey::Emotions => "the emotions the character feels and how they color reactions",
            TraitKey::Relationships => "the character's ties to and interactions with other characters",
            TraitKey::GrowthAndChange => "how the character develops as the story moves forward",
            TraitKey::Conflict => "internal struggles and external opposition the character faces",
        }
    }

    pub fn is_init_trait(self) -> bool {
        Self::INIT.contains(&self)
    }
}

impl fmt::Display for TraitKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TraitKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TraitKey::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::validation(format!("unknown trait `{s}`")))
    }
}

pub fn kind_of(key: TraitKey) -> TraitKind {
    match key {
        TraitKey::Personality | TraitKey::PhysicalDescription | TraitKey::Motivations => TraitKind::TypeA,
        TraitKey::Backstory
        | TraitKey::Emotions
        | TraitKey::Relationships
        | TraitKey::GrowthAndChange
        | TraitKey::Conflict => TraitKind::TypeB,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraitEntry {
    /// 0 is reserved for initialization content; training entries start at 1.
    pub epoch: u32,
    pub content: String,
    pub source_chapter_id: String,
    pub token_count: usize,
}

impl TraitEntry {
    pub fn new(
        epoch: u32,
        content: impl Into<String>,
        source_chapter_id: impl Into<String>,
        tokenizer: &dyn Tokenizer,
    ) -> Result<Self> {
        let content = content.into();
        if content.trim().is_empty() {
            return Err(Error::validation("trait entry content is empty"));
        }
        let token_count = tokenizer.count(&content);
        Ok(TraitEntry {
            epoch,
            content,
            source_chapter_id: source_chapter_id.into(),
            token_count,
        })
    }
}

/// Identifier used for entries extracted from chapter `index`.
pub fn chapter_source_id(index: u32) -> String {
    format!("chapter-{index:03}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraitSection {
    pub key: TraitKey,
    pub kind: TraitKind,
    pub entries: Vec<TraitEntry>,
}

impl TraitSection {
    pub fn empty(key: TraitKey) -> Self {
        TraitSection {
            key,
            kind: kind_of(key),
            entries: Vec::new(),
        }
    }

    /// The current generalized text of a Type A section.
    pub fn latest(&self) -> Option<&TraitEntry> {
        self.entries.last()
    }

    fn validate(&self, snapshot_epoch: u32) -> Result<()> {
        if self.kind != kind_of(self.key) {
            return Err(Error::validation(format!(
                "section {} has kind {:?}, expected {:?}",
                self.key,
                self.kind,
                kind_of(self.key)
            )));
        }
        for e in &self.entries {
            if e.content.trim().is_empty() {
                return Err(Error::validation(format!("empty entry in section {}", self.key)));
            }
            if e.epoch == 0 || e.epoch > snapshot_epoch {
                return Err(Error::validation(format!(
                    "section {} holds an entry from epoch {} in a snapshot at epoch {}",
                    self.key, e.epoch, snapshot_epoch
                )));
            }
        }
        match self.kind {
            TraitKind::TypeA if self.entries.len() > 1 => Err(Error::validation(format!(
                "type A section {} holds {} entries",
                self.key,
                self.entries.len()
            ))),
            TraitKind::TypeB if self.entries.windows(2).any(|w| w[0].epoch >= w[1].epoch) => Err(Error::validation(
                format!("type B section {} is not strictly ordered by epoch", self.key),
            )),
            _ => Ok(()),
        }
    }
}

/// The five texts produced by initialization. Narrative-progression traits
/// (emotions, growth and change, conflict) have no field here.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitPersona {
    pub personality: String,
    pub physical_description: String,
    pub motivations: String,
    pub backstory: String,
    pub relationships: String,
}

impl InitPersona {
    /// Builds from one text per initialization trait. Every key in
    /// [`TraitKey::INIT`] must be present and non-empty, and no other key is accepted.
    pub fn from_map(mut texts: BTreeMap<TraitKey, String>) -> Result<Self> {
        if let Some(extra) = texts.keys().find(|k| !k.is_init_trait()) {
            return Err(Error::validation(format!(
                "trait {extra} is not part of the initialization persona"
            )));
        }
        let mut take = |key: TraitKey| -> Result<String> {
            match texts.remove(&key) {
                Some(t) if !t.trim().is_empty() => Ok(t),
                _ => Err(Error::validation(format!(
                    "initialization text for trait {key} is empty"
                ))),
            }
        };
        Ok(InitPersona {
            personality: take(TraitKey::Personality)?,
            physical_description: take(TraitKey::PhysicalDescription)?,
            motivations: take(TraitKey::Motivations)?,
            backstory: take(TraitKey::Backstory)?,
            relationships: take(TraitKey::Relationships)?,
        })
    }

    pub fn get(&self, key: TraitKey) -> Option<&str> {
        match key {
            TraitKey::Personality => Some(&self.personality),
            TraitKey::PhysicalDescription => Some(&self.physical_description),
            TraitKey::Motivations => Some(&self.motivations),
            TraitKey::Backstory => Some(&self.backstory),
            TraitKey::Relationships => Some(&self.relationships),
            _ => None,
        }
    }

    /// `(key, text)` pairs in canonical order.
    pub fn iter(&self) -> impl Iterator<Item = (TraitKey, &str)> {
        TraitKey::INIT
            .into_iter()
            .map(move |k| (k, self.get(k).expect("init trait")))
    }

    pub fn token_count(&self, tokenizer: &dyn Tokenizer) -> usize {
        self.iter().map(|(_, t)| tokenizer.count(t)).sum()
    }
}

/// Which chapter produced a snapshot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChapterRef {
    pub index: u32,
    pub title: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaSnapshot {
    pub schema_version: u32,
    pub character_id: String,
    pub epoch: u32,
    pub init_block: Option<InitPersona>,
    pub sections: BTreeMap<TraitKey, TraitSection>,
    pub created_at: DateTime<Utc>,
    pub provider_fingerprint: String,
    /// The chapter folded in at this epoch; absent for epoch 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_chapter: Option<ChapterRef>,
}

/// Character identifiers double as directory names, so they are restricted to
/// ASCII letters, digits, `-` and `_`.
pub fn validate_character_id(id: &str) -> Result<()> {
    if id.is_empty() {
        return Err(Error::precondition("character id is empty"));
    }
    if id.len() > 64 || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
        return Err(Error::precondition(format!(
            "character id `{id}` must be 1-64 characters of [A-Za-z0-9_-]"
        )));
    }
    Ok(())
}

pub fn empty_snapshot(character_id: &str, created_at: DateTime<Utc>) -> Result<PersonaSnapshot> {
    validate_character_id(character_id)?;
    Ok(PersonaSnapshot {
        schema_version: SNAPSHOT_SCHEMA_VERSION,
        character_id: character_id.to_string(),
        epoch: 0,
        init_block: None,
        sections: TraitKey::ALL.into_iter().map(|k| (k, TraitSection::empty(k))).collect(),
        created_at,
        provider_fingerprint: String::new(),
        source_chapter: None,
    })
}

impl PersonaSnapshot {
    pub fn section(&self, key: TraitKey) -> &TraitSection {
        self.sections.get(&key).expect("snapshot holds every trait section")
    }

    pub fn validate(&self) -> Result<()> {
        validate_character_id(&self.character_id)?;
        if self.schema_version != SNAPSHOT_SCHEMA_VERSION {
            return Err(Error::validation(format!(
                "unsupported snapshot schema version {}",
                self.schema_version
            )));
        }
        for key in TraitKey::ALL {
            let section = self
                .sections
                .get(&key)
                .ok_or_else(|| Error::validation(format!("snapshot lacks section {key}")))?;
            if section.key != key {
                return Err(Error::validation(format!(
                    "section stored under {key} is labelled {}",
                    section.key
                )));
            }
            section.validate(self.epoch)?;
        }
        if self.epoch == 0 && self.sections.values().any(|s| !s.entries.is_empty()) {
            return Err(Error::validation("epoch-0 snapshot holds trained entries"));
        }
        Ok(())
    }
}

/// Per-trait token totals: entry token counts plus, for the five
/// initialization traits, the init block text.
pub fn section_token_totals(snapshot: &PersonaSnapshot, tokenizer: &dyn Tokenizer) -> BTreeMap<TraitKey, usize> {
    TraitKey::ALL
        .into_iter()
        .map(|key| {
            let entries: usize = snapshot.section(key).entries.iter().map(|e| e.token_count).sum();
            let init = snapshot
                .init_block
                .as_ref()
                .and_then(|b| b.get(key))
                .map_or(0, |t| tokenizer.count(t));
            (key, entries + init)
        })
        .collect()
}

/// Which block of the assembled document a span belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Init,
    Train,
    Tone,
}

/// A half-open range `[start, end)` measured in Unicode scalar values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionOffset {
    pub block: Block,
    /// `None` for the tone block.
    pub key: Option<TraitKey>,
    pub start: usize,
    pub end: usize,
}

/// The final persona document handed to the inference prompt: initialization
/// block, then trained block, then tone block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssembledPersona {
    pub character_id: String,
    pub epoch: u32,
    pub body: String,
    pub tone: Option<String>,
    pub section_offsets: Vec<SectionOffset>,
}

impl AssembledPersona {
    /// Text covered by `offset`.
    pub fn slice(&self, offset: &SectionOffset) -> String {
        self.body
            .chars()
            .skip(offset.start)
            .take(offset.end - offset.start)
            .collect()
    }

    /// `(start, end)` of a whole block, if present.
    pub fn block_range(&self, block: Block) -> Option<(usize, usize)> {
        let spans: Vec<_> = self.section_offsets.iter().filter(|o| o.block == block).collect();
        Some((spans.first()?.start, spans.last()?.end))
    }
}
