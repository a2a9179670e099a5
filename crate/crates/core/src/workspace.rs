//! One configured installation: store, pipeline and question bank, with the
//! operations the CLI and the HTTP service both expose.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::AppConfig;
use crate::corpus::{compute_stats, load_corpus, CharacterCorpus, CorpusStats};
use crate::cpt::{train, TrainFailure, TrainRun};
use crate::evaluation::bfi::{administer_with_persona, score_facets, FacetScoreTable, QuestionBank};
use crate::evaluation::stories::{run_story_task, StoryRun};
use crate::inference::{assemble, build_tone, AssembledPersona, ChatSession};
use crate::initializer::{initialize, Initialized};
use crate::persona::{section_token_totals, PersonaSnapshot, TraitKey};
use crate::pipeline::Pipeline;
use crate::store::{CharacterRecord, EpochDescriptor, Lineage, PersonaStore, StoreError};
use crate::{Error, Result};

/// An assembled persona together with per-trait token totals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaView {
    #[serde(flatten)]
    pub persona: AssembledPersona,
    pub section_token_totals: BTreeMap<TraitKey, usize>,
}

/// Registration data plus the current head of the lineage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharacterDescriptor {
    #[serde(flatten)]
    pub record: CharacterRecord,
    pub chapter_count: usize,
    pub head: Option<u32>,
}

pub struct Workspace {
    pub config: AppConfig,
    pub store: PersonaStore,
    pub pipeline: Pipeline,
    pub bank: QuestionBank,
}

impl Workspace {
    pub fn open(config: AppConfig) -> Result<Self> {
        let pipeline = config.pipeline()?;
        Self::with_pipeline(config, pipeline)
    }

    /// Uses an explicit pipeline instead of the configured provider.
    pub fn with_pipeline(config: AppConfig, pipeline: Pipeline) -> Result<Self> {
        let store = PersonaStore::open(&config.store_root)?;
        let bank = match &config.question_bank {
            Some(path) => QuestionBank::load(path)?,
            None => QuestionBank::placeholder(),
        };
        Ok(Workspace {
            config,
            store,
            pipeline,
            bank,
        })
    }

    /// Registers the corpus at `path` (resolved against the corpus root).
    pub fn register(&self, path: &Path) -> Result<CharacterDescriptor> {
        let path = self.config.corpus_path(path);
        let path = path.canonicalize().unwrap_or(path);
        let corpus = load_corpus(&path)?;
        let record = self.store.register_character(&CharacterRecord {
            character_id: corpus.character_id.clone(),
            corpus_path: path,
            display_name: corpus.display_name.clone(),
            registered_at: self.pipeline.clock.now(),
        })?;
        self.describe(&record.character_id)
    }

    /// A registered id, or a corpus directory that is registered on the fly.
    pub fn resolve(&self, character: &str) -> Result<String> {
        if self.store.character(character).is_ok() {
            return Ok(character.to_string());
        }
        let path = self.config.corpus_path(Path::new(character));
        if path.is_dir() {
            return Ok(self.register(&path)?.record.character_id);
        }
        Err(StoreError::UnknownCharacter(character.to_string()).into())
    }

    pub fn describe(&self, id: &str) -> Result<CharacterDescriptor> {
        let record = self.store.character(id)?;
        let corpus = load_corpus(&record.corpus_path)?;
        Ok(CharacterDescriptor {
            head: self.lineage(id)?.head()?,
            chapter_count: corpus.chapters.len(),
            record,
        })
    }

    pub fn list(&self) -> Result<Vec<CharacterDescriptor>> {
        self.store
            .list_characters()?
            .iter()
            .map(|r| self.describe(&r.character_id))
            .collect()
    }

    pub fn corpus(&self, id: &str) -> Result<CharacterCorpus> {
        Ok(load_corpus(&self.store.character(id)?.corpus_path)?)
    }

    pub fn lineage(&self, id: &str) -> Result<Lineage> {
        self.store.character(id)?;
        Ok(self.store.lineage(id, &self.pipeline.prompts)?)
    }

    /// Builds and stores the epoch-0 snapshot. Refuses to overwrite.
    pub fn initialize(&self, id: &str) -> Result<Initialized> {
        let corpus = self.corpus(id)?;
        let lineage = self.lineage(id)?;
        let _lock = lineage.lock()?;
        if lineage.head()?.is_some() {
            return Err(StoreError::EpochExists { epoch: 0 }.into());
        }
        let init = initialize(&self.pipeline, &corpus)?;
        lineage.put_snapshot(&init.snapshot)?;
        Ok(init)
    }

    pub fn train(
        &self,
        id: &str,
        resume_from: Option<u32>,
        on_epoch: &mut dyn FnMut(&PersonaSnapshot),
    ) -> Result<TrainRun, Box<TrainFailure>> {
        let setup = self.corpus(id).and_then(|c| Ok((c, self.lineage(id)?)));
        let (corpus, lineage) = setup.map_err(|error| {
            Box::new(TrainFailure {
                run: TrainRun {
                    character_id: id.to_string(),
                    start_epoch: resume_from.unwrap_or(1),
                    end_epoch: 0,
                    prompt_set: self.pipeline.prompts.version_hash().to_string(),
                    model: self.pipeline.gateway.model_id().to_string(),
                    log: Vec::new(),
                },
                failed_epoch: None,
                error,
            })
        })?;
        train(&self.pipeline, &corpus, &lineage, resume_from, on_epoch).map_err(Box::new)
    }

    pub fn epochs(&self, id: &str) -> Result<Vec<EpochDescriptor>> {
        Ok(self.lineage(id)?.list_epochs()?)
    }

    pub fn snapshot(&self, id: &str, epoch: u32) -> Result<PersonaSnapshot> {
        let lineage = self.lineage(id)?;
        if lineage.head()?.is_none() {
            return Err(Error::precondition(format!(
                "`{id}` has no snapshots yet; run initialization first"
            )));
        }
        Ok(lineage.get_snapshot(epoch)?)
    }

    pub fn persona(&self, id: &str, epoch: u32) -> Result<PersonaView> {
        let corpus = self.corpus(id)?;
        let snapshot = self.snapshot(id, epoch)?;
        let tone = build_tone(&corpus, self.pipeline.settings.tone_exemplars);
        Ok(PersonaView {
            persona: assemble(&snapshot, &tone)?,
            section_token_totals: section_token_totals(&snapshot, self.pipeline.tokenizer.as_ref()),
        })
    }

    pub fn stats(&self, id: &str) -> Result<CorpusStats> {
        let corpus = self.corpus(id)?;
        let lineage = self.lineage(id)?;
        let head = match lineage.head()? {
            Some(h) => Some(lineage.get_snapshot(h)?),
            None => None,
        };
        Ok(compute_stats(&corpus, head.as_ref(), self.pipeline.tokenizer.as_ref()))
    }

    /// A new chat session pinned to `epoch`.
    pub fn open_session(&self, session_id: &str, id: &str, epoch: u32) -> Result<ChatSession> {
        let corpus = self.corpus(id)?;
        let view = self.persona(id, epoch)?;
        Ok(ChatSession::new(
            session_id,
            &corpus,
            view.persona,
            self.pipeline.clock.now(),
        ))
    }

    /// Administers the question bank `runs` times and scores the answers.
    pub fn eval_bfi(&self, id: &str, epoch: u32, runs: usize) -> Result<FacetScoreTable> {
        if runs == 0 {
            return Err(Error::precondition("runs must be at least 1"));
        }
        let corpus = self.corpus(id)?;
        let persona = self.persona(id, epoch)?.persona;
        let respondent = format!("{id}@{epoch}");
        let sheets = (0..runs)
            .map(|_| administer_with_persona(&self.pipeline, &corpus, &persona, &self.bank, &respondent))
            .collect::<Result<Vec<_>>>()?;
        Ok(score_facets(&self.bank, &sheets)?)
    }

    /// Generates `n` stories and stores each successful one.
    pub fn eval_stories(&self, id: &str, epoch: u32, n: usize) -> Result<StoryRun> {
        if n == 0 {
            return Err(Error::precondition("n must be at least 1"));
        }
        let corpus = self.corpus(id)?;
        let persona = self.persona(id, epoch)?.persona;
        let run = run_story_task(&self.pipeline, &corpus, &persona, n);
        let lineage = self.lineage(id)?;
        for story in &run.stories {
            lineage.put_story(&story.story_id, story)?;
        }
        Ok(run)
    }
}
