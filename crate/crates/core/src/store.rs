//! File-backed, epoch-addressable persona storage.
//!
//! Layout under the store root:
//!
//! ```text
//! <character_id>/character.json
//! <character_id>/<prompt_hash>/HEAD
//! <character_id>/<prompt_hash>/LOCK
//! <character_id>/<prompt_hash>/runlog.jsonl
//! <character_id>/<prompt_hash>/prompts/{extraction,generalization,inference}.txt
//! <character_id>/<prompt_hash>/snapshots/epoch_NNN.json
//! <character_id>/<prompt_hash>/stories/<story_id>.json
//! ```
//!
//! Each prompt-set version gets its own lineage directory. Snapshot files are
//! written to a temporary name and renamed into place, so a snapshot either
//! exists completely or not at all. `HEAD` is a convenience pointer; the
//! snapshot directory is authoritative and `HEAD` is rewritten from it when
//! the two disagree.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::cpt::OutcomeRecord;
use crate::error::ErrorClass;
use crate::persona::{validate_character_id, PersonaSnapshot, SNAPSHOT_SCHEMA_VERSION};
use crate::prompts::PromptSet;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("no snapshot for `{character_id}` at epoch {epoch}; available epochs: {}", fmt_epochs(.available))]
    EpochNotFound {
        character_id: String,
        epoch: u32,
        available: Vec<u32>,
    },
    #[error("unknown character `{0}`")]
    UnknownCharacter(String),
    #[error("{0} not found")]
    Missing(String),
    #[error("epoch {epoch} is already persisted; snapshots are immutable")]
    EpochExists { epoch: u32 },
    #[error("cannot store epoch {epoch}: expected epoch {expected}")]
    EpochGap { epoch: u32, expected: u32 },
    #[error("character `{id}` is already registered with corpus {existing}")]
    CharacterConflict { id: String, existing: String },
    #[error("lineage is locked by another writer ({}); remove the file if no writer is running", .path.display())]
    Locked { path: PathBuf },
    #[error("invalid snapshot: {0}")]
    InvalidSnapshot(String),
    #[error("corrupt store file {}: {message}", .path.display())]
    Corrupt { path: PathBuf, message: String },
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn fmt_epochs(epochs: &[u32]) -> String {
    match (epochs.first(), epochs.last()) {
        (None, _) | (_, None) => "none".to_string(),
        (Some(a), Some(b)) if epochs.len() as u32 == b - a + 1 && epochs.len() > 2 => {
            format!("{a}..={b}")
        }
        _ => epochs.iter().map(u32::to_string).collect::<Vec<_>>().join(", "),
    }
}

impl StoreError {
    pub fn class(&self) -> ErrorClass {
        match self {
            StoreError::EpochNotFound { .. } | StoreError::UnknownCharacter(_) | StoreError::Missing(_) => {
                ErrorClass::NotFound
            }
            StoreError::EpochExists { .. }
            | StoreError::EpochGap { .. }
            | StoreError::CharacterConflict { .. }
            | StoreError::Locked { .. } => ErrorClass::Conflict,
            StoreError::InvalidSnapshot(_) => ErrorClass::Validation,
            StoreError::Corrupt { .. } | StoreError::Io { .. } => ErrorClass::Internal,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Individual write steps, in the order a snapshot commit performs them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WriteStep {
    /// Half of the temporary snapshot file has been written.
    SnapshotTemp,
    SnapshotRename,
    HeadTemp,
    HeadRename,
    /// Half of a run-log line has been appended.
    RunlogAppend,
    /// Any other atomic file write (registration, stories, transcripts).
    OtherTemp,
    OtherRename,
}

/// Called before a write step completes; an error aborts the write at that
/// point, leaving whatever was already on disk. Used to simulate crashes.
pub type FaultHook = Arc<dyn Fn(WriteStep) -> io::Result<()> + Send + Sync>;

/// Registration record for a character.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharacterRecord {
    pub character_id: String,
    pub corpus_path: PathBuf,
    pub display_name: String,
    pub registered_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochDescriptor {
    pub epoch: u32,
    pub created_at: DateTime<Utc>,
    pub chapter_title: Option<String>,
}

#[derive(Clone)]
pub struct PersonaStore {
    root: PathBuf,
    fault: Option<FaultHook>,
}

impl std::fmt::Debug for PersonaStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PersonaStore")
            .field("root", &self.root)
            .field("fault", &self.fault.is_some())
            .finish()
    }
}

/// Pretty JSON with a trailing newline; identical values give identical bytes.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("store values serialize");
    bytes.push(b'\n');
    bytes
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, StoreError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

impl PersonaStore {
    /// Opens (creating if needed) a store rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        Ok(PersonaStore { root, fault: None })
    }

    pub fn with_fault_hook(mut self, hook: FaultHook) -> Self {
        self.fault = Some(hook);
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn fault(&self, step: WriteStep) -> io::Result<()> {
        match &self.fault {
            Some(hook) => hook(step),
            None => Ok(()),
        }
    }

    /// Writes `bytes` to `path` via a sibling temporary file and a rename.
    fn write_atomic(&self, path: &Path, bytes: &[u8], steps: (WriteStep, WriteStep)) -> Result<(), StoreError> {
        let tmp = path.with_extension("tmp");
        let mut file = File::create(&tmp).map_err(io_err(&tmp))?;
        let half = bytes.len() / 2;
        file.write_all(&bytes[..half]).map_err(io_err(&tmp))?;
        self.fault(steps.0).map_err(io_err(&tmp))?;
        file.write_all(&bytes[half..]).map_err(io_err(&tmp))?;
        file.sync_all().map_err(io_err(&tmp))?;
        drop(file);
        self.fault(steps.1).map_err(io_err(path))?;
        fs::rename(&tmp, path).map_err(io_err(path))?;
        Ok(())
    }

    fn character_dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    /// Records where a character's corpus lives. Re-registering the same path
    /// is a no-op; a different path is a conflict.
    pub fn register_character(&self, record: &CharacterRecord) -> Result<CharacterRecord, StoreError> {
        validate_character_id(&record.character_id).map_err(|e| StoreError::InvalidSnapshot(e.to_string()))?;
        if let Ok(existing) = self.character(&record.character_id) {
            if existing.corpus_path == record.corpus_path {
                return Ok(existing);
            }
            return Err(StoreError::CharacterConflict {
                id: record.character_id.clone(),
                existing: existing.corpus_path.display().to_string(),
            });
        }
        let dir = self.character_dir(&record.character_id);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        self.write_atomic(
            &dir.join("character.json"),
            &to_json_bytes(record),
            (WriteStep::OtherTemp, WriteStep::OtherRename),
        )?;
        Ok(record.clone())
    }

    pub fn character(&self, id: &str) -> Result<CharacterRecord, StoreError> {
        let path = self.character_dir(id).join("character.json");
        if validate_character_id(id).is_err() || !path.is_file() {
            return Err(StoreError::UnknownCharacter(id.to_string()));
        }
        read_json(&path)
    }

    /// Registered characters, sorted by id.
    pub fn list_characters(&self) -> Result<Vec<CharacterRecord>, StoreError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.root).map_err(io_err(&self.root))? {
            let entry = entry.map_err(io_err(&self.root))?;
            let path = entry.path().join("character.json");
            if path.is_file() {
                out.push(read_json::<CharacterRecord>(&path)?);
            }
        }
        out.sort_by(|a, b| a.character_id.cmp(&b.character_id));
        Ok(out)
    }

    /// The lineage of `character_id` under `prompts`. Creates the directory
    /// and archives the prompt templates on first use.
    pub fn lineage(&self, character_id: &str, prompts: &PromptSet) -> Result<Lineage, StoreError> {
        validate_character_id(character_id).map_err(|_| StoreError::UnknownCharacter(character_id.to_string()))?;
        let dir = self.character_dir(character_id).join(prompts.short_hash());
        let snapshots = dir.join("snapshots");
        fs::create_dir_all(&snapshots).map_err(io_err(&snapshots))?;
        let archive = dir.join("prompts");
        if !archive.is_dir() {
            prompts.write_dir(&archive).map_err(|e| StoreError::Io {
                path: archive.clone(),
                source: io::Error::other(e.to_string()),
            })?;
        }
        Ok(Lineage {
            store: self.clone(),
            character_id: character_id.to_string(),
            dir,
        })
    }
}

/// The snapshot chain of one character under one prompt-set version.
#[derive(Debug, Clone)]
pub struct Lineage {
    store: PersonaStore,
    character_id: String,
    dir: PathBuf,
}

/// Holds the lineage write lock until dropped.
#[derive(Debug)]
pub struct LineageLock {
    path: PathBuf,
}

impl Drop for LineageLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn snapshot_file(epoch: u32) -> String {
    format!("epoch_{epoch:03}.json")
}

fn parse_snapshot_file(name: &str) -> Option<u32> {
    name.strip_prefix("epoch_")?.strip_suffix(".json")?.parse().ok()
}

impl Lineage {
    pub fn character_id(&self) -> &str {
        &self.character_id
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn snapshots_dir(&self) -> PathBuf {
        self.dir.join("snapshots")
    }

    fn runlog_path(&self) -> PathBuf {
        self.dir.join("runlog.jsonl")
    }

    /// Takes the single-writer lock.
    pub fn lock(&self) -> Result<LineageLock, StoreError> {
        let path = self.dir.join("LOCK");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(LineageLock { path })
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(StoreError::Locked { path }),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    pub fn is_locked(&self) -> bool {
        self.dir.join("LOCK").exists()
    }

    /// Persisted epochs in ascending order, from the snapshot directory.
    pub fn epochs(&self) -> Result<Vec<u32>, StoreError> {
        let dir = self.snapshots_dir();
        let mut epochs = Vec::new();
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let entry = entry.map_err(io_err(&dir))?;
            if let Some(e) = entry.file_name().to_str().and_then(parse_snapshot_file) {
                epochs.push(e);
            }
        }
        epochs.sort_unstable();
        Ok(epochs)
    }

    /// Highest persisted epoch, or `None` before initialization. Repairs a
    /// stale `HEAD` file.
    pub fn head(&self) -> Result<Option<u32>, StoreError> {
        let head = self.epochs()?.last().copied();
        let head_path = self.dir.join("HEAD");
        let recorded = fs::read_to_string(&head_path)
            .ok()
            .and_then(|s| s.trim().parse::<u32>().ok());
        if recorded != head {
            if let Some(h) = head {
                tracing::warn!(
                    recorded = ?recorded,
                    actual = h,
                    "HEAD disagrees with snapshot directory; rewriting"
                );
                self.write_head(h)?;
            }
        }
        Ok(head)
    }

    fn write_head(&self, epoch: u32) -> Result<(), StoreError> {
        self.store.write_atomic(
            &self.dir.join("HEAD"),
            format!("{epoch}\n").as_bytes(),
            (WriteStep::HeadTemp, WriteStep::HeadRename),
        )
    }

    /// Persists the next snapshot of the chain.
    pub fn put_snapshot(&self, snapshot: &PersonaSnapshot) -> Result<(), StoreError> {
        snapshot
            .validate()
            .map_err(|e| StoreError::InvalidSnapshot(e.to_string()))?;
        if snapshot.character_id != self.character_id {
            return Err(StoreError::InvalidSnapshot(format!(
                "snapshot belongs to `{}`, lineage to `{}`",
                snapshot.character_id, self.character_id
            )));
        }
        let epochs = self.epochs()?;
        if epochs.contains(&snapshot.epoch) {
            return Err(StoreError::EpochExists { epoch: snapshot.epoch });
        }
        let expected = epochs.last().map_or(0, |h| h + 1);
        if snapshot.epoch != expected {
            return Err(StoreError::EpochGap {
                epoch: snapshot.epoch,
                expected,
            });
        }
        let path = self.snapshots_dir().join(snapshot_file(snapshot.epoch));
        self.store.write_atomic(
            &path,
            &to_json_bytes(snapshot),
            (WriteStep::SnapshotTemp, WriteStep::SnapshotRename),
        )?;
        self.write_head(snapshot.epoch)
    }

    fn available_error(&self, epoch: u32) -> StoreError {
        StoreError::EpochNotFound {
            character_id: self.character_id.clone(),
            epoch,
            available: self.epochs().unwrap_or_default(),
        }
    }

    pub fn get_snapshot(&self, epoch: u32) -> Result<PersonaSnapshot, StoreError> {
        let path = self.snapshots_dir().join(snapshot_file(epoch));
        if !path.is_file() {
            return Err(self.available_error(epoch));
        }
        let snapshot: PersonaSnapshot = read_json(&path)?;
        if snapshot.schema_version > SNAPSHOT_SCHEMA_VERSION {
            return Err(StoreError::Corrupt {
                path,
                message: format!("unsupported schema version {}", snapshot.schema_version),
            });
        }
        Ok(snapshot)
    }

    /// Raw bytes of a stored snapshot.
    pub fn snapshot_bytes(&self, epoch: u32) -> Result<Vec<u8>, StoreError> {
        let path = self.snapshots_dir().join(snapshot_file(epoch));
        fs::read(&path).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => self.available_error(epoch),
            _ => io_err(&path)(e),
        })
    }

    pub fn list_epochs(&self) -> Result<Vec<EpochDescriptor>, StoreError> {
        self.epochs()?
            .into_iter()
            .map(|epoch| {
                let s = self.get_snapshot(epoch)?;
                Ok(EpochDescriptor {
                    epoch,
                    created_at: s.created_at,
                    chapter_title: s.source_chapter.map(|c| c.title),
                })
            })
            .collect()
    }

    /// Appends run-log records, one JSON object per line.
    pub fn append_runlog(&self, records: &[OutcomeRecord]) -> Result<(), StoreError> {
        if records.is_empty() {
            return Ok(());
        }
        let path = self.runlog_path();
        let mut text = String::new();
        for r in records {
            text.push_str(&serde_json::to_string(r).expect("run-log records serialize"));
            text.push('\n');
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        // A previous crash may have left a partial line; start on a fresh one.
        let len = file.metadata().map_err(io_err(&path))?.len();
        if len > 0 && !ends_with_newline(&path)? {
            file.write_all(b"\n").map_err(io_err(&path))?;
        }
        let bytes = text.as_bytes();
        let half = bytes.len() / 2;
        file.write_all(&bytes[..half]).map_err(io_err(&path))?;
        self.store.fault(WriteStep::RunlogAppend).map_err(io_err(&path))?;
        file.write_all(&bytes[half..]).map_err(io_err(&path))?;
        file.sync_all().map_err(io_err(&path))?;
        Ok(())
    }

    /// Reads the run log, skipping lines torn by an interrupted append.
    pub fn read_runlog(&self) -> Result<Vec<OutcomeRecord>, StoreError> {
        let path = self.runlog_path();
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&path)(e)),
        };
        let mut out = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(line) {
                Ok(r) => out.push(r),
                Err(e) => tracing::warn!(line = n + 1, error = %e, "skipping torn run-log line"),
            }
        }
        Ok(out)
    }

    /// Stores a JSON document under `stories/<id>.json`.
    pub fn put_story<T: Serialize>(&self, id: &str, story: &T) -> Result<(), StoreError> {
        let dir = self.dir.join("stories");
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        self.store.write_atomic(
            &dir.join(format!("{id}.json")),
            &to_json_bytes(story),
            (WriteStep::OtherTemp, WriteStep::OtherRename),
        )
    }

    pub fn get_story<T: DeserializeOwned>(&self, id: &str) -> Result<T, StoreError> {
        let path = self.dir.join("stories").join(format!("{id}.json"));
        if !path.is_file() {
            return Err(StoreError::Missing(format!("story {id}")));
        }
        read_json(&path)
    }

    /// Story ids, sorted.
    pub fn list_stories(&self) -> Result<Vec<String>, StoreError> {
        let dir = self.dir.join("stories");
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        let mut ids = Vec::new();
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let name = entry.map_err(io_err(&dir))?.file_name();
            if let Some(id) = name.to_str().and_then(|n| n.strip_suffix(".json")) {
                ids.push(id.to_string());
            }
        }
        ids.sort();
        Ok(ids)
    }

    /// Writes a session transcript (JSON lines) under `sessions/<id>.jsonl`.
    pub fn put_transcript(&self, session_id: &str, jsonl: &str) -> Result<PathBuf, StoreError> {
        let dir = self.dir.join("sessions");
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let path = dir.join(format!("{session_id}.jsonl"));
        self.store
            .write_atomic(&path, jsonl.as_bytes(), (WriteStep::OtherTemp, WriteStep::OtherRename))?;
        Ok(path)
    }
}

fn ends_with_newline(path: &Path) -> Result<bool, StoreError> {
    use std::io::{Read, Seek, SeekFrom};
    let mut f = File::open(path).map_err(io_err(path))?;
    f.seek(SeekFrom::End(-1)).map_err(io_err(path))?;
    let mut last = [0u8; 1];
    f.read_exact(&mut last).map_err(io_err(path))?;
    Ok(last[0] == b'\n')
}
