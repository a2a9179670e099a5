//! Per-character source material and its on-disk layout.
//!
//! ```text
//! <character_id>/
//!   character.toml | character.json   optional: display_name, language_tag
//!   info.md                           unstructured character information
//!   chapters/NNN_<slug>.md            1-based, contiguous; optional "# Title" first line
//!   dialogue/*.txt                    optional, one utterance per line
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::persona::{section_token_totals, validate_character_id, PersonaSnapshot};
use crate::tokenize::Tokenizer;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("missing character information document: {0}")]
    MissingInfo(PathBuf),
    #[error("character information document is empty: {0}")]
    EmptyInfo(PathBuf),
    #[error("no chapter summaries under {0}")]
    NoChapters(PathBuf),
    #[error("chapter file name must start with a 1-based index: {0}")]
    BadChapterName(PathBuf),
    #[error("gap at index {missing} in {dir}")]
    IndexGap { missing: u32, dir: PathBuf },
    #[error("duplicate chapter index {index}: {first} and {second}")]
    DuplicateIndex {
        index: u32,
        first: PathBuf,
        second: PathBuf,
    },
    #[error("chapter body is empty: {0}")]
    EmptyChapter(PathBuf),
    #[error("invalid character directory name {path}: {reason}")]
    BadCharacterId { path: PathBuf, reason: String },
    #[error("invalid metadata in {path}: {reason}")]
    Metadata { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChapterSummary {
    pub index: u32,
    pub title: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharacterCorpus {
    pub character_id: String,
    pub display_name: String,
    pub info_doc: String,
    pub chapters: Vec<ChapterSummary>,
    pub dialogue_lines: Vec<String>,
    pub language_tag: String,
}

impl CharacterCorpus {
    pub fn chapter(&self, index: u32) -> Option<&ChapterSummary> {
        self.chapters.get(index.checked_sub(1)? as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CorpusStats {
    pub chapter_count: usize,
    pub novel_tokens: usize,
    pub info_tokens: usize,
    pub refined_info_tokens: usize,
    pub dialogue_tokens: usize,
    pub trained_tokens: usize,
}

#[derive(Debug, Default, Deserialize, Serialize)]
struct Metadata {
    display_name: Option<String>,
    language_tag: Option<String>,
}

fn read_metadata(root: &Path) -> Result<Metadata, CorpusError> {
    let toml_path = root.join("character.toml");
    if toml_path.is_file() {
        let text = fs::read_to_string(&toml_path).map_err(io_err(&toml_path))?;
        return toml::from_str(&text).map_err(|e| CorpusError::Metadata {
            path: toml_path,
            reason: e.to_string(),
        });
    }
    let json_path = root.join("character.json");
    if json_path.is_file() {
        let text = fs::read_to_string(&json_path).map_err(io_err(&json_path))?;
        return serde_json::from_str(&text).map_err(|e| CorpusError::Metadata {
            path: json_path,
            reason: e.to_string(),
        });
    }
    Ok(Metadata::default())
}

fn chapter_index(path: &Path) -> Option<u32> {
    let stem = path.file_stem()?.to_str()?;
    let digits: String = stem.chars().take_while(|c| c.is_ascii_digit()).collect();
    let rest = &stem[digits.len()..];
    if digits.is_empty() || !(rest.is_empty() || rest.starts_with('_')) {
        return None;
    }
    digits.parse().ok().filter(|&i| i > 0)
}

fn parse_chapter(path: &Path, index: u32, text: &str) -> Result<ChapterSummary, CorpusError> {
    let text = text.trim_start_matches('\u{feff}');
    let (title, body) = match text.strip_prefix("# ") {
        Some(rest) => {
            let (title, body) = rest.split_once('\n').unwrap_or((rest, ""));
            (title.trim().to_string(), body)
        }
        None => {
            let slug = path
                .file_stem()
                .and_then(|s| s.to_str())
                .and_then(|s| s.split_once('_'))
                .map(|(_, slug)| slug.replace(['_', '-'], " "))
                .unwrap_or_default();
            (slug, text)
        }
    };
    let body = body.trim().to_string();
    if body.is_empty() {
        return Err(CorpusError::EmptyChapter(path.to_path_buf()));
    }
    Ok(ChapterSummary { index, title, body })
}

/// Loads and validates the corpus rooted at `root`; the directory name is the character id.
pub fn load_corpus(root: &Path) -> Result<CharacterCorpus, CorpusError> {
    let character_id = root
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or_default()
        .to_string();
    validate_character_id(&character_id).map_err(|e| CorpusError::BadCharacterId {
        path: root.to_path_buf(),
        reason: e.to_string(),
    })?;
    let meta = read_metadata(root)?;

    let info_path = root.join("info.md");
    if !info_path.is_file() {
        return Err(CorpusError::MissingInfo(info_path));
    }
    let info_doc = fs::read_to_string(&info_path)
        .map_err(io_err(&info_path))?
        .trim()
        .to_string();
    if info_doc.is_empty() {
        return Err(CorpusError::EmptyInfo(info_path));
    }

    let chapters_dir = root.join("chapters");
    if !chapters_dir.is_dir() {
        return Err(CorpusError::NoChapters(chapters_dir));
    }
    let mut by_index: BTreeMap<u32, PathBuf> = BTreeMap::new();
    for entry in fs::read_dir(&chapters_dir).map_err(io_err(&chapters_dir))? {
        let path = entry.map_err(io_err(&chapters_dir))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("md") {
            continue;
        }
        let index = chapter_index(&path).ok_or_else(|| CorpusError::BadChapterName(path.clone()))?;
        if let Some(first) = by_index.get(&index) {
            let (first, second) = if *first < path {
                (first.clone(), path)
            } else {
                (path, first.clone())
            };
            return Err(CorpusError::DuplicateIndex { index, first, second });
        }
        by_index.insert(index, path);
    }
    if by_index.is_empty() {
        return Err(CorpusError::NoChapters(chapters_dir));
    }
    let mut chapters = Vec::with_capacity(by_index.len());
    for (expected, (index, path)) in (1u32..).zip(&by_index) {
        if *index != expected {
            return Err(CorpusError::IndexGap {
                missing: expected,
                dir: chapters_dir,
            });
        }
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        chapters.push(parse_chapter(path, *index, &text)?);
    }

    let mut dialogue_lines = Vec::new();
    let dialogue_dir = root.join("dialogue");
    if dialogue_dir.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(&dialogue_dir)
            .map_err(io_err(&dialogue_dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("txt"))
            .collect();
        files.sort();
        for path in files {
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            dialogue_lines.extend(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from));
        }
    }

    Ok(CharacterCorpus {
        display_name: meta
            .display_name
            .filter(|n| !n.trim().is_empty())
            .unwrap_or_else(|| character_id.clone()),
        character_id,
        info_doc,
        chapters,
        dialogue_lines,
        language_tag: meta.language_tag.unwrap_or_else(|| "en".to_string()),
    })
}

fn slug(title: &str) -> String {
    let mut s: String = title
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect();
    while s.contains("__") {
        s = s.replace("__", "_");
    }
    let s: String = s.trim_matches('_').chars().take(40).collect();
    if s.is_empty() {
        "chapter".to_string()
    } else {
        s
    }
}

/// Writes `corpus` into `root` using the layout [`load_corpus`] reads.
pub fn save_corpus(corpus: &CharacterCorpus, root: &Path) -> Result<(), CorpusError> {
    let chapters_dir = root.join("chapters");
    fs::create_dir_all(&chapters_dir).map_err(io_err(&chapters_dir))?;
    let meta = Metadata {
        display_name: Some(corpus.display_name.clone()),
        language_tag: Some(corpus.language_tag.clone()),
    };
    let meta_path = root.join("character.json");
    let meta_json = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    fs::write(&meta_path, meta_json).map_err(io_err(&meta_path))?;
    let info_path = root.join("info.md");
    fs::write(&info_path, format!("{}\n", corpus.info_doc)).map_err(io_err(&info_path))?;
    for ch in &corpus.chapters {
        let path = chapters_dir.join(format!("{:03}_{}.md", ch.index, slug(&ch.title)));
        fs::write(&path, format!("# {}\n\n{}\n", ch.title, ch.body)).map_err(io_err(&path))?;
    }
    if !corpus.dialogue_lines.is_empty() {
        let dir = root.join("dialogue");
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let path = dir.join("lines.txt");
        let mut text = corpus.dialogue_lines.join("\n");
        text.push('\n');
        fs::write(&path, text).map_err(io_err(&path))?;
    }
    Ok(())
}

/// Token totals per corpus category. The refined-info count comes from the
/// snapshot's init block and the trained count from its section totals.
/// A small generated corpus for demos, tests and benchmarks. Every chapter
/// body carries a marker (`chapter-marker-NNN`) unique to that chapter.
pub fn synthetic_corpus(character_id: &str, chapters: u32, dialogue_lines: usize) -> CharacterCorpus {
    CharacterCorpus {
        character_id: character_id.to_string(),
        display_name: format!("Synthetic {character_id}"),
        info_doc: format!(
            "{character_id} is an apprentice mage from a small coastal village. \
             She is stubborn, curious and fond of loud spells, and keeps a notebook of every spell she learns."
        ),
        chapters: (1..=chapters)
            .map(|i| ChapterSummary {
                index: i,
                title: format!("Episode {i}"),
                body: format!(
                    "In this part of the story (chapter-marker-{i:03}) {character_id} travels to town number {i}, \
                     argues with a rival, helps a stranger and learns spell number {i}."
                ),
            })
            .collect(),
        dialogue_lines: (0..dialogue_lines)
            .map(|i| format!("Line {i}: {}", "watch this! ".repeat(i % 4 + 1).trim_end()))
            .collect(),
        language_tag: "en".to_string(),
    }
}

pub fn compute_stats(
    corpus: &CharacterCorpus,
    snapshot: Option<&PersonaSnapshot>,
    tokenizer: &dyn Tokenizer,
) -> CorpusStats {
    CorpusStats {
        chapter_count: corpus.chapters.len(),
        novel_tokens: corpus.chapters.iter().map(|c| tokenizer.count(&c.body)).sum(),
        info_tokens: tokenizer.count(&corpus.info_doc),
        refined_info_tokens: snapshot
            .and_then(|s| s.init_block.as_ref())
            .map_or(0, |b| b.token_count(tokenizer)),
        dialogue_tokens: corpus.dialogue_lines.iter().map(|l| tokenizer.count(l)).sum(),
        trained_tokens: snapshot.map_or(0, |s| section_token_totals(s, tokenizer).values().sum()),
    }
}
