use std::io::{BufRead, Write};
use std::path::Path;

use persona_core::evaluation::bfi::FacetScoreTable;
use persona_core::evaluation::{
    aggregate_ratings, check_footers, compare, cross_average, parse_rating_csv, render_table, FooterCheck, Metric,
    ReportedFooters,
};
use persona_core::inference::persona_markdown;
use persona_core::{compute_stats, load_corpus, respond, AppConfig, Error, ErrorClass, ProviderSpec, Workspace};
use serde::Serialize;
use serde_json::json;

use crate::{Cli, CliError, Command, CorpusCommand, EvalCommand, Global};

type CliResult<T = ()> = Result<T, CliError>;

fn config(global: &Global) -> CliResult<AppConfig> {
    let mut config = match &global.config {
        Some(path) => AppConfig::load(path)?,
        None => AppConfig::default(),
    };
    if let Some(store) = &global.store {
        config.store_root = store.clone();
    }
    if let Some(spec) = &global.provider {
        config.provider = ProviderSpec::parse_override(spec)?;
    }
    config.fixed_clock |= global.fixed_clock;
    Ok(config)
}

fn workspace(global: &Global) -> CliResult<Workspace> {
    Ok(Workspace::open(config(global)?)?)
}

fn print_json<T: Serialize>(value: &T) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::internal(e.to_string()))?;
    out!("{text}");
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let bytes = std::fs::read(path).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult {
    std::fs::write(path, bytes).map_err(|e| CliError::internal(format!("writing {}: {e}", path.display())))
}

pub fn run(cli: Cli) -> CliResult {
    let g = &cli.global;
    match cli.command {
        Command::Corpus(CorpusCommand::Validate { dir }) => corpus_validate(g, &dir),
        Command::Stats { character } => {
            let ws = workspace(g)?;
            let id = ws.resolve(&character)?;
            let stats = ws.stats(&id)?;
            if g.json {
                return print_json(&json!({"character_id": id, "stats": stats}));
            }
            out!("character         {id}");
            out!("chapters          {}", stats.chapter_count);
            out!("novel tokens      {}", stats.novel_tokens);
            out!("info tokens       {}", stats.info_tokens);
            out!("refined info      {}", stats.refined_info_tokens);
            out!("dialogue tokens   {}", stats.dialogue_tokens);
            out!("trained tokens    {}", stats.trained_tokens);
            Ok(())
        }
        Command::Init { character } => {
            let ws = workspace(g)?;
            let id = ws.resolve(&character)?;
            let init = ws.initialize(&id)?;
            for w in &init.warnings {
                eprintln!("warning: {w}");
            }
            if g.json {
                return print_json(&json!({
                    "character_id": id,
                    "epoch": 0,
                    "refined_info_tokens": init.refined_info_tokens,
                    "warnings": init.warnings,
                }));
            }
            out!("initialized {id} at epoch 0 ({} tokens)", init.refined_info_tokens);
            Ok(())
        }
        Command::Train { character, resume_from } => train(g, &character, resume_from),
        Command::Epochs { character } => {
            let ws = workspace(g)?;
            let id = ws.resolve(&character)?;
            let epochs = ws.epochs(&id)?;
            if g.json {
                return print_json(&epochs);
            }
            for e in &epochs {
                out!(
                    "{:>4}  {}  {}",
                    e.epoch,
                    e.created_at.to_rfc3339(),
                    e.chapter_title.as_deref().unwrap_or("(initialization)")
                );
            }
            Ok(())
        }
        Command::Persona { character, epoch, out } => {
            let ws = workspace(g)?;
            let id = ws.resolve(&character)?;
            let view = ws.persona(&id, epoch)?;
            let display = ws.store.character(&id).map_err(Error::from)?.display_name;
            let markdown = persona_markdown(&view.persona, &display);
            if let Some(path) = &out {
                write_file(path, markdown.as_bytes())?;
            }
            if g.json {
                return print_json(&view);
            }
            if out.is_none() {
                out!("{}", markdown.trim_end_matches('\n'));
            }
            Ok(())
        }
        Command::Chat { character, epoch } => chat(g, &character, epoch),
        Command::Eval(cmd) => eval(g, cmd),
        Command::Serve { bind } => {
            let mut config = config(g)?;
            if let Some(bind) = bind {
                config.server.bind = bind;
            }
            let ws = Workspace::open(config)?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::internal(e.to_string()))?;
            rt.block_on(persona_server::serve(ws))
                .map_err(|e| CliError::internal(format!("server: {e}")))
        }
    }
}

fn corpus_validate(g: &Global, dir: &Path) -> CliResult {
    let corpus = load_corpus(dir).map_err(Error::from)?;
    let stats = compute_stats(&corpus, None, &persona_core::WordPunctTokenizer);
    if g.json {
        return print_json(&json!({
            "character_id": corpus.character_id,
            "display_name": corpus.display_name,
            "language_tag": corpus.language_tag,
            "dialogue_lines": corpus.dialogue_lines.len(),
            "stats": stats,
        }));
    }
    out!(
        "{} ({}): {} chapters, {} dialogue lines, {} novel tokens, {} info tokens",
        corpus.character_id,
        corpus.display_name,
        stats.chapter_count,
        corpus.dialogue_lines.len(),
        stats.novel_tokens,
        stats.info_tokens
    );
    Ok(())
}

fn train(g: &Global, character: &str, resume_from: Option<u32>) -> CliResult {
    let ws = workspace(g)?;
    let id = ws.resolve(character)?;
    let quiet = g.json;
    let result = ws.train(&id, resume_from, &mut |s| {
        if !quiet {
            eprintln!("stored epoch {}", s.epoch);
        }
    });
    match result {
        Ok(run) => {
            if g.json {
                return print_json(&run);
            }
            if run.end_epoch < run.start_epoch {
                out!("{id}: nothing to train");
            } else {
                out!(
                    "{id}: trained epochs {}..={} with {}",
                    run.start_epoch,
                    run.end_epoch,
                    run.model
                );
            }
            Ok(())
        }
        Err(failure) => {
            let mut message = failure.to_string();
            if let Some(e) = failure.failed_epoch {
                message.push_str(&format!(
                    "; epochs before {e} are stored, resume with --resume-from {e}"
                ));
            }
            Err(CliError {
                class: failure.error.class(),
                message,
            })
        }
    }
}

fn chat(g: &Global, character: &str, epoch: u32) -> CliResult {
    let ws = workspace(g)?;
    let id = ws.resolve(character)?;
    let session_id = uuid::Uuid::new_v4().to_string();
    let mut session = ws.open_session(&session_id, &id, epoch)?;
    if !g.json {
        eprintln!(
            "chatting with {} at epoch {epoch}; /quit to leave",
            session.display_name
        );
    }
    let stdin = std::io::stdin();
    let mut stdout = std::io::stdout();
    for line in stdin.lock().lines() {
        let line = line.map_err(|e| CliError::internal(e.to_string()))?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if text == "/quit" {
            break;
        }
        match respond(&mut session, text, &ws.pipeline) {
            Ok(reply) => {
                if g.json {
                    out!(
                        "{}",
                        json!({"user": text, "reply": reply, "turns": session.history.len()})
                    );
                } else {
                    out!("{}: {reply}", session.display_name);
                }
            }
            // A failed turn leaves the history untouched; keep the session open.
            Err(e) if e.class() != ErrorClass::Internal => eprintln!("error: {e}"),
            Err(e) => return Err(e.into()),
        }
        stdout.flush().map_err(|e| CliError::internal(e.to_string()))?;
    }
    if ws.config.server.persist_transcripts && !session.history.is_empty() {
        let path = ws
            .lineage(&id)?
            .put_transcript(&session.id, &session.transcript_jsonl())
            .map_err(Error::from)?;
        eprintln!("transcript saved to {}", path.display());
    }
    Ok(())
}

fn eval(g: &Global, cmd: EvalCommand) -> CliResult {
    match cmd {
        EvalCommand::Bfi {
            character,
            epoch,
            runs,
            out,
        } => {
            let ws = workspace(g)?;
            let id = ws.resolve(&character)?;
            let table = ws.eval_bfi(&id, epoch, runs)?;
            if let Some(path) = &out {
                write_file(path, &persona_core::store::to_json_bytes(&table))?;
            }
            if g.json {
                return print_json(&table);
            }
            for (domain, facets) in &table.scores {
                out!("{}", domain.name());
                for (facet, score) in facets {
                    out!("  {facet:<28} {score:>3}");
                }
            }
            Ok(())
        }
        EvalCommand::Compare {
            human,
            models,
            reported,
            title,
        } => {
            let human: FacetScoreTable = read_json(&human)?;
            let models = models
                .iter()
                .map(|(name, path)| Ok((name.clone(), read_json::<FacetScoreTable>(path)?)))
                .collect::<CliResult<Vec<_>>>()?;
            let report = compare(&human, &models).map_err(Error::from)?;
            let check: Option<FooterCheck> = match &reported {
                Some(path) => {
                    let r: ReportedFooters = read_json(path)?;
                    Some(check_footers(&report, &r).map_err(Error::from)?)
                }
                None => None,
            };
            let table = render_table(&report, title.as_deref().unwrap_or(&human.respondent));
            if g.json {
                print_json(&json!({"report": report, "table": table, "footer_check": check}))?;
            } else {
                out!("{}", table.trim_end_matches('\n'));
                if let Some(c) = &check {
                    for d in &c.divergences {
                        let tag = if c.unannotated.contains(d) {
                            "UNEXPLAINED"
                        } else {
                            "annotated"
                        };
                        out!(
                            "divergence ({tag}): {} {:?} {} reported {} recomputed {}",
                            d.domain.code(),
                            d.metric,
                            d.model,
                            d.reported,
                            d.recomputed
                        );
                    }
                    for a in &c.stale_annotations {
                        out!(
                            "stale annotation: {} {:?} {} reported {}",
                            a.domain.code(),
                            a.metric,
                            a.model,
                            a.reported
                        );
                    }
                }
            }
            match check {
                Some(c) if !c.is_clean() => Err(CliError::validation(format!(
                    "{} unexplained footer divergence(s), {} stale annotation(s)",
                    c.unannotated.len(),
                    c.stale_annotations.len()
                ))),
                _ => Ok(()),
            }
        }
        EvalCommand::Stories { character, epoch, n } => {
            let ws = workspace(g)?;
            let id = ws.resolve(&character)?;
            let run = ws.eval_stories(&id, epoch, n)?;
            if g.json {
                print_json(&run)?;
            } else {
                for s in &run.stories {
                    out!("{}  {} words", s.story_id, s.word_count);
                }
                for f in &run.failures {
                    eprintln!("story {} failed: {}", f.index, f.error);
                }
            }
            if run.stories.is_empty() {
                return Err(CliError {
                    class: ErrorClass::Provider,
                    message: "every story request failed".into(),
                });
            }
            Ok(())
        }
        EvalCommand::Aggregate { csv, grouping } => {
            let file =
                std::fs::File::open(&csv).map_err(|e| CliError::validation(format!("{}: {e}", csv.display())))?;
            let sheets = parse_rating_csv(file).map_err(Error::from)?;
            let table = aggregate_ratings(&sheets, grouping.into()).map_err(Error::from)?;
            let average = cross_average(&table.rows);
            if g.json {
                return print_json(&json!({"table": table, "average": average}));
            }
            let header: Vec<&str> = Metric::ALL.iter().map(|m| m.column()).collect();
            out!("{:<16} {:>5}  {}", "group", "n", header.join("  "));
            for row in &table.rows {
                let cells: Vec<String> = Metric::ALL
                    .iter()
                    .zip(&header)
                    .map(|(m, h)| format!("{:>w$.2}", row.means[m], w = h.len()))
                    .collect();
                out!("{:<16} {:>5}  {}", row.group, row.sheets, cells.join("  "));
            }
            let cells: Vec<String> = Metric::ALL
                .iter()
                .zip(&header)
                .map(|(m, h)| format!("{:>w$.2}", average[m], w = h.len()))
                .collect();
            out!("{:<16} {:>5}  {}", "avg", "", cells.join("  "));
            Ok(())
        }
    }
}
