mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use persona_core::corpus::{compute_stats, synthetic_corpus};
use persona_core::cpt::{
    extract_trait, extraction_request, generalization_request, generalize_trait, train, train_epoch, ExtractionSource,
    TraitStatus,
};
use persona_core::gateway::{Fallback, MockScript};
use persona_core::inference::{assemble, build_tone, respond, ChatSession, ToneProfile};
use persona_core::persona::section_token_totals;
use persona_core::{
    initialize, Error, ErrorClass, MockProvider, PersonaStore, Pipeline, TraitKey, TraitKind, WordPunctTokenizer,
};

use common::{build_store, digest_provider, pipeline, tree};

fn script_init(p: &Pipeline, corpus: &persona_core::CharacterCorpus, script: &mut MockScript) {
    for key in TraitKey::INIT {
        let req = extraction_request(p, corpus, key, &ExtractionSource::CharacterInfo(&corpus.info_doc));
        script.insert(&req, format!("initial {}", key.as_str())).unwrap();
    }
}

#[test]
fn initialization_returns_scripted_texts_with_five_calls() {
    let corpus = synthetic_corpus("megumin", 3, 0);
    let probe = pipeline(&digest_provider(), false);
    let mut script = MockScript::new();
    script_init(&probe, &corpus, &mut script);
    let provider = Arc::new(MockProvider::new(script, Fallback::Fail));
    let p = pipeline(&provider, true);
    let init = initialize(&p, &corpus).unwrap();
    for (key, text) in init.persona.iter() {
        assert_eq!(text, format!("initial {}", key.as_str()));
    }
    assert_eq!(provider.call_count(), 5);
    assert_eq!(init.snapshot.epoch, 0);
    assert!(init.snapshot.sections.values().all(|s| s.entries.is_empty()));
    assert!(init.persona.get(TraitKey::Emotions).is_none());
    assert!(init.refined_info_tokens > 0);
}

#[test]
fn initialization_errors() {
    let provider = digest_provider();
    let p = pipeline(&provider, false);
    let mut corpus = synthetic_corpus("megumin", 1, 0);
    corpus.info_doc = String::new();
    assert_eq!(initialize(&p, &corpus).unwrap_err().class(), ErrorClass::Validation);
    assert_eq!(provider.call_count(), 0);

    let corpus = synthetic_corpus("megumin", 1, 0);
    let failing = Arc::new(
        MockProvider::new(MockScript::new(), Fallback::Digest).fail_when(|r| r.system_prompt.contains("Motivations")),
    );
    let err = initialize(&pipeline(&failing, true), &corpus).unwrap_err();
    assert_eq!(err.class(), ErrorClass::Provider);

    let empty = Arc::new(MockProvider::new(MockScript::new(), Fallback::Empty));
    let err = initialize(&pipeline(&empty, false), &corpus).unwrap_err();
    assert!(err.to_string().contains("personality"), "{err}");
}

#[test]
fn initialization_warns_on_chapter_titles() {
    let mut corpus = synthetic_corpus("megumin", 2, 0);
    corpus.chapters[1].title = "The Final Duel".into();
    let p = pipeline(&digest_provider(), false);
    let mut script = MockScript::new();
    let req = extraction_request(
        &p,
        &corpus,
        TraitKey::Backstory,
        &ExtractionSource::CharacterInfo(&corpus.info_doc),
    );
    script.insert(&req, "She wins The Final Duel.").unwrap();
    let provider = Arc::new(MockProvider::new(script, Fallback::Digest));
    let init = initialize(&pipeline(&provider, false), &corpus).unwrap();
    assert_eq!(init.warnings.len(), 1);
    assert!(init.warnings[0].contains("The Final Duel"));
}

#[test]
fn extraction_examples() {
    let mut corpus = synthetic_corpus("hitori", 3, 0);
    let probe = pipeline(&digest_provider(), false);
    let ch3 = corpus.chapters[2].clone();
    let mut script = MockScript::new();
    let req = extraction_request(
        &probe,
        &corpus,
        TraitKey::Relationships,
        &ExtractionSource::Chapter(&ch3),
    );
    script.insert(&req, "Bonds with Ikuyo Kita deepen.").unwrap();
    let req = extraction_request(
        &probe,
        &corpus,
        TraitKey::PhysicalDescription,
        &ExtractionSource::Chapter(&ch3),
    );
    script.insert(&req, "NONE").unwrap();
    let provider = Arc::new(MockProvider::new(script, Fallback::Fail));
    let p = pipeline(&provider, false);
    assert_eq!(
        extract_trait(&p, &corpus, &ch3, TraitKey::Relationships).unwrap(),
        "Bonds with Ikuyo Kita deepen."
    );
    assert_eq!(
        extract_trait(&p, &corpus, &ch3, TraitKey::PhysicalDescription).unwrap(),
        ""
    );

    corpus.chapters[0].body = String::new();
    let err = extract_trait(&p, &corpus, &corpus.chapters[0], TraitKey::Emotions).unwrap_err();
    assert!(matches!(err, Error::Precondition(_)));
}

#[test]
fn generalization_examples() {
    let corpus = synthetic_corpus("frieren", 1, 0);
    let probe = pipeline(&digest_provider(), false);
    let mut script = MockScript::new();
    let req = generalization_request(
        &probe,
        &corpus,
        Some("indifferent to human emotions"),
        "shows empathy at funeral",
        TraitKey::Personality,
    );
    script
        .insert(&req, "growing empathy alongside devotion to magic")
        .unwrap();
    let provider = Arc::new(MockProvider::new(script, Fallback::EchoLastUser));
    let p = pipeline(&provider, false);
    assert_eq!(
        generalize_trait(
            &p,
            &corpus,
            Some("indifferent to human emotions"),
            "shows empathy at funeral",
            TraitKey::Personality
        )
        .unwrap(),
        "growing empathy alongside devotion to magic"
    );
    assert_eq!(
        generalize_trait(&p, &corpus, None, "X", TraitKey::Motivations).unwrap(),
        "X"
    );
    assert!(matches!(
        generalize_trait(&p, &corpus, None, "X", TraitKey::Backstory),
        Err(Error::Precondition(_))
    ));

    let empty = Arc::new(MockProvider::new(MockScript::new(), Fallback::Empty));
    let err = generalize_trait(&pipeline(&empty, false), &corpus, Some("p"), "X", TraitKey::Personality).unwrap_err();
    assert!(matches!(err, Error::Validation(_)));
}

#[test]
fn epoch_applies_replace_and_append() {
    let corpus = synthetic_corpus("megumin", 2, 0);
    let digest = digest_provider();
    let init = initialize(&pipeline(&digest, false), &corpus).unwrap().snapshot;
    let probe = pipeline(&digest, false);
    let ch1 = &corpus.chapters[0];
    let texts: BTreeMap<TraitKey, &str> = [
        (TraitKey::Personality, "braver than before"),
        (TraitKey::PhysicalDescription, "NONE"),
        (TraitKey::Motivations, "wants to master explosion magic"),
        (TraitKey::Backstory, "left the village"),
        (TraitKey::Emotions, "elated"),
        (TraitKey::Relationships, "NONE"),
        (TraitKey::GrowthAndChange, ""),
        (TraitKey::Conflict, "fights a toad"),
    ]
    .into_iter()
    .collect();
    let mut script = MockScript::new();
    for (key, text) in &texts {
        let req = extraction_request(&probe, &corpus, *key, &ExtractionSource::Chapter(ch1));
        script.insert(&req, *text).unwrap();
    }
    let provider = Arc::new(MockProvider::new(script, Fallback::EchoLastUser));
    let p = pipeline(&provider, true);
    let out = train_epoch(&p, &corpus, &init, ch1).unwrap();
    let s = &out.snapshot;
    assert_eq!(s.epoch, 1);
    assert_eq!(provider.call_count(), 8 + 2);
    assert_eq!(
        s.section(TraitKey::Personality).entries[0].content,
        "braver than before"
    );
    assert_eq!(
        s.section(TraitKey::Motivations).entries[0].content,
        "wants to master explosion magic"
    );
    assert!(s.section(TraitKey::PhysicalDescription).entries.is_empty());
    for key in [TraitKey::Backstory, TraitKey::Emotions, TraitKey::Conflict] {
        assert_eq!(s.section(key).entries.len(), 1);
        assert_eq!(s.section(key).entries[0].epoch, 1);
    }
    assert!(s.section(TraitKey::Relationships).entries.is_empty());
    let statuses: BTreeMap<_, _> = out.records.iter().map(|r| (r.trait_key, r.status)).collect();
    assert_eq!(statuses[&TraitKey::Personality], TraitStatus::Generalized);
    assert_eq!(statuses[&TraitKey::Backstory], TraitStatus::Extracted);
    assert_eq!(statuses[&TraitKey::GrowthAndChange], TraitStatus::Empty);

    // Generalization saw the initial profile as prior text.
    let gen = provider
        .calls()
        .into_iter()
        .find(|c| c.attachment.is_none() && c.messages[0].content == "braver than before")
        .unwrap();
    let prior = init.init_block.as_ref().unwrap().get(TraitKey::Personality).unwrap();
    assert!(gen.system_prompt.contains(prior));
}

#[test]
fn all_empty_epoch_changes_only_metadata() {
    let corpus = synthetic_corpus("megumin", 2, 0);
    let init = initialize(&pipeline(&digest_provider(), false), &corpus)
        .unwrap()
        .snapshot;
    let provider = Arc::new(MockProvider::new(
        MockScript::new(),
        Fallback::Custom(Arc::new(|_| "NONE".to_string())),
    ));
    let p = pipeline(&provider, true);
    let out = train_epoch(&p, &corpus, &init, &corpus.chapters[0]).unwrap();
    assert_eq!(provider.call_count(), 8);
    let mut s = out.snapshot.clone();
    s.epoch = 0;
    s.source_chapter = None;
    s.created_at = init.created_at;
    s.provider_fingerprint = init.provider_fingerprint.clone();
    assert_eq!(s, init);
}

#[test]
fn epoch_order_is_enforced() {
    let corpus = synthetic_corpus("megumin", 3, 0);
    let p = pipeline(&digest_provider(), false);
    let init = initialize(&p, &corpus).unwrap().snapshot;
    let err = train_epoch(&p, &corpus, &init, &corpus.chapters[2]).unwrap_err();
    assert!(matches!(err.error, Error::Precondition(_)));
}

#[test]
fn failed_epoch_is_atomic_and_resumable() {
    let corpus = synthetic_corpus("megumin", 10, 0);
    let tmp = tempfile::tempdir().unwrap();
    let store = PersonaStore::open(tmp.path()).unwrap();
    let failing = Arc::new(MockProvider::new(MockScript::new(), Fallback::Digest).fail_when(|r| {
        r.attachment
            .as_deref()
            .is_some_and(|a| a.contains("chapter-marker-007"))
    }));
    let p = pipeline(&failing, true);
    let lineage = store.lineage("megumin", &p.prompts).unwrap();
    lineage
        .put_snapshot(&initialize(&p, &corpus).unwrap().snapshot)
        .unwrap();
    let failure = train(&p, &corpus, &lineage, None, &mut |_| {}).unwrap_err();
    assert_eq!(failure.failed_epoch, Some(7));
    assert_eq!(lineage.head().unwrap(), Some(6));
    let before: Vec<_> = (0..=6).map(|e| lineage.snapshot_bytes(e).unwrap()).collect();
    assert!(lineage
        .read_runlog()
        .unwrap()
        .iter()
        .any(|r| r.epoch == 7 && r.status == TraitStatus::Failed));

    // Resuming from an already persisted epoch is refused.
    let healthy = pipeline(&digest_provider(), true);
    let err = train(&healthy, &corpus, &lineage, Some(3), &mut |_| {}).unwrap_err();
    assert!(matches!(err.error, Error::Precondition(_)));

    let mut seen = Vec::new();
    let run = train(&healthy, &corpus, &lineage, Some(7), &mut |s| seen.push(s.epoch)).unwrap();
    assert_eq!((run.start_epoch, run.end_epoch), (7, 10));
    assert_eq!(seen, vec![7, 8, 9, 10]);
    let after: Vec<_> = (0..=6).map(|e| lineage.snapshot_bytes(e).unwrap()).collect();
    assert_eq!(before, after);
    let err = train(&healthy, &corpus, &lineage, None, &mut |_| {}).unwrap_err();
    assert!(err.to_string().contains("already trained"), "{err}");
}

#[test]
fn sixteen_chapters_give_seventeen_snapshots() {
    let corpus = synthetic_corpus("megumin", 16, 5);
    let tmp = tempfile::tempdir().unwrap();
    let lineage = build_store(tmp.path(), &corpus, &pipeline(&digest_provider(), true));
    let epochs: Vec<u32> = lineage.list_epochs().unwrap().iter().map(|d| d.epoch).collect();
    assert_eq!(epochs, (0..=16).collect::<Vec<_>>());
    let last = lineage.get_snapshot(16).unwrap();
    assert_eq!(last.source_chapter.unwrap().title, "Episode 16");
    assert_eq!(
        lineage.get_snapshot(99).unwrap_err().to_string(),
        "no snapshot for `megumin` at epoch 99; available epochs: 0..=16"
    );
}

#[test]
fn replay_is_byte_identical() {
    let corpus = synthetic_corpus("anya", 3, 4);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    build_store(a.path(), &corpus, &pipeline(&digest_provider(), true));
    build_store(b.path(), &corpus, &pipeline(&digest_provider(), false));
    assert_eq!(tree(a.path()), tree(b.path()));
}

#[test]
fn token_totals_match_recount() {
    let corpus = synthetic_corpus("anya", 3, 4);
    let tmp = tempfile::tempdir().unwrap();
    let lineage = build_store(tmp.path(), &corpus, &pipeline(&digest_provider(), true));
    let bytes = lineage.snapshot_bytes(3).unwrap();
    let raw: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
    let snapshot = lineage.get_snapshot(3).unwrap();
    let totals = section_token_totals(&snapshot, &WordPunctTokenizer);

    // Independent recount: whitespace-separated pieces split at punctuation.
    fn recount(text: &str) -> usize {
        let mut n = 0;
        let mut in_word = false;
        for c in text.chars() {
            if c.is_alphanumeric() {
                if !in_word {
                    n += 1;
                }
                in_word = true;
            } else {
                in_word = false;
                if !c.is_whitespace() {
                    n += 1;
                }
            }
        }
        n
    }
    for key in TraitKey::ALL {
        let k = key.as_str();
        let mut expected: usize = raw["sections"][k]["entries"]
            .as_array()
            .unwrap()
            .iter()
            .map(|e| recount(e["content"].as_str().unwrap()))
            .sum();
        if let Some(t) = raw["init_block"][k].as_str() {
            expected += recount(t);
        }
        assert_eq!(totals[&key], expected, "{k}");
    }
    let stats = compute_stats(&corpus, Some(&snapshot), &WordPunctTokenizer);
    assert_eq!(stats.trained_tokens, totals.values().sum::<usize>());
    assert_eq!(stats.chapter_count, 3);
}

#[test]
fn chat_at_different_epochs() {
    let corpus = synthetic_corpus("megumin", 16, 6);
    let tmp = tempfile::tempdir().unwrap();
    let digest = digest_provider();
    let lineage = build_store(tmp.path(), &corpus, &pipeline(&digest, true));
    let tone = build_tone(&corpus, 20);
    let question = "What do you think about the Devil King?";

    let probe = pipeline(&digest, false);
    let s7 = ChatSession::new(
        "s7",
        &corpus,
        assemble(&lineage.get_snapshot(7).unwrap(), &tone).unwrap(),
        probe.clock.now(),
    );
    let s16 = ChatSession::new(
        "s16",
        &corpus,
        assemble(&lineage.get_snapshot(16).unwrap(), &tone).unwrap(),
        probe.clock.now(),
    );
    let mut script = MockScript::new();
    script
        .insert(&s7.request(&probe, question).unwrap(), "A rival I have yet to blow up!")
        .unwrap();
    script
        .insert(
            &s16.request(&probe, question).unwrap(),
            "We settled that, with one glorious explosion.",
        )
        .unwrap();
    let provider = Arc::new(MockProvider::new(script, Fallback::Fail));
    let p = pipeline(&provider, false);

    let (mut s7, mut s16) = (s7, s16);
    assert_eq!(
        respond(&mut s7, question, &p).unwrap(),
        "A rival I have yet to blow up!"
    );
    assert_eq!(
        respond(&mut s16, question, &p).unwrap(),
        "We settled that, with one glorious explosion."
    );
    let calls = provider.calls();
    assert_ne!(calls[0].system_prompt, calls[1].system_prompt);
    assert!(calls[0].system_prompt.contains("request for information"));
    assert_eq!(s7.history.len(), 2);

    assert!(matches!(respond(&mut s7, "  ", &p), Err(Error::Precondition(_))));
    // Unscripted follow-up fails; history stays as it was.
    assert!(respond(&mut s7, "And Aqua?", &p).is_err());
    assert_eq!(s7.history.len(), 2);
}

#[test]
fn context_budget_truncates_history_then_overflows() {
    let corpus = synthetic_corpus("megumin", 1, 0);
    let digest = digest_provider();
    let mut p = pipeline(&digest, false);
    let init = initialize(&p, &corpus).unwrap().snapshot;
    let persona = assemble(&init, &ToneProfile::empty("megumin")).unwrap();
    let mut session = ChatSession::new("s", &corpus, persona, p.clock.now());
    let system_tokens = p.tokenizer.count(&session.system_prompt(&p));
    p.settings.inference.max_tokens = 10;
    p.settings.context_budget_tokens = system_tokens + 10 + 40;
    for i in 0..10 {
        respond(&mut session, &format!("message number {i} with a few words"), &p).unwrap();
    }
    let last = digest.calls().pop().unwrap();
    assert!(last.messages.len() < session.history.len());
    assert_eq!(last.messages[0].role, persona_core::Role::User);
    assert_eq!(session.history.len(), 20);

    p.settings.context_budget_tokens = system_tokens;
    match respond(&mut session, "hello", &p) {
        Err(Error::ContextOverflow { budget_tokens, .. }) => assert_eq!(budget_tokens, system_tokens),
        other => panic!("{other:?}"),
    }
    assert_eq!(session.history.len(), 20);
}

#[test]
fn epoch_isolation_in_system_prompts() {
    let corpus = synthetic_corpus("frieren", 5, 3);
    let tmp = tempfile::tempdir().unwrap();
    let lineage = build_store(tmp.path(), &corpus, &pipeline(&digest_provider(), true));
    let final_snapshot = lineage.get_snapshot(5).unwrap();
    let provider = digest_provider();
    let p = pipeline(&provider, false);
    let tone = build_tone(&corpus, 20);
    for epoch in 0..=5 {
        let persona = assemble(&lineage.get_snapshot(epoch).unwrap(), &tone).unwrap();
        let mut session = ChatSession::new(format!("s{epoch}"), &corpus, persona, p.clock.now());
        respond(&mut session, "Tell me about yourself.", &p).unwrap();
        let prompt = provider.calls().pop().unwrap().system_prompt;
        for key in TraitKey::ALL.into_iter().filter(|k| k.kind() == TraitKind::TypeB) {
            for e in &final_snapshot.section(key).entries {
                assert_eq!(
                    prompt.contains(&e.content),
                    e.epoch <= epoch,
                    "epoch {epoch} {key} {}",
                    e.epoch
                );
            }
        }
        let init_pos = prompt.find("## Initial profile").unwrap();
        if let Some(train_pos) = prompt.find("## Story so far") {
            assert!(init_pos < train_pos);
            assert!(train_pos < prompt.find("## Tone").unwrap());
        }
    }
}
