mod common;

use std::io;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use persona_core::{initialize, synthetic_corpus, train, CharacterCorpus, PersonaStore, Pipeline};

/// Runs init plus full training against `store`, stopping at the first error.
fn run(store: &PersonaStore, corpus: &CharacterCorpus, p: &Pipeline) -> bool {
    let lineage = match store.lineage(&corpus.character_id, &p.prompts) {
        Ok(l) => l,
        Err(_) => return false,
    };
    let resume = match lineage.head() {
        Ok(Some(h)) => Some(h + 1),
        Ok(None) => {
            let init = initialize(p, corpus).unwrap();
            if lineage.put_snapshot(&init.snapshot).is_err() {
                return false;
            }
            None
        }
        Err(_) => return false,
    };
    if resume.is_some_and(|r| r as usize > corpus.chapters.len()) {
        return true;
    }
    train(p, corpus, &lineage, resume, &mut |_| {}).is_ok()
}

fn snapshots(root: &Path) -> Vec<(String, Vec<u8>)> {
    common::tree(root)
        .into_iter()
        .filter(|(path, _)| path.contains("snapshots") && path.ends_with(".json"))
        .collect()
}

#[test]
fn crash_at_every_write_step_recovers() {
    let corpus = synthetic_corpus("faulty", 4, 3);
    let p = common::pipeline(&common::digest_provider(), false);

    let reference = tempfile::tempdir().unwrap();
    let counter = Arc::new(AtomicUsize::new(0));
    let c = counter.clone();
    let counting = PersonaStore::open(reference.path())
        .unwrap()
        .with_fault_hook(Arc::new(move |_| {
            c.fetch_add(1, Ordering::SeqCst);
            Ok(())
        }));
    assert!(run(&counting, &corpus, &p));
    let total = counter.load(Ordering::SeqCst);
    let expected = snapshots(reference.path());
    assert_eq!(expected.len(), 5);
    assert!(total >= 5 * 4, "only {total} write steps observed");

    for k in 0..total {
        let tmp = tempfile::tempdir().unwrap();
        let seen = Arc::new(AtomicUsize::new(0));
        let s = seen.clone();
        let faulty = PersonaStore::open(tmp.path())
            .unwrap()
            .with_fault_hook(Arc::new(move |step| {
                if s.fetch_add(1, Ordering::SeqCst) == k {
                    Err(io::Error::other(format!("injected crash at {step:?}")))
                } else {
                    Ok(())
                }
            }));
        let _ = run(&faulty, &corpus, &p);

        // Whatever survived must be a readable prefix of the reference chain.
        let store = PersonaStore::open(tmp.path()).unwrap();
        let lineage = store.lineage(&corpus.character_id, &p.prompts).unwrap();
        let head = lineage.head().unwrap();
        let survived = snapshots(tmp.path());
        assert_eq!(survived.len(), head.map_or(0, |h| h as usize + 1), "step {k}");
        assert_eq!(&survived[..], &expected[..survived.len()], "step {k}");
        for e in 0..=head.unwrap_or(0) {
            if head.is_some() {
                lineage.get_snapshot(e).unwrap();
            }
        }
        lineage.read_runlog().unwrap();
        assert!(!lineage.is_locked(), "step {k} left the lineage locked");

        // Resuming completes the chain with identical bytes.
        assert!(run(&store, &corpus, &p), "resume after step {k}");
        assert_eq!(snapshots(tmp.path()), expected, "step {k}");
    }
}
