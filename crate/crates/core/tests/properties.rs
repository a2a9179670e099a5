mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use proptest::prelude::*;

use persona_core::cpt::{extraction_request, train_epoch, ExtractionSource};
use persona_core::evaluation::bfi::{single_run_grid, AnswerSheet, Domain, FacetScoreTable, QuestionBank};
use persona_core::evaluation::{aggregate_ratings, compare, score_facets, Grouping, Metric, RatingSheet};
use persona_core::gateway::{Fallback, MockScript};
use persona_core::inference::build_tone;
use persona_core::persona::{empty_snapshot, InitPersona, PersonaSnapshot, TraitEntry};
use persona_core::store::to_json_bytes;
use persona_core::{
    initialize, load_corpus, save_corpus, synthetic_corpus, ChapterSummary, CharacterCorpus, Clock, CompletionRequest,
    FixedClock, MockProvider, PersonaStore, PromptSet, TraitKey, TraitKind, WordPunctTokenizer,
};

fn text() -> impl Strategy<Value = String> {
    "[A-Za-z][A-Za-z0-9 ,.!?'\"é漢\n-]{0,40}".prop_map(|s| s.trim().to_string())
}

fn arb_snapshot() -> impl Strategy<Value = PersonaSnapshot> {
    (
        "[a-z][a-z0-9_-]{0,15}",
        0u32..8,
        proptest::collection::vec(text(), 5),
        proptest::collection::vec(proptest::collection::vec((any::<bool>(), text()), 8), 8),
    )
        .prop_map(|(id, epoch, init, sections)| {
            let mut s = empty_snapshot(&id, FixedClock::epoch().now()).unwrap();
            s.epoch = epoch;
            s.init_block = Some(InitPersona::from_map(TraitKey::INIT.into_iter().zip(init).collect()).unwrap());
            if epoch == 0 {
                return s;
            }
            for (key, picks) in TraitKey::ALL.into_iter().zip(sections) {
                let entries: Vec<TraitEntry> = (1..=epoch)
                    .zip(picks)
                    .filter(|(_, (keep, _))| *keep)
                    .map(|(e, (_, t))| TraitEntry::new(e, t, format!("chapter-{e:03}"), &WordPunctTokenizer).unwrap())
                    .collect();
                let section = s.sections.get_mut(&key).unwrap();
                section.entries = match key.kind() {
                    TraitKind::TypeA => entries.into_iter().last().into_iter().collect(),
                    TraitKind::TypeB => entries,
                };
            }
            s
        })
}

/// The same snapshot truncated to an earlier epoch.
fn truncate(s: &PersonaSnapshot, epoch: u32) -> PersonaSnapshot {
    let mut t = s.clone();
    t.epoch = epoch;
    for section in t.sections.values_mut() {
        section.entries.retain(|e| e.epoch <= epoch);
    }
    t
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn snapshot_round_trip(s in arb_snapshot()) {
        let tmp = tempfile::tempdir().unwrap();
        let lineage = PersonaStore::open(tmp.path()).unwrap().lineage(&s.character_id, &PromptSet::default()).unwrap();
        for e in 0..s.epoch {
            lineage.put_snapshot(&truncate(&s, e)).unwrap();
        }
        lineage.put_snapshot(&s).unwrap();
        prop_assert_eq!(lineage.get_snapshot(s.epoch).unwrap(), s.clone());
        prop_assert_eq!(lineage.snapshot_bytes(s.epoch).unwrap(), to_json_bytes(&s));
        let epochs: Vec<u32> = lineage.list_epochs().unwrap().iter().map(|d| d.epoch).collect();
        prop_assert_eq!(epochs, (0..=s.epoch).collect::<Vec<_>>());
    }
}

fn line() -> impl Strategy<Value = String> {
    "[A-Za-z][A-Za-z0-9 ,.!?é]{0,30}".prop_map(|s| s.trim().to_string())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn corpus_round_trip(
        id in "[a-z][a-z0-9_]{0,10}",
        name in line(),
        info in line(),
        chapters in proptest::collection::vec((line(), line()), 1..6),
        dialogue in proptest::collection::vec(line(), 0..6),
        lang in "[a-z]{2}",
    ) {
        let corpus = CharacterCorpus {
            character_id: id.clone(),
            display_name: name,
            info_doc: info,
            chapters: chapters
                .into_iter()
                .enumerate()
                .map(|(i, (title, body))| ChapterSummary { index: i as u32 + 1, title, body })
                .collect(),
            dialogue_lines: dialogue,
            language_tag: lang,
        };
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join(&id);
        save_corpus(&corpus, &root).unwrap();
        prop_assert_eq!(load_corpus(&root).unwrap(), corpus);
    }

    #[test]
    fn tone_is_a_verbatim_subset(lines in proptest::collection::vec(line(), 0..60), k in 0usize..30) {
        let mut corpus = synthetic_corpus("c", 1, 0);
        corpus.dialogue_lines = lines.clone();
        let tone = build_tone(&corpus, k);
        prop_assert_eq!(tone.exemplars.len(), k.min(lines.len()));
        for e in &tone.exemplars {
            prop_assert!(lines.contains(e));
        }
        let lens: Vec<usize> = tone.exemplars.iter().map(|l| l.chars().count()).collect();
        prop_assert!(lens.windows(2).all(|w| w[0] >= w[1]));
    }
}

fn mix(fingerprint: &str, seed: u64) -> u64 {
    let mut x = u64::from_str_radix(&fingerprint[..16], 16).unwrap() ^ seed;
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Chapter extractions are empty about half the time; everything else always answers.
fn random_reply(request: &CompletionRequest, seed: u64) -> String {
    let h = mix(&request.fingerprint(), seed);
    let chapter = request
        .attachment
        .as_deref()
        .is_some_and(|a| a.contains("chapter-marker-"));
    if chapter && h.is_multiple_of(2) {
        "NONE".to_string()
    } else {
        format!("text {h:x}")
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn training_preserves_trait_semantics(seed in any::<u64>(), chapters in 2u32..6, parallel in any::<bool>()) {
        let corpus = synthetic_corpus("prop", chapters, 0);
        let provider = Arc::new(MockProvider::new(
            MockScript::new(),
            Fallback::Custom(Arc::new(move |r: &CompletionRequest| random_reply(r, seed))),
        ));
        let p = common::pipeline(&provider, parallel);
        let mut prev = initialize(&p, &corpus).unwrap().snapshot;
        for chapter in &corpus.chapters {
            provider.clear_calls();
            let next = train_epoch(&p, &corpus, &prev, chapter).unwrap().snapshot;
            let non_empty_a = TraitKey::ALL
                .into_iter()
                .filter(|k| k.kind() == TraitKind::TypeA)
                .filter(|k| {
                    let req = extraction_request(&p, &corpus, *k, &ExtractionSource::Chapter(chapter));
                    random_reply(&req, seed) != "NONE"
                })
                .count();
            let calls = provider.calls();
            prop_assert_eq!(calls.iter().filter(|c| c.attachment.is_some()).count(), 8);
            prop_assert_eq!(calls.len(), 8 + non_empty_a);
            for key in TraitKey::ALL {
                let (before, after) = (&prev.section(key).entries, &next.section(key).entries);
                match key.kind() {
                    TraitKind::TypeB => {
                        prop_assert!(after.len() - before.len() <= 1);
                        prop_assert_eq!(&after[..before.len()], &before[..]);
                        if after.len() > before.len() {
                            prop_assert_eq!(after.last().unwrap().epoch, chapter.index);
                        }
                    }
                    TraitKind::TypeA => {
                        prop_assert!(after.len() <= 1);
                        if after != before {
                            prop_assert_eq!(after[0].epoch, chapter.index);
                        }
                    }
                }
            }
            prev = next;
        }
    }
}

fn sheet_strategy(bank_len: usize) -> impl Strategy<Value = Vec<u8>> {
    proptest::collection::vec(1u8..=5, bank_len)
}

fn to_sheet(bank: &QuestionBank, answers: &[u8]) -> AnswerSheet {
    AnswerSheet {
        respondent: "r".into(),
        answers: bank
            .items
            .iter()
            .zip(answers)
            .map(|(i, a)| (i.id.clone(), *a))
            .collect(),
    }
}

/// Scoring recomputed directly from the definition, in floating point.
fn brute_force(bank: &QuestionBank, runs: &[AnswerSheet]) -> BTreeMap<(Domain, String), u32> {
    let mut out = BTreeMap::new();
    for d in Domain::ALL {
        for f in d.facets() {
            let mut percents = Vec::new();
            for sheet in runs {
                let mut raw = 0i64;
                for item in &bank.items {
                    if item.domain == d && item.facet == f {
                        let a = i64::from(sheet.answers[&item.id]);
                        raw += if item.reverse_keyed { 5 - a } else { a - 1 };
                    }
                }
                percents.push(100.0 * raw as f64 / 16.0);
            }
            let mean = percents.iter().sum::<f64>() / percents.len() as f64;
            out.insert((d, f.to_string()), (mean + 0.5).floor() as u32);
        }
    }
    out
}

fn flatten(t: &FacetScoreTable) -> BTreeMap<(Domain, String), u32> {
    t.scores
        .iter()
        .flat_map(|(d, m)| m.iter().map(move |(f, v)| ((*d, f.clone()), *v)))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn bfi_scoring_matches_brute_force(runs in proptest::collection::vec(sheet_strategy(120), 1..4)) {
        let bank = QuestionBank::placeholder();
        let sheets: Vec<_> = runs.iter().map(|a| to_sheet(&bank, a)).collect();
        let table = score_facets(&bank, &sheets).unwrap();
        prop_assert_eq!(flatten(&table), brute_force(&bank, &sheets));
        if sheets.len() == 1 {
            let grid = single_run_grid();
            prop_assert!(flatten(&table).values().all(|v| grid.contains(v)));
        }
        prop_assert!(flatten(&table).values().all(|&v| v <= 100));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn reverse_key_involution(
        reverse in proptest::collection::vec(any::<bool>(), 120),
        flip in proptest::collection::vec(any::<bool>(), 120),
        answers in sheet_strategy(120),
    ) {
        let mut bank = QuestionBank::placeholder();
        for (item, r) in bank.items.iter_mut().zip(&reverse) {
            item.reverse_keyed = *r;
        }
        let sheet = to_sheet(&bank, &answers);
        let mut flipped_bank = bank.clone();
        let mut flipped_sheet = sheet.clone();
        for (item, f) in flipped_bank.items.iter_mut().zip(&flip) {
            if *f {
                item.reverse_keyed = !item.reverse_keyed;
                let a = flipped_sheet.answers.get_mut(&item.id).unwrap();
                *a = 6 - *a;
            }
        }
        prop_assert_eq!(
            score_facets(&bank, &[sheet]).unwrap(),
            score_facets(&flipped_bank, &[flipped_sheet]).unwrap()
        );
    }

    #[test]
    fn comparison_is_shift_invariant_and_credits_ties(
        values in proptest::collection::vec(proptest::collection::vec(0u32..=100, 30), 3..6),
        shift in 0u32..100,
    ) {
        let table = |name: &str, v: &[u32], c: u32| FacetScoreTable {
            respondent: name.into(),
            scores: Domain::ALL
                .iter()
                .enumerate()
                .map(|(di, d)| (*d, d.facets().iter().enumerate().map(|(fi, f)| (f.to_string(), v[di * 6 + fi] + c)).collect()))
                .collect(),
        };
        let human = table("h", &values[0], 0);
        let models: Vec<_> = values[1..].iter().enumerate().map(|(i, v)| (format!("m{i}"), table("m", v, 0))).collect();
        let shifted_human = table("h", &values[0], shift);
        let shifted: Vec<_> = values[1..].iter().enumerate().map(|(i, v)| (format!("m{i}"), table("m", v, shift))).collect();
        let a = compare(&human, &models).unwrap();
        let b = compare(&shifted_human, &shifted).unwrap();
        for (da, db) in a.domains.iter().zip(&b.domains) {
            prop_assert_eq!(&da.wins, &db.wins);
            prop_assert_eq!(&da.sum_abs_gap, &db.sum_abs_gap);
            let gaps = |d: &persona_core::evaluation::DomainComparison| d.facets.iter().map(|f| f.models.iter().map(|c| c.gap).collect::<Vec<_>>()).collect::<Vec<_>>();
            prop_assert_eq!(gaps(da), gaps(db));
            let total: u32 = da.wins.iter().sum();
            let ties = da.facets.iter().any(|f| f.models.iter().filter(|c| c.best).count() > 1);
            prop_assert!(total >= 6);
            prop_assert_eq!(total == 6, !ties);
            for (m, s) in da.sum_abs_gap.iter().enumerate() {
                prop_assert_eq!(*s, da.facets.iter().map(|f| f.models[m].gap.unsigned_abs()).sum::<u64>());
            }
        }
    }

    #[test]
    fn rating_means_match_brute_force(
        rows in proptest::collection::vec((0usize..3, proptest::collection::vec(1u8..=5, 6)), 1..40),
    ) {
        let sheets: Vec<RatingSheet> = rows
            .iter()
            .enumerate()
            .map(|(i, (g, scores))| RatingSheet {
                rater_id: format!("r{}", i % 7),
                story_id: format!("s{i}"),
                group: Some(["a", "b", "c"][*g].to_string()),
                informed_ai: true,
                scores: Metric::ALL.iter().copied().zip(scores.iter().copied()).collect(),
            })
            .collect();
        let table = aggregate_ratings(&sheets, Grouping::Group).unwrap();
        for row in &table.rows {
            let members: Vec<_> = sheets.iter().filter(|s| s.group.as_deref() == Some(row.group.as_str())).collect();
            prop_assert_eq!(row.sheets, members.len());
            let n = members.len() as i64;
            for m in Metric::ALL {
                let sum: i64 = members.iter().map(|s| i64::from(s.scores[&m])).sum();
                // Nearest hundredth by exhaustive search; ties go up.
                let best = (100..=500)
                    .min_by_key(|c: &i64| ((100 * sum - c * n).abs(), -c))
                    .unwrap();
                prop_assert_eq!((row.means[&m] * 100.0).round() as i64, best);
            }
        }
    }
}
