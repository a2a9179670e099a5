use std::collections::BTreeMap;
use std::path::PathBuf;

use persona_core::evaluation::bfi::{Domain, FacetScoreTable};
use persona_core::evaluation::{aggregate_ratings, cross_average, Grouping, Metric, RatingSheet};
use persona_core::evaluation::{check_footers, compare, ComparisonReport, FooterCheck, FooterMetric, ReportedFooters};
use serde::Deserialize;

const CHARACTERS: [&str; 4] = ["megumin", "anya", "frieren", "hitori"];
const MODEL_FILES: [&str; 4] = ["chatgpt", "chatgpt_ours", "gpt4", "gpt4_ours"];

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn load(character: &str) -> (ComparisonReport, ReportedFooters) {
    let dir = fixtures().join("bfi").join(character);
    let reported: ReportedFooters = serde_json::from_slice(&std::fs::read(dir.join("reported.json")).unwrap()).unwrap();
    let human = FacetScoreTable::load(&dir.join("human.json")).unwrap();
    let models: Vec<_> = reported
        .models
        .iter()
        .zip(MODEL_FILES)
        .map(|(name, file)| {
            (
                name.clone(),
                FacetScoreTable::load(&dir.join(format!("{file}.json"))).unwrap(),
            )
        })
        .collect();
    (compare(&human, &models).unwrap(), reported)
}

fn check(character: &str) -> (ComparisonReport, FooterCheck) {
    let (report, reported) = load(character);
    let check = check_footers(&report, &reported).unwrap();
    (report, check)
}

#[test]
fn every_footer_matches_or_is_annotated() {
    let mut total = 0;
    for c in CHARACTERS {
        let (_, check) = check(c);
        assert!(check.unannotated.is_empty(), "{c}: {:?}", check.unannotated);
        assert!(check.stale_annotations.is_empty(), "{c}: {:?}", check.stale_annotations);
        total += check.divergences.len();
    }
    assert_eq!(total, 6);
}

#[test]
fn megumin_openness_footer() {
    let (report, _) = check("megumin");
    let opn = report.domain(Domain::OPN).unwrap();
    assert_eq!(opn.sum_abs_gap, vec![130, 143, 113, 69]);
    assert_eq!(opn.wins, vec![0, 3, 2, 3]);
}

#[test]
fn spot_values() {
    let (anya, _) = check("anya");
    assert_eq!(anya.domain(Domain::CON).unwrap().sum_abs_gap[3], 44);
    let (hitori, _) = check("hitori");
    assert_eq!(hitori.domain(Domain::NEU).unwrap().sum_abs_gap[3], 74);
}

#[test]
fn known_divergences_are_exactly_the_annotated_ones() {
    let mut found: Vec<(String, Domain, FooterMetric, String, u64)> = Vec::new();
    for c in CHARACTERS {
        for d in check(c).1.divergences {
            found.push((c.to_string(), d.domain, d.metric, d.model, d.reported));
        }
    }
    found.sort();
    let mut expected = vec![
        (
            "megumin".to_string(),
            Domain::AGR,
            FooterMetric::SumAbsGap,
            "ChatGPT+Ours".to_string(),
            110,
        ),
        (
            "megumin".to_string(),
            Domain::NEU,
            FooterMetric::Wins,
            "ChatGPT".to_string(),
            0,
        ),
        (
            "megumin".to_string(),
            Domain::NEU,
            FooterMetric::Wins,
            "GPT-4".to_string(),
            2,
        ),
        (
            "anya".to_string(),
            Domain::CON,
            FooterMetric::SumAbsGap,
            "ChatGPT+Ours".to_string(),
            99,
        ),
        (
            "anya".to_string(),
            Domain::EXT,
            FooterMetric::SumAbsGap,
            "GPT-4+Ours".to_string(),
            29,
        ),
        (
            "frieren".to_string(),
            Domain::OPN,
            FooterMetric::Wins,
            "GPT-4+Ours".to_string(),
            4,
        ),
    ];
    expected.sort();
    assert_eq!(found, expected);
}

#[derive(Deserialize)]
struct RatingFixture {
    rows: Vec<RatingFixtureRow>,
    averages: Vec<RatingFixtureAverage>,
}

#[derive(Deserialize)]
struct RatingFixtureRow {
    character: String,
    setting: String,
    means: BTreeMap<Metric, f64>,
}

#[derive(Deserialize)]
struct RatingFixtureAverage {
    setting: String,
    means: BTreeMap<Metric, f64>,
}

fn ratings() -> RatingFixture {
    serde_json::from_slice(&std::fs::read(fixtures().join("ratings/likert.json")).unwrap()).unwrap()
}

const TOLERANCE: f64 = 0.005 + 1e-9;

#[test]
fn rating_averages_follow_from_rows() {
    let fx = ratings();
    assert_eq!(fx.averages.len(), 2);
    for avg in &fx.averages {
        let rows: Vec<_> = fx.rows.iter().filter(|r| r.setting == avg.setting).collect();
        assert_eq!(rows.len(), 4);
        for m in Metric::ALL {
            let mean = rows.iter().map(|r| r.means[&m]).sum::<f64>() / 4.0;
            assert!(
                (mean - avg.means[&m]).abs() <= TOLERANCE,
                "{} {m:?}: {mean} vs {}",
                avg.setting,
                avg.means[&m]
            );
        }
    }
}

#[test]
fn rating_rows_are_reachable_from_28_integer_scores() {
    // Rebuild each row from 28 synthetic sheets whose sum rounds to the
    // printed mean, then aggregate and cross-average through the library.
    let fx = ratings();
    for setting in ["GPT-4", "GPT-4+Ours"] {
        let mut table_rows = Vec::new();
        for row in fx.rows.iter().filter(|r| r.setting == setting) {
            let n = 28u32;
            let sums: BTreeMap<Metric, u32> = Metric::ALL
                .iter()
                .map(|&m| {
                    let target = row.means[&m];
                    let sum = (n..=5 * n)
                        .find(|s| (f64::from(*s) / f64::from(n) - target).abs() <= TOLERANCE)
                        .unwrap_or_else(|| panic!("{} {setting} {m:?} {target} not reachable", row.character));
                    (m, sum)
                })
                .collect();
            let sheets: Vec<RatingSheet> = (0..n)
                .map(|i| RatingSheet {
                    rater_id: format!("r{}", i % 7),
                    story_id: format!("{}-{}", row.character, i / 7),
                    group: Some(row.character.clone()),
                    informed_ai: true,
                    scores: sums
                        .iter()
                        .map(|(m, s)| (*m, (s / n + u32::from(i < s % n)) as u8))
                        .collect(),
                })
                .collect();
            let table = aggregate_ratings(&sheets, Grouping::Group).unwrap();
            assert_eq!(table.rows.len(), 1);
            for m in Metric::ALL {
                assert!(
                    (table.rows[0].means[&m] - row.means[&m]).abs() < 1e-9,
                    "{} {m:?}",
                    row.character
                );
            }
            table_rows.extend(table.rows);
        }
        let avg = cross_average(&table_rows);
        let reported = &fx.averages.iter().find(|a| a.setting == setting).unwrap().means;
        for m in Metric::ALL {
            assert!((avg[&m] - reported[&m]).abs() <= TOLERANCE, "{setting} {m:?}");
        }
    }
}
