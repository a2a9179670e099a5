//! Likert rating ingestion and aggregation for generated stories.
//!
//! Means are reported to two decimals, rounded half up. Group means are exact
//! (computed in integers) before rounding; cross-group averages take the mean
//! of already-reported group means.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    Grammar,
    Coherence,
    Likability,
    Relevance,
    Complexity,
    Creativity,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Grammar,
        Metric::Coherence,
        Metric::Likability,
        Metric::Relevance,
        Metric::Complexity,
        Metric::Creativity,
    ];

    pub fn column(self) -> &'static str {
        match self {
            Metric::Grammar => "grammar",
            Metric::Coherence => "coherence",
            Metric::Likability => "likability",
            Metric::Relevance => "relevance",
            Metric::Complexity => "complexity",
            Metric::Creativity => "creativity",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingSheet {
    pub rater_id: String,
    pub story_id: String,
    /// Setting the story belongs to (e.g. a character and model pairing).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    /// Whether the rater was told the story was machine-generated.
    pub informed_ai: bool,
    pub scores: BTreeMap<Metric, u8>,
}

/// Parses rating CSV. Required columns: `rater_id`, `story_id` and one column
/// per metric (case-insensitive). Optional: `group`, `informed_ai`
/// (true/false, default true).
pub fn parse_rating_csv<R: Read>(reader: R) -> Result<Vec<RatingSheet>, EvalError> {
    let err = |m: String| EvalError::Ratings(m);
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| err(e.to_string()))?
        .iter()
        .map(|h| h.to_ascii_lowercase())
        .collect();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let rater = col("rater_id").ok_or_else(|| err("missing column rater_id".into()))?;
    let story = col("story_id").ok_or_else(|| err("missing column story_id".into()))?;
    let metric_cols = Metric::ALL
        .iter()
        .map(|m| {
            col(m.column())
                .map(|i| (*m, i))
                .ok_or_else(|| err(format!("missing metric column {}", m.column())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let group = col("group");
    let informed = col("informed_ai");

    let mut sheets = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| err(format!("line {line}: {e}")))?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let mut scores = BTreeMap::new();
        for &(m, i) in &metric_cols {
            let raw = field(i);
            if raw.is_empty() {
                return Err(err(format!("line {line}: missing {} score", m.column())));
            }
            let v: u8 = raw
                .parse()
                .ok()
                .filter(|v| (1..=5).contains(v))
                .ok_or_else(|| err(format!("line {line}: {} score `{raw}` is not in 1..=5", m.column())))?;
            scores.insert(m, v);
        }
        let informed_ai = match informed.map(field) {
            None | Some("") => true,
            Some(s) => match s.to_ascii_lowercase().as_str() {
                "true" | "yes" | "1" => true,
                "false" | "no" | "0" => false,
                _ => return Err(err(format!("line {line}: informed_ai `{s}` is not a boolean"))),
            },
        };
        sheets.push(RatingSheet {
            rater_id: field(rater).to_string(),
            story_id: field(story).to_string(),
            group: group.map(field).filter(|g| !g.is_empty()).map(str::to_string),
            informed_ai,
            scores,
        });
    }
    Ok(sheets)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// By the sheet's `group` field; sheets without one are rejected.
    Group,
    Story,
    /// One row over every sheet.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingRow {
    pub group: String,
    pub sheets: usize,
    pub means: BTreeMap<Metric, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingTable {
    pub rows: Vec<RatingRow>,
}

/// `sum / n` to two decimals, rounded half up, in exact integer arithmetic.
fn mean_2dp(sum: u64, n: u64) -> f64 {
    ((200 * sum + n) / (2 * n)) as f64 / 100.0
}

/// Rounds to two decimals, half up. A small slack absorbs binary
/// representation error (e.g. 4.125 stored as 4.12499...).
pub fn round_half_up_2(x: f64) -> f64 {
    (x * 100.0 + 0.5 + 1e-7).floor() / 100.0
}

/// Mean per (group, metric). Rows are sorted by group label.
pub fn aggregate_ratings(sheets: &[RatingSheet], grouping: Grouping) -> Result<RatingTable, EvalError> {
    let mut groups: BTreeMap<String, Vec<&RatingSheet>> = BTreeMap::new();
    for s in sheets {
        for m in Metric::ALL {
            match s.scores.get(&m) {
                Some(v) if (1..=5).contains(v) => {}
                Some(v) => {
                    return Err(EvalError::Ratings(format!(
                        "rater {} story {}: {} score {v} is not in 1..=5",
                        s.rater_id,
                        s.story_id,
                        m.column()
                    )))
                }
                None => {
                    return Err(EvalError::Ratings(format!(
                        "rater {} story {}: missing {} score",
                        s.rater_id,
                        s.story_id,
                        m.column()
                    )))
                }
            }
        }
        let key = match grouping {
            Grouping::All => "all".to_string(),
            Grouping::Story => s.story_id.clone(),
            Grouping::Group => s
                .group
                .clone()
                .ok_or_else(|| EvalError::Ratings(format!("rater {} story {} has no group", s.rater_id, s.story_id)))?,
        };
        groups.entry(key).or_default().push(s);
    }
    let rows = groups
        .into_iter()
        .map(|(group, members)| {
            let n = members.len() as u64;
            let means = Metric::ALL
                .iter()
                .map(|&m| {
                    let sum: u64 = members.iter().map(|s| u64::from(s.scores[&m])).sum();
                    (m, mean_2dp(sum, n))
                })
                .collect();
            RatingRow {
                group,
                sheets: members.len(),
                means,
            }
        })
        .collect();
    Ok(RatingTable { rows })
}

/// Unrounded mean of the given group means per metric.
pub fn cross_average<'a>(rows: impl IntoIterator<Item = &'a RatingRow>) -> BTreeMap<Metric, f64> {
    let rows: Vec<_> = rows.into_iter().collect();
    Metric::ALL
        .iter()
        .filter(|_| !rows.is_empty())
        .map(|&m| {
            let sum: f64 = rows.iter().map(|r| r.means[&m]).sum();
            (m, sum / rows.len() as f64)
        })
        .collect()
}
