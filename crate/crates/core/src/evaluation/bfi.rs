//! Big Five Inventory administration and facet scoring.
//!
//! The bank has 120 items: 24 per domain, 4 per facet. Each answer on the
//! 1..=5 Likert scale is worth `answer - 1` points, or `5 - answer` for a
//! reverse-keyed item. A facet's raw score is the sum over its four items
//! (0..=16) and a run's facet percentage is `100 * raw / 16`. Several runs are
//! combined by averaging the exact percentages and rounding half up.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::corpus::CharacterCorpus;
use crate::inference::{respond, AssembledPersona, ChatSession};
use crate::pipeline::Pipeline;
use crate::{Error, Result};

pub const ITEMS_PER_FACET: usize = 4;
pub const FACETS_PER_DOMAIN: usize = 6;
pub const BANK_SIZE: usize = 120;
/// Maximum raw facet score.
pub const RAW_MAX: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Domain {
    OPN,
    CON,
    EXT,
    AGR,
    NEU,
}

impl Domain {
    pub const ALL: [Domain; 5] = [Domain::OPN, Domain::CON, Domain::EXT, Domain::AGR, Domain::NEU];

    pub fn name(self) -> &'static str {
        match self {
            Domain::OPN => "Openness",
            Domain::CON => "Conscientiousness",
            Domain::EXT => "Extraversion",
            Domain::AGR => "Agreeableness",
            Domain::NEU => "Neuroticism",
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Domain::OPN => "OPN",
            Domain::CON => "CON",
            Domain::EXT => "EXT",
            Domain::AGR => "AGR",
            Domain::NEU => "NEU",
        }
    }

    /// Facet labels in table order.
    pub fn facets(self) -> [&'static str; FACETS_PER_DOMAIN] {
        match self {
            Domain::OPN => [
                "Fantasy",
                "Aesthetics",
                "Feelings",
                "Actions",
                "Ideas",
                "Values liberalism",
            ],
            Domain::CON => [
                "Competence",
                "Order",
                "Dutifulness",
                "Achievement Striving",
                "Self-Discipline",
                "Deliberation",
            ],
            Domain::EXT => [
                "Warmth",
                "Gregariousness",
                "Assertiveness",
                "Activity",
                "Excitement Seeking",
                "Positive Emotions",
            ],
            Domain::AGR => [
                "Trust",
                "Compliance",
                "Altruism",
                "Straightforwardness",
                "Modesty",
                "Tendermindedness",
            ],
            Domain::NEU => [
                "Anxiety",
                "Hostility",
                "Depression",
                "Self-Consciousness",
                "Impulsiveness",
                "Vulnerability",
            ],
        }
    }
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BfiItem {
    pub id: String,
    pub text: String,
    #[serde(rename = "trait")]
    pub domain: Domain,
    pub facet: String,
    pub reverse_keyed: bool,
}

impl BfiItem {
    /// Points in 0..=4 for a Likert answer.
    pub fn points(&self, answer: u8) -> u32 {
        let a = u32::from(answer);
        if self.reverse_keyed {
            5 - a
        } else {
            a - 1
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionBank {
    pub items: Vec<BfiItem>,
}

impl QuestionBank {
    pub fn new(items: Vec<BfiItem>) -> Result<Self, EvalError> {
        let bank = QuestionBank { items };
        bank.validate()?;
        Ok(bank)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let bank: QuestionBank = serde_json::from_str(&text).map_err(|e| Error::Json {
            context: path.display().to_string(),
            source: e,
        })?;
        bank.validate()?;
        Ok(bank)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::InvalidBank(m));
        if self.items.len() != BANK_SIZE {
            return bad(format!("expected {BANK_SIZE} items, found {}", self.items.len()));
        }
        let mut ids = BTreeSet::new();
        let mut counts: BTreeMap<(Domain, &str), usize> = BTreeMap::new();
        for item in &self.items {
            if !ids.insert(item.id.as_str()) {
                return bad(format!("duplicate item id {}", item.id));
            }
            if item.text.trim().is_empty() {
                return bad(format!("item {} has no text", item.id));
            }
            if !item.domain.facets().contains(&item.facet.as_str()) {
                return bad(format!(
                    "item {}: `{}` is not a facet of {}",
                    item.id, item.facet, item.domain
                ));
            }
            *counts.entry((item.domain, item.facet.as_str())).or_default() += 1;
        }
        for d in Domain::ALL {
            for f in d.facets() {
                let n = counts.get(&(d, f)).copied().unwrap_or(0);
                if n != ITEMS_PER_FACET {
                    return bad(format!("{d}/{f} has {n} items, expected {ITEMS_PER_FACET}"));
                }
            }
        }
        Ok(())
    }

    /// Structurally valid bank with neutral wording. Items 2 and 4 of every
    /// facet are reverse-keyed. Replace with a licensed instrument for real use.
    pub fn placeholder() -> Self {
        let mut items = Vec::with_capacity(BANK_SIZE);
        for d in Domain::ALL {
            for (fi, f) in d.facets().into_iter().enumerate() {
                for k in 1..=ITEMS_PER_FACET {
                    let reverse = k % 2 == 0;
                    items.push(BfiItem {
                        id: format!("{}-{}-{k}", d.code(), fi + 1),
                        text: format!(
                            "[placeholder] {} statement {k} about {f} ({}).",
                            if reverse { "Reverse-keyed" } else { "Keyed" },
                            d.name()
                        ),
                        domain: d,
                        facet: f.to_string(),
                        reverse_keyed: reverse,
                    });
                }
            }
        }
        QuestionBank { items }
    }

    fn facet_items(&self, d: Domain, facet: &str) -> impl Iterator<Item = &BfiItem> {
        let facet = facet.to_string();
        self.items.iter().filter(move |i| i.domain == d && i.facet == facet)
    }
}

/// One respondent's answers, keyed by item id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSheet {
    pub respondent: String,
    pub answers: BTreeMap<String, u8>,
}

impl AnswerSheet {
    pub fn check_complete(&self, bank: &QuestionBank) -> Result<(), EvalError> {
        let missing: Vec<String> = bank
            .items
            .iter()
            .filter(|i| !self.answers.contains_key(&i.id))
            .map(|i| i.id.clone())
            .collect();
        if !missing.is_empty() {
            return Err(EvalError::IncompleteSheet {
                respondent: self.respondent.clone(),
                missing,
            });
        }
        for (item, &value) in &self.answers {
            if !(1..=5).contains(&value) {
                return Err(EvalError::InvalidAnswer {
                    item: item.clone(),
                    value,
                });
            }
        }
        Ok(())
    }
}

/// Reads a Likert answer from free text: the first standalone digit 1..=5,
/// otherwise a phrase ("strongly agree" = 5, "agree" = 4, "neutral" or
/// "neither agree nor disagree" = 3, "disagree" = 2, "strongly disagree" = 1).
pub fn parse_answer(text: &str) -> Option<u8> {
    let chars: Vec<char> = text.chars().collect();
    let at = |i: usize, d: isize| i.checked_add_signed(d).and_then(|j| chars.get(j)).copied();
    let is_digit = |c: Option<char>| c.is_some_and(|c| c.is_ascii_digit());
    let separator = |c: Option<char>| matches!(c, Some('.' | ','));
    for (i, &c) in chars.iter().enumerate() {
        if !('1'..='5').contains(&c) {
            continue;
        }
        let (before, after) = (at(i, -1), at(i, 1));
        let glued = before.is_some_and(char::is_alphanumeric)
            || after.is_some_and(char::is_alphanumeric)
            || (separator(before) && is_digit(at(i, -2)))
            || (separator(after) && is_digit(at(i, 2)));
        if !glued {
            return Some(c as u8 - b'0');
        }
    }
    const PHRASES: [(&str, u8); 6] = [
        ("strongly disagree", 1),
        ("strongly agree", 5),
        ("neither agree nor disagree", 3),
        ("neutral", 3),
        ("disagree", 2),
        ("agree", 4),
    ];
    let lower = text.to_lowercase();
    PHRASES
        .iter()
        .filter_map(|(p, v)| lower.find(p).map(|pos| (pos, p.len(), *v)))
        .min_by_key(|&(pos, len, _)| (pos, std::cmp::Reverse(len)))
        .map(|(_, _, v)| v)
}

/// The question put to a model respondent for one item.
pub fn item_prompt(item: &BfiItem) -> String {
    format!(
        "How well does the following statement describe you? Answer with a single number from 1 to 5, \
         where 1 means strongly disagree, 3 means neutral and 5 means strongly agree.\n\nStatement: {}",
        item.text
    )
}

/// Asks every item through `respond_fn`. An unparseable answer is asked once
/// more; items still unanswered make the sheet incomplete. Errors returned by
/// `respond_fn` abort administration.
pub fn administer_bfi(
    bank: &QuestionBank,
    respondent: &str,
    respond_fn: &(dyn Fn(&BfiItem) -> Result<String> + Sync),
    workers: usize,
) -> Result<AnswerSheet> {
    bank.validate()?;
    let next = AtomicUsize::new(0);
    let answers = Mutex::new(BTreeMap::new());
    let failure: Mutex<Option<Error>> = Mutex::new(None);
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(item) = bank.items.get(i) else { break };
        if failure.lock().unwrap().is_some() {
            break;
        }
        let mut parsed = None;
        for attempt in 0..2 {
            match respond_fn(item) {
                Ok(text) => {
                    parsed = parse_answer(&text);
                    if parsed.is_some() {
                        break;
                    }
                    tracing::debug!(item = %item.id, attempt, "unparseable answer: {text:?}");
                }
                Err(e) => {
                    failure.lock().unwrap().get_or_insert(e);
                    return;
                }
            }
        }
        if let Some(v) = parsed {
            answers.lock().unwrap().insert(item.id.clone(), v);
        }
    };
    std::thread::scope(|s| {
        for _ in 0..workers.max(1) {
            s.spawn(worker);
        }
    });
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    let sheet = AnswerSheet {
        respondent: respondent.to_string(),
        answers: answers.into_inner().unwrap(),
    };
    sheet.check_complete(bank)?;
    Ok(sheet)
}

/// Administers the bank to a persona. Each item is asked in a fresh session
/// so earlier answers cannot influence later ones.
pub fn administer_with_persona(
    pipeline: &Pipeline,
    corpus: &CharacterCorpus,
    persona: &AssembledPersona,
    bank: &QuestionBank,
    respondent: &str,
) -> Result<AnswerSheet> {
    let created_at = pipeline.clock.now();
    let ask = |item: &BfiItem| -> Result<String> {
        let mut session = ChatSession::new(format!("bfi-{}", item.id), corpus, persona.clone(), created_at);
        respond(&mut session, &item_prompt(item), pipeline)
    };
    let workers = if pipeline.settings.parallel { 4 } else { 1 };
    administer_bfi(bank, respondent, &ask, workers)
}

/// Facet percentages per domain, in 0..=100.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FacetScoreTable {
    pub respondent: String,
    pub scores: BTreeMap<Domain, BTreeMap<String, u32>>,
}

impl FacetScoreTable {
    pub fn get(&self, d: Domain, facet: &str) -> Option<u32> {
        self.scores.get(&d)?.get(facet).copied()
    }

    pub fn keys(&self) -> BTreeSet<(Domain, String)> {
        self.scores
            .iter()
            .flat_map(|(d, m)| m.keys().map(move |f| (*d, f.clone())))
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| Error::Json {
            context: path.display().to_string(),
            source: e,
        })
    }
}

/// Scores one or more complete sheets. With `n` runs and raw facet scores
/// `r_1..r_n` the result is `round_half_up(mean(100 * r_k / 16))`, computed
/// in integers.
pub fn score_facets(bank: &QuestionBank, runs: &[AnswerSheet]) -> Result<FacetScoreTable, EvalError> {
    bank.validate()?;
    let first = runs.first().ok_or(EvalError::NoRuns)?;
    for sheet in runs {
        sheet.check_complete(bank)?;
    }
    let n = runs.len() as u64;
    let mut scores = BTreeMap::new();
    for d in Domain::ALL {
        let mut facets = BTreeMap::new();
        for f in d.facets() {
            let sum_raw: u64 = runs
                .iter()
                .map(|sheet| {
                    bank.facet_items(d, f)
                        .map(|item| u64::from(item.points(sheet.answers[&item.id])))
                        .sum::<u64>()
                })
                .sum();
            let score = (200 * sum_raw + u64::from(RAW_MAX) * n) / (2 * u64::from(RAW_MAX) * n);
            facets.insert(f.to_string(), score as u32);
        }
        scores.insert(d, facets);
    }
    Ok(FacetScoreTable {
        respondent: first.respondent.clone(),
        scores,
    })
}

/// Mean of per-run percentages, rounded half up.
pub fn combine_run_percents(percents: &[f64]) -> Option<u32> {
    if percents.is_empty() {
        return None;
    }
    let mean = percents.iter().sum::<f64>() / percents.len() as f64;
    Some((mean + 0.5 + 1e-9).floor() as u32)
}

/// The 17 values a single run can produce: `round(100 k / 16)` for k in 0..=16.
pub fn single_run_grid() -> [u32; 17] {
    std::array::from_fn(|k| (200 * k as u32 + 16) / 32)
}
