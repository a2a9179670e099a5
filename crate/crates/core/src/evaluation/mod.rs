//! Evaluation arithmetic: Big Five facet scoring, model-versus-human facet
//! comparison, the story-generation task and Likert rating aggregation.

pub mod bfi;
pub mod compare;
pub mod ratings;
pub mod stories;

pub use bfi::{
    administer_bfi, administer_with_persona, combine_run_percents, parse_answer, score_facets, AnswerSheet, BfiItem,
    Domain, FacetScoreTable, QuestionBank,
};
pub use compare::{
    check_footers, compare, render_table, Annotation, ComparisonReport, Divergence, DomainComparison, DomainFooter,
    FacetComparison, FooterCheck, FooterMetric, ModelCell, ReportedFooters,
};
pub use ratings::{
    aggregate_ratings, cross_average, parse_rating_csv, round_half_up_2, Grouping, Metric, RatingRow, RatingSheet,
    RatingTable,
};
pub use stories::{run_story_task, StoryRun, StoryTask, STORY_PROMPT, STORY_WORD_TARGET};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("invalid question bank: {0}")]
    InvalidBank(String),
    #[error("answer sheet for `{respondent}` is incomplete; unanswered items: {}", .missing.join(", "))]
    IncompleteSheet { respondent: String, missing: Vec<String> },
    #[error("answer {value} for item {item} is outside 1..=5")]
    InvalidAnswer { item: String, value: u8 },
    #[error("at least one answer sheet is required")]
    NoRuns,
    #[error("facet tables disagree: {0}")]
    KeyMismatch(String),
    #[error("invalid rating data: {0}")]
    Ratings(String),
}
