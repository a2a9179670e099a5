//! Model-versus-human facet comparison.
//!
//! For every facet the gap is `d = model - human`. Per domain, a model's
//! `# Wins` counts the facets where its `|d|` is the smallest among the
//! compared models (every tied minimizer is credited), and `Σ|d|` sums `|d|`
//! over the domain's six facets.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::bfi::{Domain, FacetScoreTable};
use super::EvalError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelCell {
    pub score: u32,
    pub gap: i64,
    /// True when this model attains the smallest `|gap|` on the facet.
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FacetComparison {
    pub facet: String,
    pub human: u32,
    /// One cell per model, in report order.
    pub models: Vec<ModelCell>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainComparison {
    pub domain: Domain,
    pub facets: Vec<FacetComparison>,
    pub wins: Vec<u32>,
    pub sum_abs_gap: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub models: Vec<String>,
    pub domains: Vec<DomainComparison>,
}

impl ComparisonReport {
    pub fn domain(&self, d: Domain) -> Option<&DomainComparison> {
        self.domains.iter().find(|c| c.domain == d)
    }
}

/// Facet order for a domain: the canonical labels first, then any others
/// present in the table, alphabetically.
fn facet_order(table: &FacetScoreTable, d: Domain) -> Vec<String> {
    let present = table.scores.get(&d);
    let mut order: Vec<String> = d
        .facets()
        .iter()
        .filter(|f| present.is_some_and(|m| m.contains_key(**f)))
        .map(|f| f.to_string())
        .collect();
    if let Some(m) = present {
        for f in m.keys() {
            if !order.contains(f) {
                order.push(f.clone());
            }
        }
    }
    order
}

pub fn compare(human: &FacetScoreTable, models: &[(String, FacetScoreTable)]) -> Result<ComparisonReport, EvalError> {
    if models.is_empty() {
        return Err(EvalError::KeyMismatch("no model tables supplied".into()));
    }
    let keys = human.keys();
    for (name, t) in models {
        if t.keys() != keys {
            let missing: Vec<_> = keys.difference(&t.keys()).map(|(d, f)| format!("{d}/{f}")).collect();
            let extra: Vec<_> = t.keys().difference(&keys).map(|(d, f)| format!("{d}/{f}")).collect();
            return Err(EvalError::KeyMismatch(format!(
                "`{name}` differs from the human table (missing: [{}], extra: [{}])",
                missing.join(", "),
                extra.join(", ")
            )));
        }
    }

    let mut domains = Vec::new();
    for d in Domain::ALL {
        let order = facet_order(human, d);
        if order.is_empty() {
            continue;
        }
        let mut wins = vec![0u32; models.len()];
        let mut sums = vec![0u64; models.len()];
        let mut facets = Vec::new();
        for f in order {
            let h = human.get(d, &f).expect("key sets checked");
            let gaps: Vec<i64> = models
                .iter()
                .map(|(_, t)| i64::from(t.get(d, &f).expect("key sets checked")) - i64::from(h))
                .collect();
            let min = gaps.iter().map(|g| g.unsigned_abs()).min().expect("at least one model");
            let cells = models
                .iter()
                .zip(&gaps)
                .enumerate()
                .map(|(m, ((_, t), &gap))| {
                    let best = gap.unsigned_abs() == min;
                    wins[m] += u32::from(best);
                    sums[m] += gap.unsigned_abs();
                    ModelCell {
                        score: t.get(d, &f).expect("key sets checked"),
                        gap,
                        best,
                    }
                })
                .collect();
            facets.push(FacetComparison {
                facet: f,
                human: h,
                models: cells,
            });
        }
        domains.push(DomainComparison {
            domain: d,
            facets,
            wins,
            sum_abs_gap: sums,
        });
    }
    Ok(ComparisonReport {
        models: models.iter().map(|(n, _)| n.clone()).collect(),
        domains,
    })
}

/// Plain-text table: facet rows with `score (gap)` per model, `*` marking the
/// smallest gap, then `# Wins` and `Σ|d|` footer rows per domain.
pub fn render_table(report: &ComparisonReport, title: &str) -> String {
    let facet_w = report
        .domains
        .iter()
        .flat_map(|d| d.facets.iter().map(|f| f.facet.chars().count()))
        .max()
        .unwrap_or(0)
        .max("# Wins".len());
    let col_w = report
        .models
        .iter()
        .map(|m| m.chars().count())
        .max()
        .unwrap_or(0)
        .max(10);
    let mut out = String::new();
    let _ = writeln!(out, "{title}");
    let _ = write!(out, "{:<5} {:<facet_w$}", "Trait", "Facet");
    for m in &report.models {
        let _ = write!(out, "  {m:>col_w$}");
    }
    let _ = writeln!(out, "  {:>col_w$}", "Human");
    for d in &report.domains {
        for (i, f) in d.facets.iter().enumerate() {
            let label = if i == 0 { d.domain.code() } else { "" };
            let _ = write!(out, "{label:<5} {:<facet_w$}", f.facet);
            for c in &f.models {
                let cell = format!("{}{} ({:+})", if c.best { "*" } else { "" }, c.score, c.gap);
                let _ = write!(out, "  {cell:>col_w$}");
            }
            let _ = writeln!(out, "  {:>col_w$}", f.human);
        }
        let _ = write!(out, "{:<5} {:<facet_w$}", "", "# Wins");
        for w in &d.wins {
            let _ = write!(out, "  {w:>col_w$}");
        }
        let _ = writeln!(out);
        let _ = write!(out, "{:<5} {:<facet_w$}", "", "Σ|d|");
        for s in &d.sum_abs_gap {
            let _ = write!(out, "  {s:>col_w$}");
        }
        let _ = writeln!(out);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FooterMetric {
    Wins,
    SumAbsGap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainFooter {
    pub wins: Vec<u64>,
    pub sum_abs_gap: Vec<u64>,
}

/// A footer value known to disagree with its own facet rows, with the reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub domain: Domain,
    pub metric: FooterMetric,
    pub model: String,
    pub reported: u64,
    pub note: String,
}

/// Footer rows as printed in a source table, for cross-checking.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportedFooters {
    pub character: String,
    pub models: Vec<String>,
    pub footers: BTreeMap<Domain, DomainFooter>,
    #[serde(default)]
    pub annotated_divergences: Vec<Annotation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Divergence {
    pub domain: Domain,
    pub metric: FooterMetric,
    pub model: String,
    pub reported: u64,
    pub recomputed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FooterCheck {
    /// Every footer value that differs from the recomputation.
    pub divergences: Vec<Divergence>,
    /// Divergences not covered by an annotation.
    pub unannotated: Vec<Divergence>,
    /// Annotations for values that in fact match.
    pub stale_annotations: Vec<Annotation>,
}

impl FooterCheck {
    pub fn is_clean(&self) -> bool {
        self.unannotated.is_empty() && self.stale_annotations.is_empty()
    }
}

/// Compares recomputed footers with reported ones.
pub fn check_footers(report: &ComparisonReport, reported: &ReportedFooters) -> Result<FooterCheck, EvalError> {
    if report.models != reported.models {
        return Err(EvalError::KeyMismatch(format!(
            "model columns differ: report {:?}, reported footers {:?}",
            report.models, reported.models
        )));
    }
    let mut divergences = Vec::new();
    for (domain, footer) in &reported.footers {
        let dc = report
            .domain(*domain)
            .ok_or_else(|| EvalError::KeyMismatch(format!("report has no {domain} rows")))?;
        let recomputed_wins: Vec<u64> = dc.wins.iter().map(|&w| u64::from(w)).collect();
        for (metric, rep, rec) in [
            (FooterMetric::Wins, &footer.wins, &recomputed_wins),
            (FooterMetric::SumAbsGap, &footer.sum_abs_gap, &dc.sum_abs_gap),
        ] {
            if rep.len() != rec.len() {
                return Err(EvalError::KeyMismatch(format!(
                    "{domain} {metric:?} has {} values for {} models",
                    rep.len(),
                    rec.len()
                )));
            }
            for (m, (&a, &b)) in rep.iter().zip(rec).enumerate() {
                if a != b {
                    divergences.push(Divergence {
                        domain: *domain,
                        metric,
                        model: report.models[m].clone(),
                        reported: a,
                        recomputed: b,
                    });
                }
            }
        }
    }
    let annotated = |d: &Divergence| {
        reported
            .annotated_divergences
            .iter()
            .any(|a| a.domain == d.domain && a.metric == d.metric && a.model == d.model && a.reported == d.reported)
    };
    let unannotated = divergences.iter().filter(|d| !annotated(d)).cloned().collect();
    let stale_annotations = reported
        .annotated_divergences
        .iter()
        .filter(|a| {
            !divergences
                .iter()
                .any(|d| a.domain == d.domain && a.metric == d.metric && a.model == d.model && a.reported == d.reported)
        })
        .cloned()
        .collect();
    Ok(FooterCheck {
        divergences,
        unannotated,
        stale_annotations,
    })
}
