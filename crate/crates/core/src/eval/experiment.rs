//! Fully automated categorical search: every patch is used as a query, the
//! simulated user labels retrieved patches by category equality, and the
//! loop runs to `t_max`.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{anr, normalized_rank, pr_curve, EvalError, PrPoint};
use crate::cube::CorpusLabels;
use crate::dissim::{DissimKind, DissimTable};
use crate::dspace::PrototypeSet;
use crate::rf::{Ranking, Relevance, RfSession, SessionConfig};
use crate::{CategoryId, PatchId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub session: SessionConfig,
    /// Restricts the queries; all patches when `None`.
    pub queries: Option<Vec<PatchId>>,
}

impl From<SessionConfig> for ExperimentConfig {
    fn from(session: SessionConfig) -> Self {
        Self { session, queries: None }
    }
}

/// One query's trajectory. Sessions that stop before `t_max` carry their
/// last ranking forward so every result has `t_max + 1` iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query: PatchId,
    pub category: CategoryId,
    /// Normalized rank per iteration.
    pub ranks: Vec<f64>,
    /// `(|R|, |NR|)` per iteration; the query counts as relevant.
    pub counts: Vec<(usize, usize)>,
    /// Iterations whose classifier fell back to the zero ranking.
    pub fallbacks: usize,
    #[serde(skip)]
    pub rankings: Vec<Ranking>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub category: CategoryId,
    pub name: String,
    pub members: usize,
    pub queries: usize,
    pub anr: Vec<f64>,
    pub mean_relevant: Vec<f64>,
    pub mean_non_relevant: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: SessionConfig,
    pub n_patches: usize,
    /// ANR over all queries per iteration.
    pub anr: Vec<f64>,
    pub categories: Vec<CategoryReport>,
    /// One averaged P-R curve per iteration, over scopes `1..=N`.
    pub pr_curves: Vec<Vec<PrPoint>>,
    pub mean_relevant: Vec<f64>,
    pub mean_non_relevant: Vec<f64>,
    /// Queries whose category has a single member.
    pub skipped: Vec<PatchId>,
    pub queries: Vec<QueryResult>,
}

impl ExperimentReport {
    pub fn zero_query_anr(&self) -> f64 {
        self.anr[0]
    }

    pub fn final_anr(&self) -> f64 {
        *self.anr.last().expect("at least the zero iteration")
    }

    pub fn category(&self, id: CategoryId) -> Option<&CategoryReport> {
        self.categories.iter().find(|c| c.category == id)
    }
}

fn simulate(
    table: &DissimTable,
    labels: &CorpusLabels,
    offline: Option<&PrototypeSet>,
    config: &SessionConfig,
    query: PatchId,
    category: CategoryId,
    relevant: &HashSet<PatchId>,
) -> Result<QueryResult, EvalError> {
    let mut session = RfSession::start(table, query, config.clone(), offline.cloned())?;
    let mut result = QueryResult { query, category, ranks: Vec::new(), counts: Vec::new(), fallbacks: 0, rankings: Vec::new() };
    let record = |s: &RfSession, r: &mut QueryResult| -> Result<(), EvalError> {
        r.ranks.push(normalized_rank(&s.ranking().order, relevant)?);
        r.counts.push(s.counts());
        r.rankings.push(s.ranking().clone());
        Ok(())
    };
    record(&session, &mut result)?;
    while !session.is_stopped() {
        let feedback: Vec<(PatchId, Relevance)> = session
            .retrieved()
            .iter()
            .map(|&id| {
                let same = labels.category(id) == Some(category);
                (id, if same { Relevance::Relevant } else { Relevance::NonRelevant })
            })
            .collect();
        let outcome = session.iterate(table, &feedback)?;
        result.fallbacks += usize::from(outcome.fallback);
        record(&session, &mut result)?;
    }
    while result.ranks.len() < config.t_max + 1 {
        let (r, c, k) = (result.ranks[result.ranks.len() - 1], result.counts[result.counts.len() - 1], result.rankings[result.rankings.len() - 1].clone());
        result.ranks.push(r);
        result.counts.push(c);
        result.rankings.push(k);
    }
    Ok(result)
}

fn mean_by_iteration(rows: &[&QueryResult], f: impl Fn(&QueryResult, usize) -> f64, iters: usize) -> Vec<f64> {
    (0..iters).map(|t| rows.iter().map(|q| f(q, t)).sum::<f64>() / rows.len().max(1) as f64).collect()
}

/// Runs every query (in parallel) and aggregates per category.
pub fn run_experiment(
    table: &DissimTable,
    labels: &CorpusLabels,
    offline: Option<&PrototypeSet>,
    config: &ExperimentConfig,
) -> Result<ExperimentReport, EvalError> {
    let n = table.len();
    labels.validate(table.ids()).map_err(|e| EvalError::Mismatch(e.to_string()))?;
    let members: BTreeMap<CategoryId, HashSet<PatchId>> =
        labels.category_ids().into_iter().map(|c| (c, labels.members(c).into_iter().collect())).collect();
    let queries: Vec<PatchId> = config.queries.clone().unwrap_or_else(|| table.ids().collect());
    let mut skipped = Vec::new();
    let mut runnable = Vec::new();
    for &q in &queries {
        let c = labels.category(q).ok_or(EvalError::Unlabelled(q))?;
        if members[&c].len() < 2 {
            skipped.push(q);
        } else {
            runnable.push((q, c));
        }
    }
    let results: Vec<QueryResult> = runnable
        .par_iter()
        .map(|&(q, c)| simulate(table, labels, offline, &config.session, q, c, &members[&c]))
        .collect::<Result<_, _>>()?;

    let iters = config.session.t_max + 1;
    let all: Vec<&QueryResult> = results.iter().collect();
    let categories = members
        .iter()
        .map(|(&c, m)| {
            let rows: Vec<&QueryResult> = results.iter().filter(|q| q.category == c).collect();
            CategoryReport {
                category: c,
                name: labels.name(c),
                members: m.len(),
                queries: rows.len(),
                anr: if rows.is_empty() { Vec::new() } else { mean_by_iteration(&rows, |q, t| q.ranks[t], iters) },
                mean_relevant: mean_by_iteration(&rows, |q, t| q.counts[t].0 as f64, iters),
                mean_non_relevant: mean_by_iteration(&rows, |q, t| q.counts[t].1 as f64, iters),
            }
        })
        .collect();
    let anr_all = if all.is_empty() {
        return Err(EvalError::EmptyList);
    } else {
        (0..iters).map(|t| anr(&all.iter().map(|q| q.ranks[t]).collect::<Vec<_>>())).collect::<Result<Vec<_>, _>>()?
    };
    let mut pr_curves = Vec::with_capacity(iters);
    for t in 0..iters {
        let mut acc = vec![(0.0, 0.0); n];
        for q in &results {
            let curve = pr_curve(&q.rankings[t].order, &members[&q.category])?;
            for (a, p) in acc.iter_mut().zip(curve) {
                a.0 += p.precision;
                a.1 += p.recall;
            }
        }
        let k = results.len() as f64;
        pr_curves.push(
            acc.into_iter()
                .enumerate()
                .map(|(i, (p, r))| PrPoint { scope: i + 1, precision: p / k, recall: r / k })
                .collect(),
        );
    }
    Ok(ExperimentReport {
        config: config.session.clone(),
        n_patches: n,
        anr: anr_all,
        categories,
        pr_curves,
        mean_relevant: mean_by_iteration(&all, |q, t| q.counts[t].0 as f64, iters),
        mean_non_relevant: mean_by_iteration(&all, |q, t| q.counts[t].1 as f64, iters),
        skipped,
        queries: results,
    })
}

/// One row of the ANR table: a configuration with one value per
/// dissimilarity kind, for one category (or all queries).
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub category: String,
    pub policy: String,
    pub classifier: String,
    pub criterion: String,
    pub values: BTreeMap<DissimKind, f64>,
}

/// ANR table: a zero-query row and one row per configuration, each for
/// every category and for all queries. Values are ANR at `t_max`.
pub fn sweep_csv(reports: &[ExperimentReport]) -> String {
    let kinds: Vec<DissimKind> = {
        let mut k: Vec<DissimKind> = reports.iter().map(|r| r.config.kind).collect();
        k.sort();
        k.dedup();
        k
    };
    let mut rows: Vec<SweepRow> = Vec::new();
    let mut push = |category: String, policy: String, classifier: String, criterion: String, kind: DissimKind, v: f64| {
        if let Some(row) = rows
            .iter_mut()
            .find(|r| r.category == category && r.policy == policy && r.classifier == classifier && r.criterion == criterion)
        {
            row.values.entry(kind).or_insert(v);
        } else {
            rows.push(SweepRow { category, policy, classifier, criterion, values: BTreeMap::from([(kind, v)]) });
        }
    };
    for r in reports {
        let labels: Vec<(String, f64, f64)> = std::iter::once(("all".to_string(), r.zero_query_anr(), r.final_anr()))
            .chain(
                r.categories
                    .iter()
                    .filter(|c| !c.anr.is_empty())
                    .map(|c| (c.name.clone(), c.anr[0], *c.anr.last().unwrap())),
            )
            .collect();
        for (cat, zero, fin) in labels {
            push(cat.clone(), "-".into(), "zero-query".into(), "-".into(), r.config.kind, zero);
            push(
                cat,
                r.config.policy.to_string(),
                r.config.classifier.to_string(),
                r.config.criterion.to_string(),
                r.config.kind,
                fin,
            );
        }
    }
    let mut out = String::from("category,policy,classifier,criterion");
    for k in &kinds {
        out.push_str(&format!(",{k}"));
    }
    out.push('\n');
    for row in rows {
        out.push_str(&format!("{},{},{},{}", row.category, row.policy, row.classifier, row.criterion));
        for k in &kinds {
            match row.values.get(k) {
                Some(v) => out.push_str(&format!(",{v:.6}")),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}
