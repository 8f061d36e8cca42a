//! Scoring of an extracted graph against generator ground truth.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geomcon::ConstraintKind;
use crate::hmsr::{CoordinationStrategy, HmsrGraph};
use crate::synthgen::GroundTruth;

/// Predicted edge reduced to what scoring looks at.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictedEdge {
    pub master: String,
    pub slave: String,
    pub kinds: Vec<ConstraintKind>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairResolution {
    pub master: String,
    pub slave: String,
    pub correct: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub task: String,
    pub n_true: usize,
    pub n_predicted: usize,
    pub true_positives: usize,
    /// 1.0 when nothing is predicted.
    pub precision: f64,
    /// 1.0 when the truth has no edges.
    pub recall: f64,
    /// Matched edges with a constraint expectation.
    pub kind_total: usize,
    /// Matched edges whose highest-priority kind equals the expected one.
    pub kind_correct: usize,
    pub coordination_expected: CoordinationStrategy,
    pub coordination_predicted: Option<CoordinationStrategy>,
    pub coordination_match: bool,
    pub resolutions: Vec<PairResolution>,
    /// Every expected pair resolved in the expected direction.
    pub master_correct: bool,
    pub missing: Vec<(String, String)>,
    pub spurious: Vec<(String, String)>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

fn top_kind(kinds: &[ConstraintKind]) -> Option<ConstraintKind> {
    kinds.iter().copied().min_by_key(|k| k.priority())
}

/// Scores predicted edges against the truth. Edges match on the ordered
/// (master, slave) pair; duplicate predictions count once.
pub fn score(
    predicted: &[PredictedEdge],
    coordination: Option<CoordinationStrategy>,
    truth: &GroundTruth,
) -> Evaluation {
    let pred_pairs: BTreeSet<(String, String)> =
        predicted.iter().map(|e| (e.master.clone(), e.slave.clone())).collect();
    let true_pairs: BTreeSet<(String, String)> =
        truth.edges.iter().map(|e| (e.master.clone(), e.slave.clone())).collect();
    let true_positives = pred_pairs.intersection(&true_pairs).count();
    let (mut kind_total, mut kind_correct) = (0, 0);
    for e in &truth.edges {
        let Some(expected) = e.kinds.first() else { continue };
        let Some(p) = predicted.iter().find(|p| p.master == e.master && p.slave == e.slave) else { continue };
        kind_total += 1;
        if top_kind(&p.kinds) == Some(*expected) {
            kind_correct += 1;
        }
    }
    let resolutions: Vec<PairResolution> = truth
        .resolved_pairs
        .iter()
        .map(|(m, s)| PairResolution {
            master: m.clone(),
            slave: s.clone(),
            correct: pred_pairs.contains(&(m.clone(), s.clone())) && !pred_pairs.contains(&(s.clone(), m.clone())),
        })
        .collect();
    Evaluation {
        task: truth.task.as_str().to_string(),
        n_true: true_pairs.len(),
        n_predicted: pred_pairs.len(),
        true_positives,
        precision: ratio(true_positives, pred_pairs.len()),
        recall: ratio(true_positives, true_pairs.len()),
        kind_total,
        kind_correct,
        coordination_expected: truth.coordination,
        coordination_predicted: coordination,
        coordination_match: coordination == Some(truth.coordination),
        master_correct: resolutions.iter().all(|r| r.correct),
        resolutions,
        missing: true_pairs.difference(&pred_pairs).cloned().collect(),
        spurious: pred_pairs.difference(&true_pairs).cloned().collect(),
    }
}

/// Scores a graph; the graph must come from the truth's task when it
/// records one.
pub fn evaluate(graph: &HmsrGraph, truth: &GroundTruth) -> Result<Evaluation> {
    if let Some(meta) = &graph.meta {
        if meta.task_name != truth.task.as_str() {
            return Err(Error::Schema(format!(
                "graph task {} does not match ground truth task {}",
                meta.task_name,
                truth.task.as_str()
            )));
        }
    }
    let predicted: Vec<PredictedEdge> = graph
        .edges
        .iter()
        .map(|e| PredictedEdge { master: e.master.clone(), slave: e.slave.clone(), kinds: e.kinds() })
        .collect();
    Ok(score(&predicted, graph.coordination.as_ref().map(|c| c.value), truth))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n_runs: usize,
    /// Micro-averaged over all edges of all runs.
    pub precision: f64,
    pub recall: f64,
    pub kind_accuracy: f64,
    pub coordination_accuracy: f64,
    pub master_accuracy: f64,
}

pub fn aggregate(runs: &[Evaluation]) -> Aggregate {
    let sum = |f: fn(&Evaluation) -> usize| runs.iter().map(f).sum::<usize>();
    let count = |f: fn(&Evaluation) -> bool| runs.iter().filter(|e| f(e)).count();
    let tp = sum(|e| e.true_positives);
    Aggregate {
        n_runs: runs.len(),
        precision: ratio(tp, sum(|e| e.n_predicted)),
        recall: ratio(tp, sum(|e| e.n_true)),
        kind_accuracy: ratio(sum(|e| e.kind_correct), sum(|e| e.kind_total)),
        coordination_accuracy: ratio(count(|e| e.coordination_match), runs.len()),
        master_accuracy: ratio(count(|e| e.master_correct), runs.len()),
    }
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

/// Aligned table with one row per labelled run plus the aggregate.
pub fn table(rows: &[(String, Evaluation)]) -> String {
    let w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(3).max(3);
    let mut out = String::new();
    let _ = writeln!(out, "{:<w$}  {:>9}  {:>6}  {:>7}  coord  master", "run", "precision", "recall", "kinds");
    for (label, e) in rows {
        let _ = writeln!(
            out,
            "{:<w$}  {:>9.3}  {:>6.3}  {:>7}  {:<5}  {}",
            label,
            e.precision,
            e.recall,
            format!("{}/{}", e.kind_correct, e.kind_total),
            yes_no(e.coordination_match),
            yes_no(e.master_correct),
        );
    }
    if rows.len() > 1 {
        let runs: Vec<Evaluation> = rows.iter().map(|(_, e)| e.clone()).collect();
        let a = aggregate(&runs);
        let _ = writeln!(
            out,
            "{:<w$}  {:>9.3}  {:>6.3}  {:>7.3}  {:<5.3}  {:.3}",
            "all", a.precision, a.recall, a.kind_accuracy, a.coordination_accuracy, a.master_accuracy
        );
    }
    for (label, e) in rows {
        for (m, s) in &e.missing {
            let _ = writeln!(out, "{label}: missing {m} -> {s}");
        }
        for (m, s) in &e.spurious {
            let _ = writeln!(out, "{label}: spurious {m} -> {s}");
        }
    }
    out
}
