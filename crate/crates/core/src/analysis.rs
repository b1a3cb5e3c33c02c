//! Method-level analyses: best beam path, self-consistency voting and
//! summary statistics.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostic::{Diagnostic, DiagnosticCode as Code};
use crate::text::collapse_whitespace;
use crate::trace::{NodeKind, ReasoningMethod, ReasoningTrace};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("analysis expects a {expected} trace, got {actual}")]
    WrongMethod {
        expected: ReasoningMethod,
        actual: ReasoningMethod,
    },
    #[error("node `{0}` has no score")]
    MissingScore(String),
    #[error("trace has no root-to-leaf candidate path")]
    NoPaths,
    #[error("trace has no chain answers")]
    NoChainAnswers,
}

/// A root-to-leaf candidate path (question and final answer excluded) and
/// its summed score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathScore {
    pub path: Vec<String>,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteResult {
    pub winner: String,
    pub counts: BTreeMap<String, usize>,
    pub tie: bool,
}

/// Relative tolerance under which two path totals count as tied.
const TIE_EPSILON: f64 = 1e-9;

fn nearly_equal(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_EPSILON * a.abs().max(b.abs()).max(1.0)
}

/// Exhaustively finds the candidate path with the highest total score.
/// Ties go to the path whose node insertion indexes compare lexicographically
/// smallest.
pub fn best_beam_path(trace: &ReasoningTrace) -> Result<PathScore, AnalysisError> {
    if trace.method != ReasoningMethod::BeamSearch {
        return Err(AnalysisError::WrongMethod {
            expected: ReasoningMethod::BeamSearch,
            actual: trace.method,
        });
    }
    let index: HashMap<&str, usize> = trace
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.id.as_str(), i))
        .collect();
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); trace.nodes.len()];
    for e in &trace.edges {
        if let (Some(&f), Some(&t)) = (index.get(e.from.as_str()), index.get(e.to.as_str())) {
            if trace.nodes[t].kind == NodeKind::Candidate && !children[f].contains(&t) {
                children[f].push(t);
            }
        }
    }
    let root = trace
        .nodes
        .iter()
        .position(|n| n.kind == NodeKind::Question)
        .ok_or(AnalysisError::NoPaths)?;

    struct Search<'a> {
        trace: &'a ReasoningTrace,
        children: &'a [Vec<usize>],
        best: Option<(f64, Vec<usize>)>,
        path: Vec<usize>,
        on_path: HashSet<usize>,
    }

    impl Search<'_> {
        fn visit(&mut self, node: usize, total: f64) -> Result<(), AnalysisError> {
            let n = &self.trace.nodes[node];
            let score = n.score.ok_or_else(|| AnalysisError::MissingScore(n.id.clone()))?;
            let total = total + score;
            self.path.push(node);
            self.on_path.insert(node);
            let next: Vec<usize> = self.children[node]
                .iter()
                .copied()
                .filter(|c| !self.on_path.contains(c))
                .collect();
            if next.is_empty() {
                let better = match &self.best {
                    None => true,
                    Some((best, seq)) if nearly_equal(total, *best) => self.path < *seq,
                    Some((best, _)) => total > *best,
                };
                if better {
                    self.best = Some((total, self.path.clone()));
                }
            }
            for c in next {
                self.visit(c, total)?;
            }
            self.on_path.remove(&node);
            self.path.pop();
            Ok(())
        }
    }

    let mut search = Search {
        trace,
        children: &children,
        best: None,
        path: Vec::new(),
        on_path: HashSet::from([root]),
    };
    for &first in &children[root] {
        search.visit(first, 0.0)?;
    }
    let (total, seq) = search.best.ok_or(AnalysisError::NoPaths)?;
    Ok(PathScore {
        path: seq.into_iter().map(|i| trace.nodes[i].id.clone()).collect(),
        total,
    })
}

/// Warning when the trace's declared selected path differs from `best`.
pub fn selection_divergence(trace: &ReasoningTrace, best: &PathScore) -> Option<Diagnostic> {
    let declared: Vec<&str> = trace
        .selected_path
        .as_ref()?
        .iter()
        .filter(|id| {
            trace
                .node(id)
                .is_some_and(|n| n.kind == NodeKind::Candidate)
        })
        .map(String::as_str)
        .collect();
    let computed: Vec<&str> = best.path.iter().map(String::as_str).collect();
    (declared != computed).then(|| {
        Diagnostic::warning(
            Code::DivergentSelection,
            format!(
                "model selected [{}] but the highest-scoring path is [{}] (total {:.4})",
                declared.join(", "),
                computed.join(", "),
                best.total
            ),
        )
    })
}

/// Lowercase, collapse whitespace, trim, drop one trailing period.
pub fn normalize_answer(answer: &str) -> String {
    let collapsed = collapse_whitespace(&answer.to_lowercase());
    match collapsed.strip_suffix('.') {
        Some(s) => s.trim_end().to_string(),
        None => collapsed,
    }
}

/// Plurality vote over the chain answers of a self-consistency trace.
pub fn majority_vote(trace: &ReasoningTrace) -> Result<VoteResult, AnalysisError> {
    if trace.method != ReasoningMethod::SelfConsistency {
        return Err(AnalysisError::WrongMethod {
            expected: ReasoningMethod::SelfConsistency,
            actual: trace.method,
        });
    }
    let mut answers: Vec<(u32, String)> = trace
        .nodes
        .iter()
        .filter(|n| n.kind == NodeKind::Candidate)
        .filter_map(|n| n.chain_index.map(|c| (c, normalize_answer(&n.label))))
        .collect();
    if answers.is_empty() {
        return Err(AnalysisError::NoChainAnswers);
    }
    answers.sort_by_key(|(c, _)| *c);
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for (_, a) in &answers {
        *counts.entry(a.clone()).or_default() += 1;
    }
    let top = counts.values().copied().max().unwrap_or(0);
    let tie = counts.values().filter(|&&c| c == top).count() > 1;
    let winner = answers
        .iter()
        .find(|(_, a)| counts[a] == top)
        .map(|(_, a)| a.clone())
        .expect("some answer has the top count");
    Ok(VoteResult {
        winner,
        counts,
        tie,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStats {
    pub node_count: usize,
    pub edge_count: usize,
    /// Longest path length (in edges) from the question.
    pub depth: usize,
    /// Node count per distance from the question.
    pub level_widths: Vec<usize>,
    pub max_width: usize,
    pub kind_counts: BTreeMap<NodeKind, usize>,
}

pub fn trace_stats(trace: &ReasoningTrace) -> TraceStats {
    let mut kind_counts = BTreeMap::new();
    for n in &trace.nodes {
        *kind_counts.entry(n.kind).or_insert(0) += 1;
    }
    let mut level_widths = Vec::new();
    let mut depth = 0;
    if let Some(q) = trace.question() {
        let mut dist: HashMap<&str, usize> = HashMap::from([(q.id.as_str(), 0)]);
        let mut queue = VecDeque::from([q.id.as_str()]);
        while let Some(id) = queue.pop_front() {
            let d = dist[id];
            for c in trace.children(id) {
                if !dist.contains_key(c) {
                    dist.insert(c, d + 1);
                    queue.push_back(c);
                }
            }
        }
        for &d in dist.values() {
            if level_widths.len() <= d {
                level_widths.resize(d + 1, 0);
            }
            level_widths[d] += 1;
        }
        depth = match trace.topological_order() {
            Ok(order) => {
                let mut longest: HashMap<&str, usize> = HashMap::new();
                longest.insert(q.id.as_str(), 0);
                for id in &order {
                    let Some(&d) = longest.get(id.as_str()) else {
                        continue;
                    };
                    for c in trace.children(id) {
                        let e = longest.entry(c).or_insert(0);
                        *e = (*e).max(d + 1);
                    }
                }
                longest.values().copied().max().unwrap_or(0)
            }
            Err(_) => level_widths.len().saturating_sub(1),
        };
    }
    TraceStats {
        node_count: trace.nodes.len(),
        edge_count: trace.edges.len(),
        depth,
        max_width: level_widths.iter().copied().max().unwrap_or(0),
        level_widths,
        kind_counts,
    }
}

/// Method-specific analysis attached to a pipeline result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Analysis {
    BeamPath(PathScore),
    Vote(VoteResult),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analyzed {
    pub trace: ReasoningTrace,
    pub analysis: Option<Analysis>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Runs the analysis that applies to the trace's method. For beam search the
/// computed best path replaces the declared one for highlighting.
pub fn analyze(trace: ReasoningTrace) -> Analyzed {
    let mut diagnostics = Vec::new();
    match trace.method {
        ReasoningMethod::BeamSearch => match best_beam_path(&trace) {
            Ok(best) => {
                diagnostics.extend(selection_divergence(&trace, &best));
                let trace = trace.with_selected_path(&best.path).unwrap_or(trace);
                Analyzed {
                    trace,
                    analysis: Some(Analysis::BeamPath(best)),
                    diagnostics,
                }
            }
            Err(e) => skipped(trace, e),
        },
        ReasoningMethod::SelfConsistency => match majority_vote(&trace) {
            Ok(vote) => {
                if let Some(f) = trace.final_answer() {
                    if normalize_answer(&f.label) != vote.winner {
                        diagnostics.push(
                            Diagnostic::warning(
                                Code::VoteDisagreement,
                                format!(
                                    "final answer `{}` differs from the majority answer `{}`",
                                    f.label, vote.winner
                                ),
                            )
                            .with_target(&f.id),
                        );
                    }
                }
                Analyzed {
                    trace,
                    analysis: Some(Analysis::Vote(vote)),
                    diagnostics,
                }
            }
            Err(e) => skipped(trace, e),
        },
        _ => Analyzed {
            trace,
            analysis: None,
            diagnostics,
        },
    }
}

fn skipped(trace: ReasoningTrace, e: AnalysisError) -> Analyzed {
    Analyzed {
        trace,
        analysis: None,
        diagnostics: vec![Diagnostic::warning(
            Code::AnalysisSkipped,
            format!("analysis skipped: {e}"),
        )],
    }
}
