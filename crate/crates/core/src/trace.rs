//! The canonical reasoning graph shared by the parser, analysis, emitter,
//! service and CLI.
//!
//! A [`ReasoningTrace`] is a small DAG of typed nodes rooted at exactly one
//! question node. Traces are built once (by the parser, the synthetic
//! generator, or deserialization) and never mutated afterwards; operations
//! that "change" a trace return a new one.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostic::{Diagnostic, DiagnosticCode as Code};

/// The six supported reasoning methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReasoningMethod {
    ChainOfThoughts,
    SelfRefine,
    LeastToMost,
    SelfConsistency,
    TreeOfThoughts,
    BeamSearch,
}

impl ReasoningMethod {
    pub const ALL: [ReasoningMethod; 6] = [
        ReasoningMethod::ChainOfThoughts,
        ReasoningMethod::SelfRefine,
        ReasoningMethod::LeastToMost,
        ReasoningMethod::SelfConsistency,
        ReasoningMethod::TreeOfThoughts,
        ReasoningMethod::BeamSearch,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ReasoningMethod::ChainOfThoughts => "chain_of_thoughts",
            ReasoningMethod::SelfRefine => "self_refine",
            ReasoningMethod::LeastToMost => "least_to_most",
            ReasoningMethod::SelfConsistency => "self_consistency",
            ReasoningMethod::TreeOfThoughts => "tree_of_thoughts",
            ReasoningMethod::BeamSearch => "beam_search",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            ReasoningMethod::ChainOfThoughts => "Chain-of-Thoughts",
            ReasoningMethod::SelfRefine => "Self-refine",
            ReasoningMethod::LeastToMost => "Least-to-Most",
            ReasoningMethod::SelfConsistency => "Self-consistency",
            ReasoningMethod::TreeOfThoughts => "Tree-of-Thoughts",
            ReasoningMethod::BeamSearch => "Beam Search",
        }
    }

    /// Tree-shaped methods carry levels (and possibly scores) on their nodes.
    pub fn is_tree(self) -> bool {
        matches!(
            self,
            ReasoningMethod::TreeOfThoughts | ReasoningMethod::BeamSearch
        )
    }

    /// Lenient name matching: case-insensitive, with hyphens and runs of
    /// whitespace treated as underscores ("Beam-Search", "beam search").
    pub fn from_lenient(name: &str) -> Option<ReasoningMethod> {
        let mut normalized = String::with_capacity(name.len());
        let mut pending_sep = false;
        for ch in name.trim().chars() {
            if ch == '-' || ch == '_' || ch.is_whitespace() {
                pending_sep = true;
                continue;
            }
            if pending_sep && !normalized.is_empty() {
                normalized.push('_');
            }
            pending_sep = false;
            normalized.extend(ch.to_lowercase());
        }
        normalized.parse().ok()
    }
}

impl fmt::Display for ReasoningMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown reasoning method `{0}`")]
pub struct UnknownMethod(pub String);

impl FromStr for ReasoningMethod {
    type Err = UnknownMethod;

    /// Strict: only the six canonical snake_case names are accepted.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ReasoningMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| UnknownMethod(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Question,
    Step,
    Attempt,
    Reflection,
    Improvement,
    SubQuestion,
    SubAnswer,
    Candidate,
    FinalAnswer,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Question => "question",
            NodeKind::Step => "step",
            NodeKind::Attempt => "attempt",
            NodeKind::Reflection => "reflection",
            NodeKind::Improvement => "improvement",
            NodeKind::SubQuestion => "sub_question",
            NodeKind::SubAnswer => "sub_answer",
            NodeKind::Candidate => "candidate",
            NodeKind::FinalAnswer => "final_answer",
        }
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceNode {
    pub id: String,
    pub kind: NodeKind,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain_index: Option<u32>,
}

impl TraceNode {
    pub fn new(id: impl Into<String>, kind: NodeKind, label: impl Into<String>) -> Self {
        TraceNode {
            id: id.into(),
            kind,
            label: label.into(),
            score: None,
            level: None,
            chain_index: None,
        }
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = Some(score);
        self
    }

    pub fn with_level(mut self, level: u32) -> Self {
        self.level = Some(level);
        self
    }

    pub fn with_chain(mut self, chain_index: u32) -> Self {
        self.chain_index = Some(chain_index);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TraceEdge {
    pub from: String,
    pub to: String,
    #[serde(default)]
    pub on_selected_path: bool,
}

impl TraceEdge {
    pub fn new(from: impl Into<String>, to: impl Into<String>) -> Self {
        TraceEdge {
            from: from.into(),
            to: to.into(),
            on_selected_path: false,
        }
    }
}

/// Canonical directed graph of one reasoning run.
///
/// `PartialEq` is structural: node ids are ignored, nodes are compared as a
/// multiset by content and edges by the content of their endpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReasoningTrace {
    pub method: ReasoningMethod,
    pub nodes: Vec<TraceNode>,
    pub edges: Vec<TraceEdge>,
    #[serde(default)]
    pub selected_path: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("trace contains a cycle through node `{node}`")]
pub struct CycleError {
    pub node: String,
}

impl ReasoningTrace {
    pub fn new(method: ReasoningMethod) -> Self {
        ReasoningTrace {
            method,
            nodes: Vec::new(),
            edges: Vec::new(),
            selected_path: None,
        }
    }

    pub fn node(&self, id: &str) -> Option<&TraceNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn question(&self) -> Option<&TraceNode> {
        self.nodes.iter().find(|n| n.kind == NodeKind::Question)
    }

    pub fn final_answer(&self) -> Option<&TraceNode> {
        self.nodes.iter().find(|n| n.kind == NodeKind::FinalAnswer)
    }

    /// Outgoing neighbours of `id`, in edge insertion order.
    pub fn children<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.edges
            .iter()
            .filter(move |e| e.from == id)
            .map(|e| e.to.as_str())
    }

    /// Nodes in a deterministic topological order. Among ready nodes, the one
    /// inserted earliest wins.
    pub fn topological_order(&self) -> Result<Vec<String>, CycleError> {
        let index: HashMap<&str, usize> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.as_str(), i))
            .collect();
        let mut indegree = vec![0usize; self.nodes.len()];
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); self.nodes.len()];
        let mut seen = HashSet::new();
        for e in &self.edges {
            let (Some(&f), Some(&t)) = (index.get(e.from.as_str()), index.get(e.to.as_str()))
            else {
                continue;
            };
            if !seen.insert((f, t)) {
                continue;
            }
            out[f].push(t);
            indegree[t] += 1;
        }
        let mut ready: BTreeSet<usize> = (0..self.nodes.len())
            .filter(|&i| indegree[i] == 0)
            .collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(i) = ready.pop_first() {
            order.push(self.nodes[i].id.clone());
            for &t in &out[i] {
                indegree[t] -= 1;
                if indegree[t] == 0 {
                    ready.insert(t);
                }
            }
        }
        if order.len() < self.nodes.len() {
            let stuck = (0..self.nodes.len())
                .find(|&i| indegree[i] > 0)
                .expect("a node with positive indegree remains");
            return Err(CycleError {
                node: self.nodes[stuck].id.clone(),
            });
        }
        Ok(order)
    }

    /// Returns a copy with `selected_path` set to question → `middle` → final
    /// answer and edge flags updated to match. If the final answer currently
    /// hangs off a different node, its incoming edge is moved to the last
    /// node of `middle`.
    ///
    /// Returns `None` when the ids in `middle` do not form a connected path
    /// starting at a child of the question.
    pub fn with_selected_path(&self, middle: &[String]) -> Option<ReasoningTrace> {
        let q = self.question()?.id.clone();
        let f = self.final_answer()?.id.clone();
        let mut path = Vec::with_capacity(middle.len() + 2);
        path.push(q);
        path.extend(middle.iter().cloned());
        for pair in path.windows(2) {
            if !self
                .edges
                .iter()
                .any(|e| e.from == pair[0] && e.to == pair[1])
            {
                return None;
            }
        }
        let tail = path.last().cloned()?;
        let mut out = self.clone();
        if !out.edges.iter().any(|e| e.from == tail && e.to == f) {
            out.edges.retain(|e| e.to != f);
            out.edges.push(TraceEdge::new(tail, f.clone()));
        }
        path.push(f);
        let on_path: HashSet<(&str, &str)> = path
            .windows(2)
            .map(|w| (w[0].as_str(), w[1].as_str()))
            .collect();
        for e in &mut out.edges {
            e.on_selected_path = on_path.contains(&(e.from.as_str(), e.to.as_str()));
        }
        out.selected_path = Some(path);
        Some(out)
    }

    fn canonical(&self) -> CanonicalTrace {
        let keys: HashMap<&str, NodeKey> = self
            .nodes
            .iter()
            .map(|n| (n.id.as_str(), NodeKey::of(n)))
            .collect();
        let mut nodes: Vec<NodeKey> = self.nodes.iter().map(NodeKey::of).collect();
        nodes.sort();
        let mut edges: Vec<(Option<NodeKey>, Option<NodeKey>, bool)> = self
            .edges
            .iter()
            .map(|e| {
                (
                    keys.get(e.from.as_str()).cloned(),
                    keys.get(e.to.as_str()).cloned(),
                    e.on_selected_path,
                )
            })
            .collect();
        edges.sort();
        let selected = self.selected_path.as_ref().map(|p| {
            p.iter()
                .map(|id| keys.get(id.as_str()).cloned())
                .collect::<Vec<_>>()
        });
        CanonicalTrace {
            method: self.method,
            nodes,
            edges,
            selected,
        }
    }
}

impl PartialEq for ReasoningTrace {
    fn eq(&self, other: &Self) -> bool {
        self.canonical() == other.canonical()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct NodeKey {
    kind: NodeKind,
    label: String,
    score: Option<OrdF64>,
    level: Option<u32>,
    chain_index: Option<u32>,
}

impl NodeKey {
    fn of(n: &TraceNode) -> Self {
        NodeKey {
            kind: n.kind,
            label: n.label.clone(),
            score: n.score.map(OrdF64),
            level: n.level,
            chain_index: n.chain_index,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct OrdF64(f64);

impl PartialEq for OrdF64 {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for OrdF64 {}
impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[derive(Debug, PartialEq)]
struct CanonicalTrace {
    method: ReasoningMethod,
    nodes: Vec<NodeKey>,
    edges: Vec<(Option<NodeKey>, Option<NodeKey>, bool)>,
    selected: Option<Vec<Option<NodeKey>>>,
}

/// Checks every structural invariant of a trace. An empty result means the
/// trace is valid; cycles and broken references are errors, inconsistent
/// beam branching is a warning.
pub fn validate_trace(trace: &ReasoningTrace) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let tree = trace.method.is_tree();

    let mut ids: HashSet<&str> = HashSet::new();
    for n in &trace.nodes {
        if !ids.insert(n.id.as_str()) {
            diags.push(
                Diagnostic::error(Code::DuplicateNodeId, format!("node id `{}` repeats", n.id))
                    .with_target(&n.id),
            );
        }
        if n.label.trim().is_empty() {
            diags.push(
                Diagnostic::error(Code::EmptyLabel, "node label is empty").with_target(&n.id),
            );
        }
        if let Some(s) = n.score {
            if !tree {
                diags.push(
                    Diagnostic::error(
                        Code::UnexpectedScore,
                        format!("{} traces do not carry scores", trace.method),
                    )
                    .with_target(&n.id),
                );
            } else if !(0.0..=1.0).contains(&s) {
                diags.push(
                    Diagnostic::error(Code::ScoreOutOfRange, format!("score {s} outside [0, 1]"))
                        .with_target(&n.id),
                );
            }
        }
        if tree && n.level.is_none() {
            diags.push(
                Diagnostic::error(Code::MissingLevel, "tree node has no level")
                    .with_target(&n.id),
            );
        }
        if n.chain_index.is_some() && trace.method != ReasoningMethod::SelfConsistency {
            diags.push(
                Diagnostic::error(
                    Code::UnexpectedChainIndex,
                    "chain index is only meaningful for self_consistency",
                )
                .with_target(&n.id),
            );
        }
        if trace.method == ReasoningMethod::BeamSearch
            && n.kind == NodeKind::Candidate
            && n.score.is_none()
        {
            diags.push(
                Diagnostic::warning(Code::MissingScore, "beam candidate has no score")
                    .with_target(&n.id),
            );
        }
    }

    let questions: Vec<&TraceNode> = trace
        .nodes
        .iter()
        .filter(|n| n.kind == NodeKind::Question)
        .collect();
    match questions.len() {
        0 => diags.push(Diagnostic::error(
            Code::MissingQuestion,
            "trace has no question node",
        )),
        1 => {}
        k => diags.push(Diagnostic::error(
            Code::MultipleQuestions,
            format!("trace has {k} question nodes"),
        )),
    }

    let kinds: HashMap<&str, NodeKind> = trace
        .nodes
        .iter()
        .map(|n| (n.id.as_str(), n.kind))
        .collect();
    let mut edge_set: HashSet<(&str, &str)> = HashSet::new();
    for e in &trace.edges {
        let label = format!("{}->{}", e.from, e.to);
        if e.from == e.to {
            diags.push(
                Diagnostic::error(Code::SelfLoop, "edge points at its own source")
                    .with_target(&label),
            );
            continue;
        }
        let from_kind = kinds.get(e.from.as_str());
        let to_kind = kinds.get(e.to.as_str());
        if from_kind.is_none() || to_kind.is_none() {
            diags.push(
                Diagnostic::error(Code::DanglingEdge, "edge refers to an unknown node")
                    .with_target(&label),
            );
            continue;
        }
        if !edge_set.insert((e.from.as_str(), e.to.as_str())) {
            diags.push(
                Diagnostic::error(Code::DuplicateEdge, "edge appears more than once")
                    .with_target(&label),
            );
        }
        if to_kind == Some(&NodeKind::Question) {
            diags.push(
                Diagnostic::error(Code::QuestionHasIncoming, "question node has an incoming edge")
                    .with_target(&label),
            );
        }
        if from_kind == Some(&NodeKind::FinalAnswer) {
            diags.push(
                Diagnostic::error(Code::FinalHasOutgoing, "final answer has an outgoing edge")
                    .with_target(&label),
            );
        }
    }

    if let Err(cycle) = trace.topological_order() {
        diags.push(
            Diagnostic::error(Code::Cycle, "trace graph contains a cycle").with_target(cycle.node),
        );
    }

    if let [q] = questions.as_slice() {
        let reached = reachable_from(trace, &q.id);
        for n in &trace.nodes {
            if !reached.contains(n.id.as_str()) {
                diags.push(
                    Diagnostic::error(Code::Unreachable, "node is not reachable from the question")
                        .with_target(&n.id),
                );
            }
        }
    }

    if trace.method == ReasoningMethod::BeamSearch {
        diags.extend(branching_width_warnings(trace));
    }

    diags.extend(selected_path_diagnostics(trace, &edge_set));
    diags
}

fn reachable_from<'a>(trace: &'a ReasoningTrace, root: &'a str) -> HashSet<&'a str> {
    let mut seen = HashSet::from([root]);
    let mut stack = vec![root];
    while let Some(id) = stack.pop() {
        for child in trace.children(id) {
            if seen.insert(child) {
                stack.push(child);
            }
        }
    }
    seen
}

/// For every level, all parents that were expanded should have the same
/// number of candidate children.
fn branching_width_warnings(trace: &ReasoningTrace) -> Vec<Diagnostic> {
    let by_id: HashMap<&str, &TraceNode> =
        trace.nodes.iter().map(|n| (n.id.as_str(), n)).collect();
    // parent level -> (parent id -> candidate child count), in insertion order
    let mut per_level: BTreeMap<u32, Vec<(&str, usize)>> = BTreeMap::new();
    for n in &trace.nodes {
        if n.kind == NodeKind::FinalAnswer {
            continue;
        }
        let count = trace
            .children(&n.id)
            .filter(|c| by_id.get(c).is_some_and(|c| c.kind == NodeKind::Candidate))
            .count();
        if count > 0 {
            per_level
                .entry(n.level.unwrap_or(0))
                .or_default()
                .push((n.id.as_str(), count));
        }
    }
    let mut out = Vec::new();
    for (level, parents) in per_level {
        let expected = parents[0].1;
        for &(id, count) in &parents[1..] {
            if count != expected {
                out.push(
                    Diagnostic::warning(
                        Code::BranchingWidth,
                        format!(
                            "level {} branching is {count} under this node but {expected} elsewhere",
                            level + 1
                        ),
                    )
                    .with_target(id),
                );
            }
        }
    }
    out
}

fn selected_path_diagnostics(
    trace: &ReasoningTrace,
    edges: &HashSet<(&str, &str)>,
) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut on_path: HashSet<(&str, &str)> = HashSet::new();
    if let Some(path) = &trace.selected_path {
        let kind_of = |id: &str| trace.node(id).map(|n| n.kind);
        let starts_ok = path
            .first()
            .is_some_and(|id| kind_of(id) == Some(NodeKind::Question));
        let ends_ok = path
            .last()
            .is_some_and(|id| kind_of(id) == Some(NodeKind::FinalAnswer));
        if !starts_ok || !ends_ok {
            out.push(Diagnostic::error(
                Code::InvalidSelectedPath,
                "selected path must run from the question to the final answer",
            ));
        }
        for w in path.windows(2) {
            if !edges.contains(&(w[0].as_str(), w[1].as_str())) {
                out.push(
                    Diagnostic::error(
                        Code::InvalidSelectedPath,
                        "consecutive selected-path nodes are not joined by an edge",
                    )
                    .with_target(format!("{}->{}", w[0], w[1])),
                );
            }
            on_path.insert((w[0].as_str(), w[1].as_str()));
        }
    }
    for e in &trace.edges {
        let expected = on_path.contains(&(e.from.as_str(), e.to.as_str()));
        if e.on_selected_path != expected {
            out.push(
                Diagnostic::error(
                    Code::SelectedPathMismatch,
                    "edge selection flag disagrees with the selected path",
                )
                .with_target(format!("{}->{}", e.from, e.to)),
            );
        }
    }
    out
}
