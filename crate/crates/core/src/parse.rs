//! Turns raw model text into a [`ReasoningTrace`].
//!
//! Parsing is two-staged: [`extract_elements`] finds grammar tags in the
//! text, [`assemble_trace`] lays them out as a graph according to the
//! method's structure. Both stages recover from malformed input by emitting
//! diagnostics; the only hard failure is finding no grammar elements at all.

use std::collections::HashMap;

use thiserror::Error;

use crate::analysis;
use crate::diagnostic::{Diagnostic, DiagnosticCode as Code, Span};
use crate::grammar::grammar_for;
use crate::scan::{scan, Element, Scan};
use crate::text::{canonical_label, collapse_whitespace};
use crate::trace::{validate_trace, NodeKind, ReasoningMethod, ReasoningTrace, TraceEdge, TraceNode};

/// Label given to the synthesized final node when the model wrote none.
pub const NO_FINAL_ANSWER: &str = "(no final answer)";
/// Label used for the question node when no question text is known.
pub const UNKNOWN_QUESTION: &str = "(question)";

/// The unmodified provider response plus what it is expected to contain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawModelOutput {
    pub text: String,
    pub method: ReasoningMethod,
    pub question: String,
}

impl RawModelOutput {
    pub fn new(text: impl Into<String>, method: ReasoningMethod, question: impl Into<String>) -> Self {
        RawModelOutput {
            text: text.into(),
            method,
            question: question.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    /// The text contains no element of the method's grammar.
    #[error("no reasoning elements found in model output")]
    NoElements { diagnostics: Vec<Diagnostic> },
}

impl ParseError {
    /// All diagnostics, ending with the `no_elements` error itself.
    pub fn diagnostics(&self) -> Vec<Diagnostic> {
        let ParseError::NoElements { diagnostics } = self;
        let mut all = diagnostics.clone();
        all.push(no_elements_diagnostic());
        all
    }
}

pub fn no_elements_diagnostic() -> Diagnostic {
    Diagnostic::error(
        Code::NoElements,
        "no reasoning elements found; the model output does not follow the requested format",
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parsed {
    pub trace: ReasoningTrace,
    pub diagnostics: Vec<Diagnostic>,
}

/// Finds the elements of `raw.method`'s grammar in the raw text.
pub fn extract_elements(raw: &RawModelOutput) -> Scan {
    scan(&raw.text, &grammar_for(raw.method).vocabulary())
}

/// Parses a complete model response. Never panics; every input yields either
/// a trace (with diagnostics) or [`ParseError::NoElements`].
pub fn parse(raw: &RawModelOutput) -> Result<Parsed, ParseError> {
    let scanned = extract_elements(raw);
    match assemble_trace(&scanned.elements, raw) {
        Ok(mut parsed) => {
            let mut diagnostics = scanned.diagnostics;
            diagnostics.append(&mut parsed.diagnostics);
            parsed.diagnostics = diagnostics;
            Ok(parsed)
        }
        Err(ParseError::NoElements { .. }) => Err(ParseError::NoElements {
            diagnostics: scanned.diagnostics,
        }),
    }
}

/// Lays out extracted elements as a trace according to the method's shape,
/// then validates the result.
pub fn assemble_trace(elements: &[Element], raw: &RawModelOutput) -> Result<Parsed, ParseError> {
    if elements.is_empty() {
        return Err(ParseError::NoElements {
            diagnostics: Vec::new(),
        });
    }
    let mut b = Builder::new(raw);
    match raw.method {
        ReasoningMethod::ChainOfThoughts
        | ReasoningMethod::SelfRefine
        | ReasoningMethod::LeastToMost => b.sequential(elements),
        ReasoningMethod::SelfConsistency => b.self_consistency(elements),
        ReasoningMethod::TreeOfThoughts | ReasoningMethod::BeamSearch => b.tree(elements),
    }
    let trace = b.trace;
    let mut diagnostics = b.diags;
    diagnostics.extend(validate_trace(&trace));
    Ok(Parsed { trace, diagnostics })
}

struct Builder {
    trace: ReasoningTrace,
    diags: Vec<Diagnostic>,
    question: String,
}

impl Builder {
    fn new(raw: &RawModelOutput) -> Self {
        let mut trace = ReasoningTrace::new(raw.method);
        let mut label = collapse_whitespace(&raw.question);
        if label.is_empty() {
            label = UNKNOWN_QUESTION.to_string();
        }
        let mut q = TraceNode::new("n0", NodeKind::Question, label);
        if raw.method.is_tree() {
            q.level = Some(0);
        }
        trace.nodes.push(q);
        Builder {
            trace,
            diags: Vec::new(),
            question: "n0".to_string(),
        }
    }

    fn push(&mut self, node: TraceNode) -> String {
        let id = node.id.clone();
        self.trace.nodes.push(node);
        id
    }

    fn next_id(&self) -> String {
        format!("n{}", self.trace.nodes.len())
    }

    fn edge(&mut self, from: &str, to: &str) {
        self.trace.edges.push(TraceEdge::new(from, to));
    }

    /// Canonical label of a leaf element, or `None` (with a warning) if it
    /// is empty.
    fn label_of(&mut self, e: &Element) -> Option<String> {
        let label = canonical_label(&e.inner_text);
        if label.is_empty() {
            self.diags.push(
                Diagnostic::warning(Code::EmptyElement, format!("empty <{}> ignored", e.tag))
                    .with_span(e.span),
            );
            return None;
        }
        Some(label)
    }

    fn misplaced(&mut self, e: &Element) {
        self.diags.push(
            Diagnostic::warning(
                Code::MisplacedElement,
                format!("<{}> is not allowed here; ignored", e.tag),
            )
            .with_span(e.span),
        );
    }

    /// Records the first `<final_answer>` and warns about the rest.
    fn take_final<'e>(&mut self, slot: &mut Option<&'e Element>, e: &'e Element) {
        if slot.is_some() {
            self.diags.push(
                Diagnostic::warning(
                    Code::DuplicateFinalAnswer,
                    "additional <final_answer> ignored",
                )
                .with_span(e.span),
            );
        } else {
            *slot = Some(e);
        }
    }

    /// Adds the final node and the given incoming edges. A missing or empty
    /// final answer is synthesized.
    fn finish(&mut self, final_el: Option<&Element>, level: Option<u32>, from: &[String]) -> String {
        let label = match final_el {
            Some(e) => self.label_of(e),
            None => None,
        };
        let label = label.unwrap_or_else(|| {
            self.diags.push(Diagnostic::warning(
                Code::MissingFinalAnswer,
                "no <final_answer> found; a placeholder final node was added",
            ));
            NO_FINAL_ANSWER.to_string()
        });
        let mut node = TraceNode::new(self.next_id(), NodeKind::FinalAnswer, label);
        node.level = level;
        let id = self.push(node);
        for f in from {
            self.edge(f, &id);
        }
        id
    }

    fn sequential(&mut self, elements: &[Element]) {
        let grammar = grammar_for(self.trace.method);
        let mut prev = self.question.clone();
        let mut prev_kind = NodeKind::Question;
        let mut final_el = None;
        for e in elements {
            if e.tag == "final_answer" {
                self.take_final(&mut final_el, e);
                continue;
            }
            let Some(kind) = grammar.tag(e.tag).and_then(|t| t.kind) else {
                self.misplaced(e);
                continue;
            };
            let Some(label) = self.label_of(e) else {
                continue;
            };
            if !sequence_allows(self.trace.method, prev_kind, kind) {
                self.diags.push(
                    Diagnostic::warning(
                        Code::UnexpectedOrder,
                        format!("<{}> does not usually follow a {prev_kind} node", e.tag),
                    )
                    .with_span(e.span),
                );
            }
            let id = self.push(TraceNode::new(self.next_id(), kind, label));
            self.edge(&prev, &id);
            prev = id;
            prev_kind = kind;
        }
        self.finish(final_el, None, &[prev]);
    }

    fn self_consistency(&mut self, elements: &[Element]) {
        let mut final_el = None;
        let mut tails = Vec::new();
        let mut used_indexes: Vec<u32> = Vec::new();
        for e in elements {
            match e.tag {
                "final_answer" => self.take_final(&mut final_el, e),
                "chain" => {
                    let index = self.chain_index(e, &used_indexes);
                    if used_indexes.contains(&index) {
                        self.diags.push(
                            Diagnostic::warning(
                                Code::DuplicateId,
                                format!("chain index {index} is used more than once"),
                            )
                            .with_span(e.span),
                        );
                    }
                    used_indexes.push(index);
                    if let Some(tail) = self.chain(e, index) {
                        tails.push(tail);
                    }
                }
                _ => self.misplaced(e),
            }
        }
        if tails.is_empty() {
            tails.push(self.question.clone());
        }
        self.finish(final_el, None, &tails);
    }

    fn chain_index(&mut self, e: &Element, used: &[u32]) -> u32 {
        let fallback = used.iter().max().map_or(0, |m| m + 1);
        match e.attr("index") {
            Some(v) => match v.trim().parse::<u32>() {
                Ok(i) => i,
                Err(_) => {
                    self.diags.push(
                        Diagnostic::warning(
                            Code::MissingAttribute,
                            format!("chain index `{v}` is not a non-negative integer; using {fallback}"),
                        )
                        .with_span(e.span),
                    );
                    fallback
                }
            },
            None => {
                self.diags.push(
                    Diagnostic::warning(
                        Code::MissingAttribute,
                        format!("<chain> has no index attribute; using {fallback}"),
                    )
                    .with_span(e.span),
                );
                fallback
            }
        }
    }

    /// Builds one chain and returns the id of its last node.
    fn chain(&mut self, chain: &Element, index: u32) -> Option<String> {
        let mut prev = self.question.clone();
        let mut answer: Option<(&Element, String)> = None;
        let mut any = false;
        for c in &chain.children {
            match c.tag {
                "step" => {
                    let Some(label) = self.label_of(c) else { continue };
                    if answer.is_some() {
                        self.diags.push(
                            Diagnostic::warning(
                                Code::UnexpectedOrder,
                                "<step> after the chain's <answer>",
                            )
                            .with_span(c.span),
                        );
                    }
                    let id = self.push(
                        TraceNode::new(self.next_id(), NodeKind::Step, label).with_chain(index),
                    );
                    self.edge(&prev, &id);
                    prev = id;
                    any = true;
                }
                "answer" => {
                    let Some(label) = self.label_of(c) else { continue };
                    if answer.is_some() {
                        self.diags.push(
                            Diagnostic::warning(
                                Code::UnexpectedOrder,
                                "additional <answer> in chain ignored",
                            )
                            .with_span(c.span),
                        );
                    } else {
                        answer = Some((c, label));
                    }
                }
                _ => self.misplaced(c),
            }
        }
        if let Some((_, label)) = answer {
            let id = self.push(
                TraceNode::new(self.next_id(), NodeKind::Candidate, label).with_chain(index),
            );
            self.edge(&prev, &id);
            return Some(id);
        }
        if any {
            self.diags.push(
                Diagnostic::warning(
                    Code::MissingChainAnswer,
                    format!("chain {index} has no <answer>; its last step feeds the final answer"),
                )
                .with_span(chain.span),
            );
            Some(prev)
        } else {
            self.diags.push(
                Diagnostic::warning(Code::EmptyElement, format!("chain {index} is empty; ignored"))
                    .with_span(chain.span),
            );
            None
        }
    }

    fn tree(&mut self, elements: &[Element]) {
        let beam = self.trace.method == ReasoningMethod::BeamSearch;
        let mut final_el = None;
        let mut path_el: Option<&Element> = None;
        let mut nodes: Vec<TreeNode> = Vec::new();
        let mut by_model_id: HashMap<String, usize> = HashMap::new();

        for e in elements {
            match e.tag {
                "final_answer" => self.take_final(&mut final_el, e),
                "selected_path" if beam => {
                    if path_el.is_some() {
                        self.diags.push(
                            Diagnostic::warning(
                                Code::DuplicateId,
                                "additional <selected_path> ignored",
                            )
                            .with_span(e.span),
                        );
                    } else {
                        path_el = Some(e);
                    }
                }
                "node" => {
                    if let Some(n) = self.tree_node(e, beam, nodes.len(), &mut by_model_id) {
                        nodes.push(n);
                    }
                }
                _ => self.misplaced(e),
            }
        }

        let parents = self.resolve_parents(&nodes, &by_model_id);
        let depths = depths(&parents);
        let base = self.trace.nodes.len();
        let trace_id = |i: usize| format!("n{}", base + i);
        for (i, n) in nodes.iter().enumerate() {
            let computed = depths[i];
            let level = match n.level {
                Some(declared) if beam => {
                    if declared != computed {
                        self.diags.push(
                            Diagnostic::warning(
                                Code::LevelMismatch,
                                format!("declared level {declared} but node sits at depth {computed}"),
                            )
                            .with_span(n.span)
                            .with_target(trace_id(i)),
                        );
                    }
                    declared
                }
                _ => computed,
            };
            let mut node = TraceNode::new(trace_id(i), NodeKind::Candidate, n.label.clone())
                .with_level(level);
            node.score = n.score;
            self.push(node);
        }
        for (i, p) in parents.iter().enumerate() {
            let from = p.map_or_else(|| self.question.clone(), trace_id);
            self.edge(&from, &trace_id(i));
        }

        let level_of = |b: &Builder, id: &str| b.trace.node(id).and_then(|n| n.level).unwrap_or(0);
        if beam {
            let declared = path_el.and_then(|e| self.declared_path(e, &by_model_id, &trace_id));
            let tail = match &declared {
                Some(p) => p.last().cloned(),
                None => self.best_leaf(),
            }
            .unwrap_or_else(|| self.question.clone());
            let level = level_of(self, &tail) + 1;
            self.finish(final_el, Some(level), &[tail]);
            if let Some(p) = declared {
                // the path was checked for connectivity, so this cannot fail
                if let Some(t) = self.trace.with_selected_path(&p) {
                    self.trace = t;
                }
            }
        } else {
            let tail = match final_el.and_then(|e| e.attr("parent").map(|p| (e, p.trim()))) {
                Some((_, p)) if p.eq_ignore_ascii_case("root") => self.question.clone(),
                Some((e, p)) => match by_model_id.get(p) {
                    Some(&i) => trace_id(i),
                    None => {
                        self.diags.push(
                            Diagnostic::error(
                                Code::OrphanNode,
                                format!("final answer names unknown parent `{p}`; attached to the last leaf"),
                            )
                            .with_span(e.span),
                        );
                        self.last_leaf()
                    }
                },
                None => self.last_leaf(),
            };
            let level = level_of(self, &tail) + 1;
            self.finish(final_el, Some(level), std::slice::from_ref(&tail));
            let mut middle = Vec::new();
            let mut cur = (tail != self.question).then_some(tail);
            while let Some(id) = cur {
                let idx: usize = id[1..].parse::<usize>().expect("generated id") - base;
                middle.push(id);
                cur = parents[idx].map(trace_id);
            }
            middle.reverse();
            if let Some(t) = self.trace.with_selected_path(&middle) {
                self.trace = t;
            }
        }
    }

    fn tree_node(
        &mut self,
        e: &Element,
        beam: bool,
        index: usize,
        by_model_id: &mut HashMap<String, usize>,
    ) -> Option<TreeNode> {
        let label = self.label_of(e)?;
        let model_id = match e.attr("id").map(str::trim).filter(|s| !s.is_empty()) {
            Some(id) => id.to_string(),
            None => {
                self.missing_attr(e, "id");
                format!("#{index}")
            }
        };
        if by_model_id.contains_key(&model_id) {
            let renamed = format!("{model_id}~{index}");
            self.diags.push(
                Diagnostic::warning(
                    Code::DuplicateId,
                    format!("node id `{model_id}` repeats; this occurrence is renamed `{renamed}`"),
                )
                .with_span(e.span),
            );
            by_model_id.insert(renamed, index);
        } else {
            by_model_id.insert(model_id, index);
        }
        let parent = match e.attr("parent").map(str::trim) {
            Some(p) if !p.is_empty() => Some(p.to_string()),
            _ => {
                self.missing_attr(e, "parent");
                None
            }
        };
        let score = match e.attr("score") {
            Some(raw) => self.score(e, raw),
            None => {
                if beam {
                    self.missing_attr(e, "score");
                }
                None
            }
        };
        let level = if beam {
            match e.attr("level").map(str::trim) {
                Some(v) => match v.parse::<u32>() {
                    Ok(l) => Some(l),
                    Err(_) => {
                        self.diags.push(
                            Diagnostic::warning(
                                Code::InvalidLevel,
                                format!("level `{v}` is not a non-negative integer; using depth"),
                            )
                            .with_span(e.span),
                        );
                        None
                    }
                },
                None => {
                    self.missing_attr(e, "level");
                    None
                }
            }
        } else {
            None
        };
        Some(TreeNode {
            label,
            parent,
            score,
            level,
            span: e.span,
        })
    }

    fn missing_attr(&mut self, e: &Element, name: &str) {
        self.diags.push(
            Diagnostic::warning(
                Code::MissingAttribute,
                format!("<{}> is missing its `{name}` attribute", e.tag),
            )
            .with_span(e.span),
        );
    }

    fn score(&mut self, e: &Element, raw: &str) -> Option<f64> {
        match raw.trim().parse::<f64>() {
            Ok(s) if s.is_finite() => {
                if (0.0..=1.0).contains(&s) {
                    Some(s)
                } else {
                    let clamped = s.clamp(0.0, 1.0);
                    self.diags.push(
                        Diagnostic::warning(
                            Code::ScoreClamped,
                            format!("score {s} outside [0, 1]; clamped to {clamped}"),
                        )
                        .with_span(e.span),
                    );
                    Some(clamped)
                }
            }
            _ => {
                self.diags.push(
                    Diagnostic::warning(Code::InvalidScore, format!("score `{raw}` is not a number"))
                        .with_span(e.span),
                );
                None
            }
        }
    }

    /// Resolves parent references to node indexes (`None` = question),
    /// re-attaching orphans and breaking parent cycles at the question.
    fn resolve_parents(
        &mut self,
        nodes: &[TreeNode],
        by_model_id: &HashMap<String, usize>,
    ) -> Vec<Option<usize>> {
        let mut parents: Vec<Option<usize>> = nodes
            .iter()
            .map(|n| match n.parent.as_deref() {
                None => None,
                Some(p) if p.eq_ignore_ascii_case("root") => None,
                Some(p) => match by_model_id.get(p) {
                    Some(&i) => Some(i),
                    None => {
                        self.diags.push(
                            Diagnostic::error(
                                Code::OrphanNode,
                                format!("parent `{p}` does not exist; node attached to the question"),
                            )
                            .with_span(n.span),
                        );
                        None
                    }
                },
            })
            .collect();

        // 0 = unvisited, 1 = on the current walk, 2 = known to reach the root
        let mut state = vec![0u8; nodes.len()];
        for start in 0..nodes.len() {
            let mut walk: Vec<usize> = Vec::new();
            let mut cur = Some(start);
            while let Some(i) = cur {
                match state[i] {
                    2 => break,
                    1 => {
                        let pos = walk.iter().position(|&w| w == i).expect("on walk");
                        let breaker = *walk[pos..].iter().min().expect("non-empty cycle");
                        parents[breaker] = None;
                        self.diags.push(
                            Diagnostic::error(
                                Code::ParentCycle,
                                "parent references form a cycle; node attached to the question",
                            )
                            .with_span(nodes[breaker].span),
                        );
                        break;
                    }
                    _ => {
                        state[i] = 1;
                        walk.push(i);
                        cur = parents[i];
                    }
                }
            }
            for w in walk {
                state[w] = 2;
            }
        }
        parents
    }

    fn declared_path(
        &mut self,
        e: &Element,
        by_model_id: &HashMap<String, usize>,
        trace_id: &dyn Fn(usize) -> String,
    ) -> Option<Vec<String>> {
        let text = collapse_whitespace(&crate::text::decode_entities(&e.inner_text));
        let tokens: Vec<&str> = text
            .split(|c: char| c == ',' || c == ';' || c == '→' || c.is_whitespace())
            .flat_map(|t| t.split("->"))
            .map(|t| t.trim_matches(|c: char| c == '"' || c == '\'' || c == '[' || c == ']'))
            .filter(|t| !t.is_empty() && !t.eq_ignore_ascii_case("root"))
            .collect();
        if tokens.is_empty() {
            self.diags.push(
                Diagnostic::warning(Code::EmptyElement, "empty <selected_path> ignored")
                    .with_span(e.span),
            );
            return None;
        }
        let mut path = Vec::with_capacity(tokens.len());
        for t in tokens {
            match by_model_id.get(t) {
                Some(&i) => path.push(trace_id(i)),
                None => {
                    self.diags.push(
                        Diagnostic::warning(
                            Code::UnknownSelectedId,
                            format!("selected path names unknown node `{t}`; path ignored"),
                        )
                        .with_span(e.span),
                    );
                    return None;
                }
            }
        }
        let mut prev = self.question.as_str();
        for id in &path {
            if !self.trace.edges.iter().any(|x| x.from == prev && &x.to == id) {
                self.diags.push(
                    Diagnostic::warning(
                        Code::InvalidSelectedPath,
                        "selected path is not a connected path from the question; ignored",
                    )
                    .with_span(e.span),
                );
                return None;
            }
            prev = id;
        }
        Some(path)
    }

    /// Leaf of the highest-scoring path, or the last leaf if scores are
    /// incomplete.
    fn best_leaf(&self) -> Option<String> {
        match analysis::best_beam_path(&self.trace) {
            Ok(p) => p.path.last().cloned(),
            Err(_) => Some(self.last_leaf()),
        }
    }

    /// Last candidate in document order that has no candidate children.
    fn last_leaf(&self) -> String {
        self.trace
            .nodes
            .iter()
            .rev()
            .find(|n| {
                n.kind == NodeKind::Candidate
                    && !self.trace.edges.iter().any(|e| e.from == n.id)
            })
            .map_or_else(|| self.question.clone(), |n| n.id.clone())
    }
}

struct TreeNode {
    label: String,
    parent: Option<String>,
    score: Option<f64>,
    level: Option<u32>,
    span: Span,
}

fn depths(parents: &[Option<usize>]) -> Vec<u32> {
    let mut memo: Vec<Option<u32>> = vec![None; parents.len()];
    for start in 0..parents.len() {
        let mut walk = Vec::new();
        let mut cur = Some(start);
        let mut base = 0;
        while let Some(i) = cur {
            if let Some(d) = memo[i] {
                base = d;
                break;
            }
            walk.push(i);
            cur = parents[i];
        }
        for (k, &i) in walk.iter().rev().enumerate() {
            memo[i] = Some(base + k as u32 + 1);
        }
    }
    memo.into_iter().map(|d| d.unwrap_or(1)).collect()
}

fn sequence_allows(method: ReasoningMethod, prev: NodeKind, next: NodeKind) -> bool {
    use NodeKind::*;
    match method {
        ReasoningMethod::SelfRefine => matches!(
            (prev, next),
            (Question, Attempt) | (Attempt | Improvement, Reflection) | (Reflection, Improvement)
        ),
        ReasoningMethod::LeastToMost => matches!(
            (prev, next),
            (Question | SubAnswer, SubQuestion) | (SubQuestion, SubAnswer)
        ),
        _ => true,
    }
}
