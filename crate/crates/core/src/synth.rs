//! Random well-formed traces and a writer that prints a trace back in its
//! method's tag grammar.
//!
//! `parse(print(t))` reproduces `t` for every trace produced by
//! [`random_trace`]; the round-trip tests, the bundled corpus and the
//! benchmarks are all built on this.

use std::collections::HashMap;

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::grammar::grammar_for;
use crate::text::{encode_attr, encode_text};
use crate::trace::{NodeKind, ReasoningMethod, ReasoningTrace, TraceEdge, TraceNode};

/// Size limits for generated traces.
#[derive(Debug, Clone, Copy)]
pub struct SynthConfig {
    pub max_steps: usize,
    pub max_chains: usize,
    pub max_depth: u32,
    pub max_width: usize,
    pub max_tree_nodes: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            max_steps: 6,
            max_chains: 5,
            max_depth: 4,
            max_width: 4,
            max_tree_nodes: 12,
        }
    }
}

const WORDS: &[&str] = &[
    "add", "the", "two", "numbers", "so", "x", "=", "4", "then", "check", "result", "carry",
    "one", "prime", "factor", "divide", "by", "seven", "hence", "therefore", "Paris", "is",
    "capital", "of", "France", "2+2", "x<y", "a&b", "R&D", "\"quoted\"", "it's", "&lt;",
    "<step>", "→", "αβγ", "3.14", "50%", "(maybe)", "[note]", "{braces}", "#1", "é", "日本",
];

fn words(rng: &mut impl Rng, lo: usize, hi: usize) -> String {
    let n = rng.random_range(lo..=hi);
    (0..n)
        .map(|_| *WORDS.choose(rng).expect("non-empty word list"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn label(rng: &mut impl Rng) -> String {
    words(rng, 1, 8)
}

fn score(rng: &mut impl Rng) -> f64 {
    rng.random_range(0..=100u32) as f64 / 100.0
}

struct Build {
    trace: ReasoningTrace,
}

impl Build {
    fn new(method: ReasoningMethod, question: String) -> Self {
        let mut trace = ReasoningTrace::new(method);
        let mut q = TraceNode::new("n0", NodeKind::Question, question);
        if method.is_tree() {
            q.level = Some(0);
        }
        trace.nodes.push(q);
        Build { trace }
    }

    fn node(&mut self, kind: NodeKind, label: String) -> &mut TraceNode {
        let id = format!("n{}", self.trace.nodes.len());
        self.trace.nodes.push(TraceNode::new(id, kind, label));
        self.trace.nodes.last_mut().expect("just pushed")
    }

    fn id(&self, i: usize) -> String {
        self.trace.nodes[i].id.clone()
    }

    fn edge(&mut self, from: usize, to: usize) {
        let e = TraceEdge::new(self.id(from), self.id(to));
        self.trace.edges.push(e);
    }

    fn last(&self) -> usize {
        self.trace.nodes.len() - 1
    }
}

/// A random trace that obeys the layout conventions of `method`.
pub fn random_trace(method: ReasoningMethod, rng: &mut impl Rng, cfg: &SynthConfig) -> ReasoningTrace {
    let mut b = Build::new(method, words(rng, 2, 10));
    match method {
        ReasoningMethod::ChainOfThoughts => {
            let kinds: Vec<NodeKind> = (0..rng.random_range(1..=cfg.max_steps))
                .map(|_| NodeKind::Step)
                .collect();
            linear(&mut b, rng, &kinds);
        }
        ReasoningMethod::SelfRefine => {
            let mut kinds = vec![NodeKind::Attempt];
            for _ in 0..rng.random_range(0..=3) {
                kinds.extend([NodeKind::Reflection, NodeKind::Improvement]);
            }
            linear(&mut b, rng, &kinds);
        }
        ReasoningMethod::LeastToMost => {
            let mut kinds = Vec::new();
            for _ in 0..rng.random_range(1..=4) {
                kinds.extend([NodeKind::SubQuestion, NodeKind::SubAnswer]);
            }
            linear(&mut b, rng, &kinds);
        }
        ReasoningMethod::SelfConsistency => self_consistency(&mut b, rng, cfg),
        ReasoningMethod::TreeOfThoughts => tree_of_thoughts(&mut b, rng, cfg),
        ReasoningMethod::BeamSearch => beam(&mut b, rng, cfg),
    }
    b.trace
}

fn linear(b: &mut Build, rng: &mut impl Rng, kinds: &[NodeKind]) {
    let mut prev = 0;
    for &k in kinds {
        b.node(k, label(rng));
        let cur = b.last();
        b.edge(prev, cur);
        prev = cur;
    }
    b.node(NodeKind::FinalAnswer, label(rng));
    let f = b.last();
    b.edge(prev, f);
}

fn self_consistency(b: &mut Build, rng: &mut impl Rng, cfg: &SynthConfig) {
    let first_index = rng.random_range(0..=1);
    let answers = ["4", "5", "Paris", "paris.", "42", "x<y"];
    let mut tails = Vec::new();
    for c in 0..rng.random_range(1..=cfg.max_chains) {
        let index = first_index + c as u32;
        let mut prev = 0;
        for _ in 0..rng.random_range(0..=cfg.max_steps.min(4)) {
            b.node(NodeKind::Step, label(rng)).chain_index = Some(index);
            let cur = b.last();
            b.edge(prev, cur);
            prev = cur;
        }
        let answer = answers.choose(rng).expect("answers").to_string();
        b.node(NodeKind::Candidate, answer).chain_index = Some(index);
        let cur = b.last();
        b.edge(prev, cur);
        tails.push(cur);
    }
    b.node(NodeKind::FinalAnswer, label(rng));
    let f = b.last();
    for t in tails {
        b.edge(t, f);
    }
}

fn tree_of_thoughts(b: &mut Build, rng: &mut impl Rng, cfg: &SynthConfig) {
    let n = rng.random_range(1..=cfg.max_tree_nodes);
    let mut parent_of = vec![None];
    for _ in 0..n {
        let eligible: Vec<usize> = (0..b.trace.nodes.len())
            .filter(|&i| b.trace.nodes[i].level.unwrap_or(0) < cfg.max_depth)
            .collect();
        let parent = *eligible.choose(rng).expect("question is always eligible");
        let level = b.trace.nodes[parent].level.unwrap_or(0) + 1;
        let with_score = rng.random_bool(0.5);
        let s = score(rng);
        let node = b.node(NodeKind::Candidate, label(rng));
        node.level = Some(level);
        if with_score {
            node.score = Some(s);
        }
        let cur = b.last();
        b.edge(parent, cur);
        parent_of.push(Some(parent));
    }
    let attach = rng.random_range(0..b.trace.nodes.len());
    finish_tree(b, rng, attach, &parent_of);
}

fn beam(b: &mut Build, rng: &mut impl Rng, cfg: &SynthConfig) {
    let depth = rng.random_range(1..=cfg.max_depth);
    let width = rng.random_range(1..=cfg.max_width);
    let mut parent_of = vec![None];
    let mut frontier = vec![0usize];
    for level in 1..=depth {
        let mut next = Vec::new();
        for &p in &frontier {
            for _ in 0..width {
                let s = score(rng);
                let node = b.node(NodeKind::Candidate, label(rng));
                node.level = Some(level);
                node.score = Some(s);
                let cur = b.last();
                b.edge(p, cur);
                parent_of.push(Some(p));
                next.push(cur);
            }
        }
        let keep = rng.random_range(1..=width.min(next.len()));
        frontier = next.choose_multiple(rng, keep).copied().collect();
        frontier.sort_unstable();
    }
    let leaves: Vec<usize> = (1..b.trace.nodes.len())
        .filter(|&i| !parent_of.contains(&Some(i)))
        .collect();
    let attach = *leaves.choose(rng).expect("depth >= 1 gives leaves");
    finish_tree(b, rng, attach, &parent_of);
}

fn finish_tree(b: &mut Build, rng: &mut impl Rng, attach: usize, parent_of: &[Option<usize>]) {
    let level = b.trace.nodes[attach].level.unwrap_or(0) + 1;
    b.node(NodeKind::FinalAnswer, label(rng)).level = Some(level);
    let f = b.last();
    b.edge(attach, f);
    let mut middle = Vec::new();
    let mut cur = Some(attach).filter(|&i| i != 0);
    while let Some(i) = cur {
        middle.push(b.id(i));
        cur = parent_of[i].filter(|&p| p != 0);
    }
    middle.reverse();
    b.trace = b
        .trace
        .with_selected_path(&middle)
        .expect("generated path is connected");
}

/// Prints `trace` as a sequence of tag-level text segments in its method's
/// grammar. Any tag-free text may be placed between segments without
/// changing what they parse to.
pub fn print_segments(trace: &ReasoningTrace) -> Vec<String> {
    let grammar = grammar_for(trace.method);
    let tag_for = |kind: NodeKind| {
        grammar
            .tags
            .iter()
            .find(|t| t.kind == Some(kind))
            .map(|t| t.name)
            .expect("kind produced by this method")
    };
    let leaf = |kind: NodeKind, label: &str| {
        let tag = tag_for(kind);
        format!("<{tag}>{}</{tag}>", encode_text(label))
    };
    let final_node = trace.final_answer();
    let parent_of: HashMap<&str, &str> = trace
        .edges
        .iter()
        .map(|e| (e.to.as_str(), e.from.as_str()))
        .collect();
    let question = trace.question().map(|q| q.id.as_str()).unwrap_or("");
    let mut out = Vec::new();

    match trace.method {
        ReasoningMethod::ChainOfThoughts
        | ReasoningMethod::SelfRefine
        | ReasoningMethod::LeastToMost => {
            for id in trace.topological_order().unwrap_or_default() {
                let n = trace.node(&id).expect("ordered id exists");
                if !matches!(n.kind, NodeKind::Question | NodeKind::FinalAnswer) {
                    out.push(leaf(n.kind, &n.label));
                }
            }
        }
        ReasoningMethod::SelfConsistency => {
            let mut chains: Vec<u32> = Vec::new();
            for n in &trace.nodes {
                if let Some(c) = n.chain_index {
                    if !chains.contains(&c) {
                        chains.push(c);
                    }
                }
            }
            let order = trace.topological_order().unwrap_or_default();
            for c in chains {
                out.push(format!("<chain index=\"{c}\">"));
                for id in &order {
                    let n = trace.node(id).expect("ordered id exists");
                    if n.chain_index == Some(c) {
                        let tag = if n.kind == NodeKind::Candidate { "answer" } else { "step" };
                        out.push(format!("<{tag}>{}</{tag}>", encode_text(&n.label)));
                    }
                }
                out.push("</chain>".to_string());
            }
        }
        ReasoningMethod::TreeOfThoughts | ReasoningMethod::BeamSearch => {
            let beam = trace.method == ReasoningMethod::BeamSearch;
            let model_id = |id: &str| -> String {
                if id == question {
                    "root".to_string()
                } else {
                    encode_attr(id)
                }
            };
            for n in &trace.nodes {
                if n.kind != NodeKind::Candidate {
                    continue;
                }
                let parent = parent_of.get(n.id.as_str()).copied().unwrap_or(question);
                let mut attrs = format!(" id=\"{}\" parent=\"{}\"", model_id(&n.id), model_id(parent));
                if beam {
                    if let Some(l) = n.level {
                        attrs.push_str(&format!(" level=\"{l}\""));
                    }
                }
                if let Some(s) = n.score {
                    attrs.push_str(&format!(" score=\"{s}\""));
                }
                out.push(format!("<node{attrs}>{}</node>", encode_text(&n.label)));
            }
            if beam {
                if let Some(path) = &trace.selected_path {
                    let middle: Vec<&str> = path
                        .iter()
                        .filter(|id| trace.node(id).is_some_and(|n| n.kind == NodeKind::Candidate))
                        .map(String::as_str)
                        .collect();
                    if !middle.is_empty() {
                        out.push(format!("<selected_path>{}</selected_path>", middle.join(",")));
                    }
                }
            } else if let Some(f) = final_node {
                let parent = parent_of.get(f.id.as_str()).copied().unwrap_or(question);
                out.push(format!(
                    "<final_answer parent=\"{}\">{}</final_answer>",
                    model_id(parent),
                    encode_text(&f.label)
                ));
                return out;
            }
        }
    }
    if let Some(f) = final_node {
        out.push(leaf(NodeKind::FinalAnswer, &f.label));
    }
    out
}

/// Prints `trace` in its grammar, one segment per line.
pub fn print_trace(trace: &ReasoningTrace) -> String {
    print_segments(trace).join("\n")
}

/// Wraps printed segments in chatty, tag-free prose.
pub fn print_with_prose(trace: &ReasoningTrace, rng: &mut impl Rng) -> String {
    let mut out = String::from("Sure, let me work through this carefully.\n\n");
    for seg in print_segments(trace) {
        out.push_str(&seg);
        if rng.random_bool(0.4) {
            out.push(' ');
            out.push_str(&prose(rng));
        }
        out.push('\n');
    }
    out.push_str("\nI hope this helps!");
    out
}

/// Random text without `<`, safe to splice between elements.
pub fn prose(rng: &mut impl Rng) -> String {
    const PROSE: &[&str] = &[
        "Let me think.", "Next,", "Hmm, 3 > 2 so", "that's odd &", "OK.", "\n\n", "**bold**",
        "- bullet", "(aside)", "Note: a > b", "\"quote\"", "step", "final_answer", "→", "",
    ];
    (0..rng.random_range(0..4))
        .map(|_| *PROSE.choose(rng).expect("non-empty prose list"))
        .collect::<Vec<_>>()
        .join(" ")
}
