//! Independent oracles and input generators shared by the integration and
//! acceptance tests. Nothing here calls the algorithms it checks.

#![allow(dead_code)]

use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;

use rand::seq::IndexedRandom;
use rand::Rng;
use reasongraph_core::{analyze, emit, grammar_for, parse, Direction, RawModelOutput};
use reasongraph_core::{
    NodeKind, ReasoningMethod, ReasoningTrace, TraceEdge, TraceNode, VisualizationConfig,
};

/// A beam trace whose scores are stored as integer hundredths so the oracle
/// can compare totals exactly.
pub struct BeamCase {
    pub trace: ReasoningTrace,
    pub hundredths: Vec<u32>,
}

/// Random beam tree, depth 1..=max_depth, per-parent fan-out 1..=max_width.
/// Unlike the synthetic writer it does not keep branching consistent, so
/// the oracle also sees ragged trees.
pub fn random_beam(rng: &mut impl Rng, max_depth: u32, max_width: usize) -> BeamCase {
    let mut trace = ReasoningTrace::new(ReasoningMethod::BeamSearch);
    trace
        .nodes
        .push(TraceNode::new("q", NodeKind::Question, "question").with_level(0));
    let mut hundredths = vec![0];
    let depth = rng.random_range(1..=max_depth);
    let mut frontier = vec![0usize];
    for level in 1..=depth {
        let mut next = Vec::new();
        for &p in &frontier {
            for _ in 0..rng.random_range(1..=max_width) {
                let s = rng.random_range(0..=10u32) * 10;
                let id = format!("c{}", trace.nodes.len());
                trace.nodes.push(
                    TraceNode::new(&id, NodeKind::Candidate, format!("candidate {id}"))
                        .with_level(level)
                        .with_score(s as f64 / 100.0),
                );
                hundredths.push(s);
                let from = trace.nodes[p].id.clone();
                trace.edges.push(TraceEdge::new(from, id));
                next.push(trace.nodes.len() - 1);
            }
        }
        let keep = rng.random_range(1..=next.len().min(max_width));
        let mut kept: Vec<usize> = next.choose_multiple(rng, keep).copied().collect();
        kept.sort_unstable();
        frontier = kept;
    }
    let leaf = trace.nodes.len() - 1;
    let fid = "f".to_string();
    trace.nodes.push(
        TraceNode::new(&fid, NodeKind::FinalAnswer, "answer").with_level(depth + 1),
    );
    hundredths.push(0);
    let from = trace.nodes[leaf].id.clone();
    trace.edges.push(TraceEdge::new(from, fid));
    BeamCase { trace, hundredths }
}

/// Every question-to-leaf candidate path as insertion indexes, with its
/// exact total in hundredths.
pub fn enumerate_beam_paths(case: &BeamCase) -> Vec<(Vec<usize>, u32)> {
    let t = &case.trace;
    let index: HashMap<&str, usize> = t
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.id.as_str(), i))
        .collect();
    let mut kids: Vec<Vec<usize>> = vec![Vec::new(); t.nodes.len()];
    for e in &t.edges {
        let (a, b) = (index[e.from.as_str()], index[e.to.as_str()]);
        if t.nodes[b].kind == NodeKind::Candidate {
            kids[a].push(b);
        }
    }
    let mut out = Vec::new();
    let mut stack: Vec<(usize, Vec<usize>, u32)> = kids[0]
        .iter()
        .map(|&c| (c, vec![c], case.hundredths[c]))
        .collect();
    while let Some((node, path, total)) = stack.pop() {
        if kids[node].is_empty() {
            out.push((path, total));
        } else {
            for &c in &kids[node] {
                let mut p = path.clone();
                p.push(c);
                stack.push((c, p, total + case.hundredths[c]));
            }
        }
    }
    out
}

/// The expected winner: highest exact total, then the lexicographically
/// smallest index sequence.
pub fn beam_oracle(case: &BeamCase) -> (Vec<String>, u32) {
    let paths = enumerate_beam_paths(case);
    let best = paths.iter().map(|(_, t)| *t).max().expect("at least one path");
    let seq = paths
        .into_iter()
        .filter(|(_, t)| *t == best)
        .map(|(p, _)| p)
        .min()
        .expect("a best path");
    let ids = seq
        .into_iter()
        .map(|i| case.trace.nodes[i].id.clone())
        .collect();
    (ids, best)
}

/// Path chosen by always taking the highest-scoring child.
pub fn greedy_path(trace: &ReasoningTrace) -> Vec<String> {
    let mut path = Vec::new();
    let mut cur = trace.question().expect("question").id.clone();
    loop {
        let next = trace
            .edges
            .iter()
            .filter(|e| e.from == cur)
            .filter_map(|e| trace.node(&e.to))
            .filter(|n| n.kind == NodeKind::Candidate)
            .fold(None::<&TraceNode>, |best, n| match best {
                Some(b) if b.score >= n.score => Some(b),
                _ => Some(n),
            });
        match next {
            Some(n) => {
                path.push(n.id.clone());
                cur = n.id.clone();
            }
            None => return path,
        }
    }
}

/// Levels {A:0.9, B:0.5}, children {A→C:0.2, B→D:0.7}, declared path B,D.
pub fn ab_example() -> ReasoningTrace {
    let mut t = ReasoningTrace::new(ReasoningMethod::BeamSearch);
    t.nodes = vec![
        TraceNode::new("Q", NodeKind::Question, "question").with_level(0),
        TraceNode::new("A", NodeKind::Candidate, "A").with_level(1).with_score(0.9),
        TraceNode::new("B", NodeKind::Candidate, "B").with_level(1).with_score(0.5),
        TraceNode::new("C", NodeKind::Candidate, "C").with_level(2).with_score(0.2),
        TraceNode::new("D", NodeKind::Candidate, "D").with_level(2).with_score(0.7),
        TraceNode::new("F", NodeKind::FinalAnswer, "F").with_level(3),
    ];
    t.edges = vec![
        TraceEdge::new("Q", "A"),
        TraceEdge::new("Q", "B"),
        TraceEdge::new("A", "C"),
        TraceEdge::new("B", "D"),
        TraceEdge::new("D", "F"),
    ];
    t.with_selected_path(&["B".to_string(), "D".to_string()])
        .expect("B, D is connected")
}

/// Answer spellings that normalize onto a handful of values.
pub const ANSWER_POOL: &[&str] = &[
    "4", "4.", " 4 ", "5", "5.", "Paris", "paris.", "PARIS", "  paris ", "new  york",
    "New York.", "x < y", "42", "42 .",
];

pub fn oracle_normalize(s: &str) -> String {
    let lowered: String = s.chars().flat_map(char::to_lowercase).collect();
    let words: Vec<&str> = lowered.split_whitespace().collect();
    let joined = words.join(" ");
    match joined.strip_suffix('.') {
        Some(rest) => rest.trim_end().to_string(),
        None => joined,
    }
}

pub struct VoteOracle {
    pub winner: String,
    pub counts: HashMap<String, usize>,
    pub tie: bool,
}

/// Frequency count over `(chain_index, answer)` pairs.
pub fn vote_oracle(answers: &[(u32, String)]) -> VoteOracle {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for (_, a) in answers {
        *counts.entry(oracle_normalize(a)).or_insert(0) += 1;
    }
    let top = *counts.values().max().expect("non-empty");
    let leaders: Vec<&String> = counts.keys().filter(|k| counts[*k] == top).collect();
    let winner = answers
        .iter()
        .filter(|(_, a)| leaders.contains(&&oracle_normalize(a)))
        .min_by_key(|(c, _)| *c)
        .map(|(_, a)| oracle_normalize(a))
        .expect("a leader exists");
    VoteOracle {
        winner,
        tie: leaders.len() > 1,
        counts,
    }
}

/// Self-consistency trace with one step and one answer per chain. Chain
/// indexes are distinct but shuffled relative to insertion order.
pub fn vote_trace(answers: &[(u32, String)]) -> ReasoningTrace {
    let mut t = ReasoningTrace::new(ReasoningMethod::SelfConsistency);
    t.nodes.push(TraceNode::new("q", NodeKind::Question, "question"));
    for (c, a) in answers {
        let s = format!("s{c}");
        let ans = format!("a{c}");
        t.nodes
            .push(TraceNode::new(&s, NodeKind::Step, "work").with_chain(*c));
        t.nodes
            .push(TraceNode::new(&ans, NodeKind::Candidate, a.clone()).with_chain(*c));
        t.edges.push(TraceEdge::new("q", s.clone()));
        t.edges.push(TraceEdge::new(s, ans));
    }
    t.nodes.push(TraceNode::new("f", NodeKind::FinalAnswer, "final"));
    for (c, _) in answers {
        t.edges.push(TraceEdge::new(format!("a{c}"), "f"));
    }
    t
}

pub fn random_answers(rng: &mut impl Rng) -> Vec<(u32, String)> {
    let n = rng.random_range(1..=9usize);
    let mut indexes: Vec<u32> = (0..n as u32).collect();
    for i in (1..n).rev() {
        indexes.swap(i, rng.random_range(0..=i));
    }
    indexes
        .into_iter()
        .map(|c| (c, ANSWER_POOL.choose(rng).expect("pool").to_string()))
        .collect()
}

/// One fuzz input. Cycles through raw bytes, truncated tag soup and nested
/// garbage built from the method's own vocabulary.
pub fn fuzz_input(rng: &mut impl Rng, method: ReasoningMethod, round: usize) -> String {
    match round % 3 {
        0 => {
            let len = rng.random_range(0..2048);
            let bytes: Vec<u8> = (0..len).map(|_| rng.random()).collect();
            String::from_utf8_lossy(&bytes).into_owned()
        }
        1 => {
            let full = soup(rng, method, 40);
            let cut = rng.random_range(0..=full.len());
            let mut cut_at = cut;
            while !full.is_char_boundary(cut_at) {
                cut_at -= 1;
            }
            full[..cut_at].to_string()
        }
        _ => {
            let depth = rng.random_range(1..60);
            let mut s = String::new();
            for _ in 0..depth {
                s.push_str(&open_tag(rng, method));
            }
            s.push_str(&soup(rng, method, 20));
            for _ in 0..rng.random_range(0..depth) {
                s.push_str(&close_tag(rng, method));
            }
            s
        }
    }
}

fn tag_name(rng: &mut impl Rng, method: ReasoningMethod) -> String {
    let names: Vec<&str> = grammar_for(method).tag_names().collect();
    let name = *names.choose(rng).expect("grammar has tags");
    if rng.random_bool(0.2) {
        name.to_uppercase()
    } else {
        name.to_string()
    }
}

fn open_tag(rng: &mut impl Rng, method: ReasoningMethod) -> String {
    const ATTRS: &[&str] = &[
        "", " id=\"a\"", " id='b' parent=\"root\"", " parent=a", " score=\"1.7\"",
        " score='-3'", " level=\"x\"", " index=\"2\"", " id=\"a", " parent='", " checked",
        " id=\"c\" parent=\"c\"", " score=\"NaN\"", " =", " id==\"x\"",
    ];
    let name = tag_name(rng, method);
    let attrs = *ATTRS.choose(rng).expect("attrs");
    let end = *["", ">", "/>", " >", "\n>"].choose(rng).expect("ends");
    format!("<{name}{attrs}{end}")
}

fn close_tag(rng: &mut impl Rng, method: ReasoningMethod) -> String {
    let name = tag_name(rng, method);
    let end = *["", ">", " >"].choose(rng).expect("ends");
    format!("</{name}{end}")
}

fn soup(rng: &mut impl Rng, method: ReasoningMethod, parts: usize) -> String {
    const JUNK: &[&str] = &[
        "text", " ", "\n", "<", ">", "&", "&amp;", "&lt;", "&#x41;", "<b>", "</i>", "<!--",
        "-->", "<![CDATA[", "]]>", "é", "日本", "\u{0}", "\"", "'", "=", "<<", "/>",
    ];
    let mut s = String::new();
    for _ in 0..rng.random_range(0..=parts) {
        match rng.random_range(0..4) {
            0 => s.push_str(&open_tag(rng, method)),
            1 => s.push_str(&close_tag(rng, method)),
            _ => s.push_str(JUNK.choose(rng).expect("junk")),
        }
    }
    s
}

/// Tree-of-thoughts trace with exactly `n` nodes and long labels.
pub fn wide_tot_trace(n: usize) -> ReasoningTrace {
    let mut text = String::new();
    for i in 0..n - 2 {
        let parent = if i < 3 { "root".to_string() } else { format!("x{}", (i - 3) / 3) };
        text.push_str(&format!(
            "<node id=\"x{i}\" parent=\"{parent}\" score=\"0.{}\">candidate thought number {i} with a moderately long label to wrap</node>\n",
            i % 10
        ));
    }
    text.push_str("<final_answer>done</final_answer>");
    let parsed = parse(&RawModelOutput::new(text, ReasoningMethod::TreeOfThoughts, "q")).unwrap();
    assert_eq!(parsed.trace.nodes.len(), n);
    parsed.trace
}

pub fn hundred_node_trace() -> ReasoningTrace {
    wide_tot_trace(100)
}

pub struct Golden {
    pub name: &'static str,
    pub method: ReasoningMethod,
    pub question: &'static str,
    pub config: VisualizationConfig,
}

pub fn goldens() -> Vec<Golden> {
    vec![
        Golden {
            name: "chain_of_thoughts",
            method: ReasoningMethod::ChainOfThoughts,
            question: "A train travels 120 km in 1.5 hours. What is its average speed?",
            config: VisualizationConfig::default(),
        },
        Golden {
            name: "beam_search",
            method: ReasoningMethod::BeamSearch,
            question: "Solve x^2 - 6x + 7 = 0",
            config: VisualizationConfig::default(),
        },
        Golden {
            name: "self_refine",
            method: ReasoningMethod::SelfRefine,
            question: "Write a haiku about autumn",
            config: VisualizationConfig {
                direction: Direction::LeftRight,
                wrap_width: 24,
                ..VisualizationConfig::default()
            },
        },
    ]
}

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../docs/golden")
}

pub fn render_golden(g: &Golden) -> String {
    let raw = fs::read_to_string(golden_dir().join(format!("{}.txt", g.name))).unwrap();
    let parsed = parse(&RawModelOutput::new(raw, g.method, g.question)).unwrap();
    let trace = analyze(parsed.trace).trace;
    emit(&trace, &g.config).unwrap().text
}
