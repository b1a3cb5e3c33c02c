//! Fixtures shared by the criterion benchmarks.

use reasongraph_core::{NodeKind, ReasoningMethod, ReasoningTrace, TraceEdge, TraceNode};

/// A beam-search trace with exactly `n` nodes: a question, `n - 2` scored
/// candidates in a binary-ish tree, and a final answer.
pub fn beam_trace(n: usize) -> ReasoningTrace {
    assert!(n >= 2);
    let mut t = ReasoningTrace::new(ReasoningMethod::BeamSearch);
    t.nodes.push(
        TraceNode::new("n0", NodeKind::Question, "How many ways can eight queens be placed?")
            .with_level(0),
    );
    for i in 1..n - 1 {
        let parent = if i <= 2 { 0 } else { (i - 1) / 2 };
        let level = t.nodes[parent].level.unwrap_or(0) + 1;
        t.nodes.push(
            TraceNode::new(
                format!("n{i}"),
                NodeKind::Candidate,
                format!("candidate {i}: place the next queen in column {} and check the diagonals for conflicts", i % 8),
            )
            .with_score((i % 97) as f64 / 100.0)
            .with_level(level),
        );
        t.edges.push(TraceEdge::new(format!("n{parent}"), format!("n{i}")));
    }
    let last = n - 2;
    let level = t.nodes[last].level.unwrap_or(0) + 1;
    t.nodes.push(
        TraceNode::new(format!("n{}", n - 1), NodeKind::FinalAnswer, "92 distinct solutions")
            .with_level(level),
    );
    t.edges
        .push(TraceEdge::new(format!("n{last}"), format!("n{}", n - 1)));
    t
}
