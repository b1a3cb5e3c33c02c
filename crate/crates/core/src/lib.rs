//! Reasoning-trace parsing and visualization.
//!
//! Model output tagged with a per-method XML-ish vocabulary is scanned
//! leniently ([`parse`]), assembled into a canonical [`ReasoningTrace`],
//! analysed ([`analysis`]) and rendered as Mermaid flowchart text
//! ([`mermaid`]).
//!
//! ```
//! use reasongraph_core::{analyze, emit, parse, RawModelOutput, ReasoningMethod, VisualizationConfig};
//!
//! # fn main() -> Result<(), Box<dyn std::error::Error>> {
//! let raw = RawModelOutput::new(
//!     "<step>7 * 8 = 56</step><final_answer>56</final_answer>",
//!     ReasoningMethod::ChainOfThoughts,
//!     "What is 7*8?",
//! );
//! let parsed = parse(&raw)?;
//! let analyzed = analyze(parsed.trace);
//! let diagram = emit(&analyzed.trace, &VisualizationConfig::default())?;
//! assert!(diagram.text.starts_with("flowchart TD\n"));
//! # Ok(())
//! # }
//! ```

pub mod analysis;
pub mod diagnostic;
pub mod grammar;
pub mod mermaid;
pub mod parse;
pub mod scan;
pub mod synth;
pub mod text;
pub mod trace;

pub use analysis::{
    analyze, best_beam_path, majority_vote, trace_stats, Analysis, AnalysisError, Analyzed,
    PathScore, TraceStats, VoteResult,
};
pub use diagnostic::{has_errors, Diagnostic, DiagnosticCode, Severity, Span};
pub use grammar::{
    build_meta_prompt, build_prompt, grammar_for, parse_meta_selection, GrammarError,
    MetaSelectionError, MethodGrammar, MethodParams,
};
pub use mermaid::{
    emit, escape_label, validate_diagram, wrap_label, DiagramDocument, Direction, EmitError,
    Theme, VisualizationConfig,
};
pub use parse::{assemble_trace, extract_elements, parse, ParseError, Parsed, RawModelOutput};
pub use trace::{
    validate_trace, CycleError, NodeKind, ReasoningMethod, ReasoningTrace, TraceEdge, TraceNode,
};
