use std::fmt;

use serde::{Deserialize, Serialize};

/// How serious a [`Diagnostic`] is. Errors mean a structural invariant is
/// broken; warnings mean the input deviated from the grammar but was
/// recovered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Warning,
    Error,
}

/// Every diagnostic the crate can produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticCode {
    // trace structure
    MissingQuestion,
    MultipleQuestions,
    QuestionHasIncoming,
    FinalHasOutgoing,
    EmptyLabel,
    DuplicateNodeId,
    SelfLoop,
    DanglingEdge,
    DuplicateEdge,
    Cycle,
    Unreachable,
    UnexpectedScore,
    ScoreOutOfRange,
    MissingLevel,
    UnexpectedChainIndex,
    BranchingWidth,
    InvalidSelectedPath,
    SelectedPathMismatch,
    MissingScore,

    // scanning and assembly
    NoElements,
    UnclosedTag,
    StrayCloseTag,
    EmptyElement,
    MisplacedElement,
    MissingAttribute,
    InvalidScore,
    ScoreClamped,
    InvalidLevel,
    LevelMismatch,
    OrphanNode,
    ParentCycle,
    DuplicateId,
    DuplicateFinalAnswer,
    MissingFinalAnswer,
    UnknownSelectedId,
    MissingChainAnswer,
    UnexpectedOrder,

    // analysis
    DivergentSelection,
    VoteDisagreement,
    AnalysisSkipped,

    // diagram text
    MissingHeader,
    MalformedStatement,
    UnbalancedBrackets,
    UndeclaredNode,
    DuplicateNode,
    UndeclaredClass,
    IdMapMismatch,
}

impl DiagnosticCode {
    pub fn as_str(self) -> &'static str {
        use DiagnosticCode::*;
        match self {
            MissingQuestion => "missing_question",
            MultipleQuestions => "multiple_questions",
            QuestionHasIncoming => "question_has_incoming",
            FinalHasOutgoing => "final_has_outgoing",
            EmptyLabel => "empty_label",
            DuplicateNodeId => "duplicate_node_id",
            SelfLoop => "self_loop",
            DanglingEdge => "dangling_edge",
            DuplicateEdge => "duplicate_edge",
            Cycle => "cycle",
            Unreachable => "unreachable",
            UnexpectedScore => "unexpected_score",
            ScoreOutOfRange => "score_out_of_range",
            MissingLevel => "missing_level",
            UnexpectedChainIndex => "unexpected_chain_index",
            BranchingWidth => "branching_width",
            InvalidSelectedPath => "invalid_selected_path",
            SelectedPathMismatch => "selected_path_mismatch",
            MissingScore => "missing_score",
            NoElements => "no_elements",
            UnclosedTag => "unclosed_tag",
            StrayCloseTag => "stray_close_tag",
            EmptyElement => "empty_element",
            MisplacedElement => "misplaced_element",
            MissingAttribute => "missing_attribute",
            InvalidScore => "invalid_score",
            ScoreClamped => "score_clamped",
            InvalidLevel => "invalid_level",
            LevelMismatch => "level_mismatch",
            OrphanNode => "orphan_node",
            ParentCycle => "parent_cycle",
            DuplicateId => "duplicate_id",
            DuplicateFinalAnswer => "duplicate_final_answer",
            MissingFinalAnswer => "missing_final_answer",
            UnknownSelectedId => "unknown_selected_id",
            MissingChainAnswer => "missing_chain_answer",
            UnexpectedOrder => "unexpected_order",
            DivergentSelection => "divergent_selection",
            VoteDisagreement => "vote_disagreement",
            AnalysisSkipped => "analysis_skipped",
            MissingHeader => "missing_header",
            MalformedStatement => "malformed_statement",
            UnbalancedBrackets => "unbalanced_brackets",
            UndeclaredNode => "undeclared_node",
            DuplicateNode => "duplicate_node",
            UndeclaredClass => "undeclared_class",
            IdMapMismatch => "id_map_mismatch",
        }
    }
}

impl fmt::Display for DiagnosticCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Half-open character range `[start, end)` into a source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Span { start, end }
    }
}

/// A structured, non-fatal report about the input or a derived structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub code: DiagnosticCode,
    pub severity: Severity,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<Span>,
    /// Offending node or edge, when the diagnostic is about one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
}

impl Diagnostic {
    pub fn error(code: DiagnosticCode, message: impl Into<String>) -> Self {
        Diagnostic {
            code,
            severity: Severity::Error,
            message: message.into(),
            span: None,
            target: None,
        }
    }

    pub fn warning(code: DiagnosticCode, message: impl Into<String>) -> Self {
        Diagnostic {
            code,
            severity: Severity::Warning,
            message: message.into(),
            span: None,
            target: None,
        }
    }

    pub fn with_span(mut self, span: Span) -> Self {
        self.span = Some(span);
        self
    }

    pub fn with_target(mut self, target: impl Into<String>) -> Self {
        self.target = Some(target.into());
        self
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{sev}[{}]: {}", self.code, self.message)?;
        if let Some(t) = &self.target {
            write!(f, " (at {t})")?;
        }
        if let Some(s) = self.span {
            write!(f, " [{}..{}]", s.start, s.end)?;
        }
        Ok(())
    }
}

/// True when any diagnostic in the slice has error severity.
pub fn has_errors(diagnostics: &[Diagnostic]) -> bool {
    diagnostics.iter().any(Diagnostic::is_error)
}
