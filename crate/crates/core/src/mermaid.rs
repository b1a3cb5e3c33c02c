//! Mermaid flowchart emission.
//!
//! Output is one statement per line, `\n` line endings, and byte-for-byte
//! deterministic for a given trace and config. Shapes and style classes are
//! fixed by node kind; colours come from the configurable [`Theme`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostic::{Diagnostic, DiagnosticCode as Code, Span};
use crate::trace::{NodeKind, ReasoningTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    TopDown,
    LeftRight,
}

impl Direction {
    fn keyword(self) -> &'static str {
        match self {
            Direction::TopDown => "TD",
            Direction::LeftRight => "LR",
        }
    }
}

/// Fill colours for the six node roles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Theme {
    pub question: String,
    pub step: String,
    pub reflection: String,
    pub subquestion: String,
    #[serde(rename = "final")]
    pub final_answer: String,
    pub selected: String,
}

impl Default for Theme {
    fn default() -> Self {
        Theme {
            question: "#93c5fd".into(),
            step: "#f8fafc".into(),
            reflection: "#fde68a".into(),
            subquestion: "#dbeafe".into(),
            final_answer: "#86efac".into(),
            selected: "#1d4ed8".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VisualizationConfig {
    pub direction: Direction,
    pub wrap_width: usize,
    pub show_scores: bool,
    pub max_label_chars: usize,
    pub theme: Theme,
}

impl Default for VisualizationConfig {
    fn default() -> Self {
        VisualizationConfig {
            direction: Direction::TopDown,
            wrap_width: 30,
            show_scores: true,
            max_label_chars: 240,
            theme: Theme::default(),
        }
    }
}

pub const MIN_WRAP_WIDTH: usize = 8;
pub const MAX_WRAP_WIDTH: usize = 120;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EmitError {
    #[error("invalid visualization config: {0}")]
    InvalidConfig(String),
}

impl VisualizationConfig {
    pub fn validate(&self) -> Result<(), EmitError> {
        if !(MIN_WRAP_WIDTH..=MAX_WRAP_WIDTH).contains(&self.wrap_width) {
            return Err(EmitError::InvalidConfig(format!(
                "wrap_width must be between {MIN_WRAP_WIDTH} and {MAX_WRAP_WIDTH}, got {}",
                self.wrap_width
            )));
        }
        if self.wrap_width > self.max_label_chars {
            return Err(EmitError::InvalidConfig(format!(
                "wrap_width ({}) must not exceed max_label_chars ({})",
                self.wrap_width, self.max_label_chars
            )));
        }
        let t = &self.theme;
        for (slot, colour) in [
            ("question", &t.question),
            ("step", &t.step),
            ("reflection", &t.reflection),
            ("subquestion", &t.subquestion),
            ("final", &t.final_answer),
            ("selected", &t.selected),
        ] {
            if !is_hex_colour(colour) {
                return Err(EmitError::InvalidConfig(format!(
                    "theme.{slot} must be a hex colour like #a1b2c3, got `{colour}`"
                )));
            }
        }
        Ok(())
    }
}

fn is_hex_colour(s: &str) -> bool {
    s.strip_prefix('#').is_some_and(|hex| {
        matches!(hex.len(), 3 | 4 | 6 | 8) && hex.chars().all(|c| c.is_ascii_hexdigit())
    })
}

/// Emitted flowchart text plus the diagram-id to trace-id mapping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagramDocument {
    pub text: String,
    pub id_map: BTreeMap<String, String>,
    /// `classDef` statements in emission order.
    pub styles: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum StyleClass {
    Question,
    Step,
    Candidate,
    Reflection,
    SubQuestion,
    Answer,
    Final,
    Selected,
}

impl StyleClass {
    const ORDER: [StyleClass; 8] = [
        StyleClass::Question,
        StyleClass::Step,
        StyleClass::Candidate,
        StyleClass::Reflection,
        StyleClass::SubQuestion,
        StyleClass::Answer,
        StyleClass::Final,
        StyleClass::Selected,
    ];

    fn name(self) -> &'static str {
        match self {
            StyleClass::Question => "question",
            StyleClass::Step => "step",
            StyleClass::Candidate => "candidate",
            StyleClass::Reflection => "reflection",
            StyleClass::SubQuestion => "subquestion",
            StyleClass::Answer => "answer",
            StyleClass::Final => "final",
            StyleClass::Selected => "selected",
        }
    }

    fn definition(self, theme: &Theme) -> String {
        let (fill, text, width) = match self {
            StyleClass::Question => (&theme.question, "#0f172a", 1),
            StyleClass::Step | StyleClass::Candidate => (&theme.step, "#0f172a", 1),
            StyleClass::Reflection => (&theme.reflection, "#0f172a", 1),
            StyleClass::SubQuestion => (&theme.subquestion, "#0f172a", 1),
            StyleClass::Answer | StyleClass::Final => (&theme.final_answer, "#0f172a", 1),
            StyleClass::Selected => (&theme.selected, "#ffffff", 2),
        };
        format!(
            "classDef {} fill:{fill},stroke:#334155,stroke-width:{width}px,color:{text}",
            self.name()
        )
    }
}

fn style_of(kind: NodeKind, selected: bool) -> StyleClass {
    match kind {
        NodeKind::Question => StyleClass::Question,
        NodeKind::FinalAnswer => StyleClass::Final,
        _ if selected => StyleClass::Selected,
        NodeKind::Reflection | NodeKind::Improvement => StyleClass::Reflection,
        NodeKind::SubQuestion => StyleClass::SubQuestion,
        NodeKind::SubAnswer => StyleClass::Answer,
        NodeKind::Candidate => StyleClass::Candidate,
        NodeKind::Step | NodeKind::Attempt => StyleClass::Step,
    }
}

/// Opening and closing delimiters of a node shape.
fn shape_of(kind: NodeKind) -> (&'static str, &'static str) {
    match kind {
        NodeKind::Question | NodeKind::FinalAnswer => ("([", "])"),
        NodeKind::Reflection | NodeKind::Improvement => ("(", ")"),
        _ => ("[", "]"),
    }
}

/// Renders `trace` as a Mermaid flowchart.
pub fn emit(trace: &ReasoningTrace, config: &VisualizationConfig) -> Result<DiagramDocument, EmitError> {
    config.validate()?;
    let selected: HashSet<&str> = trace
        .selected_path
        .iter()
        .flatten()
        .map(String::as_str)
        .collect();
    let diagram_ids: HashMap<&str, String> = trace
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.id.as_str(), format!("n{i}")))
        .collect();

    let mut text = String::with_capacity(64 + trace.nodes.len() * 64);
    let _ = writeln!(text, "flowchart {}", config.direction.keyword());

    let mut id_map = BTreeMap::new();
    let mut members: HashMap<StyleClass, Vec<&str>> = HashMap::new();
    for n in &trace.nodes {
        let did = &diagram_ids[n.id.as_str()];
        id_map.insert(did.clone(), n.id.clone());
        let (open, close) = shape_of(n.kind);
        let mut lines: Vec<String> =
            wrap_lines(&n.label, config.wrap_width, config.max_label_chars)
                .iter()
                .map(|l| escape_label(l))
                .collect();
        if config.show_scores {
            if let Some(s) = n.score {
                lines.push(format!("(score: {s:.2})"));
            }
        }
        let label = if lines.is_empty() {
            " ".to_string()
        } else {
            lines.join("<br/>")
        };
        let _ = writeln!(text, "    {did}{open}\"{label}\"{close}");
        members
            .entry(style_of(n.kind, selected.contains(n.id.as_str())))
            .or_default()
            .push(did);
    }

    for e in &trace.edges {
        let (Some(from), Some(to)) = (diagram_ids.get(e.from.as_str()), diagram_ids.get(e.to.as_str()))
        else {
            continue;
        };
        let arrow = if e.on_selected_path { "==>" } else { "-->" };
        let _ = writeln!(text, "    {from} {arrow} {to}");
    }

    let mut styles = Vec::new();
    for class in StyleClass::ORDER {
        if members.contains_key(&class) {
            let def = class.definition(&config.theme);
            let _ = writeln!(text, "    {def}");
            styles.push(def);
        }
    }
    for class in StyleClass::ORDER {
        if let Some(ids) = members.get(&class) {
            let _ = writeln!(text, "    class {} {}", ids.join(","), class.name());
        }
    }

    Ok(DiagramDocument {
        text,
        id_map,
        styles,
    })
}

/// Makes text safe inside a double-quoted Mermaid label.
pub fn escape_label(label: &str) -> String {
    let mut out = String::with_capacity(label.len());
    for c in label.chars() {
        match c {
            '"' => out.push_str("#quot;"),
            '<' => out.push_str("#lt;"),
            '>' => out.push_str("#gt;"),
            '&' => out.push_str("#amp;"),
            '\n' => out.push_str("<br/>"),
            _ => out.push(c),
        }
    }
    out
}

/// Truncates to `max_label_chars` (appending `…`), then wraps greedily at
/// `wrap_width` characters, joining lines with `<br/>`.
pub fn wrap_label(label: &str, wrap_width: usize, max_label_chars: usize) -> String {
    wrap_lines(label, wrap_width, max_label_chars).join("<br/>")
}

fn wrap_lines(label: &str, wrap_width: usize, max_label_chars: usize) -> Vec<String> {
    let width = wrap_width.max(1);
    let truncated: String;
    let text = if label.chars().count() > max_label_chars {
        truncated = label.chars().take(max_label_chars).chain(['…']).collect();
        truncated.as_str()
    } else {
        label
    };

    let mut lines = Vec::new();
    let mut line = String::new();
    let mut line_len = 0;
    for word in text.split_whitespace() {
        let word_len = word.chars().count();
        if word_len > width {
            if line_len > 0 {
                lines.push(std::mem::take(&mut line));
            }
            let chars: Vec<char> = word.chars().collect();
            let mut chunks = chars.chunks(width).peekable();
            while let Some(chunk) = chunks.next() {
                if chunks.peek().is_some() {
                    lines.push(chunk.iter().collect());
                } else {
                    line = chunk.iter().collect();
                    line_len = chunk.len();
                }
            }
        } else if line_len == 0 {
            line.push_str(word);
            line_len = word_len;
        } else if line_len + 1 + word_len <= width {
            line.push(' ');
            line.push_str(word);
            line_len += 1 + word_len;
        } else {
            lines.push(std::mem::replace(&mut line, word.to_string()));
            line_len = word_len;
        }
    }
    if line_len > 0 {
        lines.push(line);
    }
    lines
}

/// Checks that `doc` stays within the flowchart subset the emitter
/// produces: header, node/edge/class statements, declared references,
/// balanced brackets, and an id map matching the declared nodes.
pub fn validate_diagram(doc: &DiagramDocument) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let mut nodes: Vec<(String, Span)> = Vec::new();
    let mut node_set: HashSet<String> = HashSet::new();
    let mut class_defs: HashSet<String> = HashSet::new();
    let mut edge_refs: Vec<(String, Span)> = Vec::new();
    let mut class_refs: Vec<(Vec<String>, String, Span)> = Vec::new();

    let mut offset = 0;
    let mut saw_header = false;
    for raw_line in doc.text.split('\n') {
        let len = raw_line.chars().count();
        let span = Span::new(offset, offset + len);
        offset += len + 1;
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with("%%") {
            continue;
        }
        if !saw_header {
            saw_header = true;
            let mut parts = line.split_whitespace();
            let ok = parts.next() == Some("flowchart")
                && matches!(parts.next(), Some("TD" | "TB" | "LR" | "RL" | "BT"))
                && parts.next().is_none();
            if !ok {
                diags.push(
                    Diagnostic::error(Code::MissingHeader, "first line must be `flowchart TD|LR`")
                        .with_span(span),
                );
            } else {
                continue;
            }
        }
        match statement(line) {
            Ok(Statement::Node(id)) => {
                if !node_set.insert(id.clone()) {
                    diags.push(
                        Diagnostic::error(Code::DuplicateNode, format!("node `{id}` declared twice"))
                            .with_span(span),
                    );
                }
                nodes.push((id, span));
            }
            Ok(Statement::Edge(a, b)) => {
                edge_refs.push((a, span));
                edge_refs.push((b, span));
            }
            Ok(Statement::ClassDef(name)) => {
                class_defs.insert(name);
            }
            Ok(Statement::Class(ids, name)) => class_refs.push((ids, name, span)),
            Err(code) => diags.push(
                Diagnostic::error(code, format!("cannot read statement `{line}`")).with_span(span),
            ),
        }
    }
    if !saw_header {
        diags.push(Diagnostic::error(Code::MissingHeader, "diagram text is empty"));
    }

    for (id, span) in edge_refs {
        if !node_set.contains(&id) {
            diags.push(
                Diagnostic::error(Code::UndeclaredNode, format!("edge refers to undeclared node `{id}`"))
                    .with_span(span)
                    .with_target(id),
            );
        }
    }
    for (ids, name, span) in class_refs {
        if !class_defs.contains(&name) {
            diags.push(
                Diagnostic::error(Code::UndeclaredClass, format!("class `{name}` has no classDef"))
                    .with_span(span),
            );
        }
        for id in ids {
            if !node_set.contains(&id) {
                diags.push(
                    Diagnostic::error(
                        Code::UndeclaredNode,
                        format!("class assignment names undeclared node `{id}`"),
                    )
                    .with_span(span)
                    .with_target(id),
                );
            }
        }
    }

    let mapped: HashSet<&String> = doc.id_map.keys().collect();
    let declared: HashSet<&String> = nodes.iter().map(|(id, _)| id).collect();
    let targets: HashSet<&String> = doc.id_map.values().collect();
    if mapped != declared || targets.len() != doc.id_map.len() {
        diags.push(Diagnostic::error(
            Code::IdMapMismatch,
            "id map does not match the declared nodes one-to-one",
        ));
    }
    diags
}

enum Statement {
    Node(String),
    Edge(String, String),
    ClassDef(String),
    Class(Vec<String>, String),
}

fn is_id(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn statement(line: &str) -> Result<Statement, Code> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    match tokens.as_slice() {
        ["classDef", name, _style, ..] if is_id(name) => {
            return Ok(Statement::ClassDef(name.to_string()))
        }
        ["class", ids, name] if is_id(name) => {
            let ids: Vec<String> = ids.split(',').map(str::to_string).collect();
            if ids.iter().all(|i| is_id(i)) {
                return Ok(Statement::Class(ids, name.to_string()));
            }
            return Err(Code::MalformedStatement);
        }
        [a, "-->" | "==>", b] if is_id(a) && is_id(b) => {
            return Ok(Statement::Edge(a.to_string(), b.to_string()))
        }
        _ => {}
    }

    let id_len = line
        .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
        .ok_or(Code::MalformedStatement)?;
    let (id, rest) = line.split_at(id_len);
    if id.is_empty() {
        return Err(Code::MalformedStatement);
    }
    let q1 = rest.find('"').ok_or(Code::MalformedStatement)?;
    let q2 = rest.rfind('"').ok_or(Code::MalformedStatement)?;
    if q1 == q2 || rest[q1 + 1..q2].contains('"') {
        return Err(Code::MalformedStatement);
    }
    let (open, close) = (&rest[..q1], &rest[q2 + 1..]);
    if !brackets_balance(open, close) {
        return Err(Code::UnbalancedBrackets);
    }
    match (open, close) {
        ("([", "])") | ("[", "]") | ("(", ")") => Ok(Statement::Node(id.to_string())),
        _ => Err(Code::MalformedStatement),
    }
}

fn brackets_balance(open: &str, close: &str) -> bool {
    let mut stack = Vec::new();
    for c in open.chars().chain(close.chars()) {
        match c {
            '(' | '[' | '{' => stack.push(c),
            ')' | ']' | '}' => {
                let want = match c {
                    ')' => '(',
                    ']' => '[',
                    _ => '{',
                };
                if stack.pop() != Some(want) {
                    return false;
                }
            }
            _ => return false,
        }
    }
    stack.is_empty()
}
