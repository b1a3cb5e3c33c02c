//! Per-method tag vocabularies, prompt scaffolds and the meta-selector
//! prompt.
//!
//! Prompt templates live in `prompts/*.txt` next to this crate so they can
//! be edited without touching code. Placeholders are `{question}` and
//! `{param:NAME}`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scan::{scan, Vocabulary};
use crate::trace::{NodeKind, ReasoningMethod};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AttrSpec {
    pub name: &'static str,
    pub required: bool,
}

/// One tag the model is told to emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TagSpec {
    pub name: &'static str,
    pub attributes: &'static [AttrSpec],
    pub min_occurs: u32,
    /// `None` means unbounded.
    pub max_occurs: Option<u32>,
    /// Tag this one must be nested in; `None` means top level.
    pub parent: Option<&'static str>,
    /// Node kind the element becomes, if any. Containers and the selected
    /// path produce no node.
    pub kind: Option<NodeKind>,
    /// Whether known tags may appear inside this one.
    pub container: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MethodGrammar {
    pub method: ReasoningMethod,
    pub tags: &'static [TagSpec],
    pub prompt_template: &'static str,
}

impl MethodGrammar {
    pub fn tag(&self, name: &str) -> Option<&'static TagSpec> {
        self.tags.iter().find(|t| t.name == name)
    }

    pub fn tag_names(&self) -> impl Iterator<Item = &'static str> {
        self.tags.iter().map(|t| t.name)
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::new(
            self.tags
                .iter()
                .map(|t| (t.name, t.container, t.parent)),
        )
    }
}

const fn leaf(name: &'static str, kind: NodeKind) -> TagSpec {
    TagSpec {
        name,
        attributes: &[],
        min_occurs: 0,
        max_occurs: None,
        parent: None,
        kind: Some(kind),
        container: false,
    }
}

const FINAL: TagSpec = TagSpec {
    max_occurs: Some(1),
    ..leaf("final_answer", NodeKind::FinalAnswer)
};

const COT_TAGS: &[TagSpec] = &[
    TagSpec {
        min_occurs: 1,
        ..leaf("step", NodeKind::Step)
    },
    FINAL,
];

const SELF_REFINE_TAGS: &[TagSpec] = &[
    TagSpec {
        min_occurs: 1,
        max_occurs: Some(1),
        ..leaf("attempt", NodeKind::Attempt)
    },
    leaf("reflection", NodeKind::Reflection),
    leaf("improved", NodeKind::Improvement),
    FINAL,
];

const LEAST_TO_MOST_TAGS: &[TagSpec] = &[
    TagSpec {
        min_occurs: 1,
        ..leaf("subquestion", NodeKind::SubQuestion)
    },
    leaf("subanswer", NodeKind::SubAnswer),
    FINAL,
];

const SELF_CONSISTENCY_TAGS: &[TagSpec] = &[
    TagSpec {
        name: "chain",
        attributes: &[AttrSpec {
            name: "index",
            required: true,
        }],
        min_occurs: 1,
        max_occurs: None,
        parent: None,
        kind: None,
        container: true,
    },
    TagSpec {
        parent: Some("chain"),
        ..leaf("step", NodeKind::Step)
    },
    TagSpec {
        parent: Some("chain"),
        max_occurs: Some(1),
        ..leaf("answer", NodeKind::Candidate)
    },
    FINAL,
];

const TREE_OF_THOUGHTS_TAGS: &[TagSpec] = &[
    TagSpec {
        attributes: &[
            AttrSpec {
                name: "id",
                required: true,
            },
            AttrSpec {
                name: "parent",
                required: true,
            },
            AttrSpec {
                name: "score",
                required: false,
            },
        ],
        min_occurs: 1,
        ..leaf("node", NodeKind::Candidate)
    },
    TagSpec {
        attributes: &[AttrSpec {
            name: "parent",
            required: false,
        }],
        ..FINAL
    },
];

const BEAM_SEARCH_TAGS: &[TagSpec] = &[
    TagSpec {
        attributes: &[
            AttrSpec {
                name: "id",
                required: true,
            },
            AttrSpec {
                name: "parent",
                required: true,
            },
            AttrSpec {
                name: "level",
                required: true,
            },
            AttrSpec {
                name: "score",
                required: true,
            },
        ],
        min_occurs: 1,
        ..leaf("node", NodeKind::Candidate)
    },
    TagSpec {
        name: "selected_path",
        attributes: &[],
        min_occurs: 0,
        max_occurs: Some(1),
        parent: None,
        kind: None,
        container: false,
    },
    FINAL,
];

/// The static grammar of `method`.
pub fn grammar_for(method: ReasoningMethod) -> MethodGrammar {
    let (tags, prompt_template) = match method {
        ReasoningMethod::ChainOfThoughts => {
            (COT_TAGS, include_str!("../prompts/chain_of_thoughts.txt"))
        }
        ReasoningMethod::SelfRefine => (SELF_REFINE_TAGS, include_str!("../prompts/self_refine.txt")),
        ReasoningMethod::LeastToMost => {
            (LEAST_TO_MOST_TAGS, include_str!("../prompts/least_to_most.txt"))
        }
        ReasoningMethod::SelfConsistency => (
            SELF_CONSISTENCY_TAGS,
            include_str!("../prompts/self_consistency.txt"),
        ),
        ReasoningMethod::TreeOfThoughts => (
            TREE_OF_THOUGHTS_TAGS,
            include_str!("../prompts/tree_of_thoughts.txt"),
        ),
        ReasoningMethod::BeamSearch => (BEAM_SEARCH_TAGS, include_str!("../prompts/beam_search.txt")),
    };
    MethodGrammar {
        method,
        tags,
        prompt_template,
    }
}

const META_TEMPLATE: &str = include_str!("../prompts/meta.txt");

/// Upper bound on `beam_width * max_depth`.
pub const MAX_TREE_SIZE: u32 = 64;

/// Method parameters. Only the fields relevant to a method are used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodParams {
    pub num_chains: u32,
    pub beam_width: u32,
    pub max_depth: u32,
    pub max_refinements: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_subquestions_hint: Option<u32>,
}

impl Default for MethodParams {
    fn default() -> Self {
        MethodParams {
            num_chains: 3,
            beam_width: 2,
            max_depth: 3,
            max_refinements: 2,
            num_subquestions_hint: None,
        }
    }
}

impl MethodParams {
    pub fn validate(&self) -> Result<(), GrammarError> {
        let named = [
            ("num_chains", self.num_chains),
            ("beam_width", self.beam_width),
            ("max_depth", self.max_depth),
            ("max_refinements", self.max_refinements),
            (
                "num_subquestions_hint",
                self.num_subquestions_hint.unwrap_or(1),
            ),
        ];
        if let Some((name, _)) = named.iter().find(|(_, v)| *v == 0) {
            return Err(GrammarError::InvalidParams(format!("{name} must be at least 1")));
        }
        if self.beam_width.saturating_mul(self.max_depth) > MAX_TREE_SIZE {
            return Err(GrammarError::InvalidParams(format!(
                "beam_width * max_depth must not exceed {MAX_TREE_SIZE}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GrammarError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("invalid method parameters: {0}")]
    InvalidParams(String),
}

/// Renders the prompt that elicits `method`'s tag grammar for `question`.
pub fn build_prompt(
    method: ReasoningMethod,
    question: &str,
    params: &MethodParams,
) -> Result<String, GrammarError> {
    let question = question.trim();
    if question.is_empty() {
        return Err(GrammarError::EmptyQuestion);
    }
    params.validate()?;
    let template = grammar_for(method).prompt_template;
    Ok(render(template, question, |name| match name {
        "num_chains" => Some(params.num_chains.to_string()),
        "beam_width" => Some(params.beam_width.to_string()),
        "max_depth" => Some(params.max_depth.to_string()),
        "max_refinements" => Some(params.max_refinements.to_string()),
        "subquestion_directive" => Some(match params.num_subquestions_hint {
            Some(n) => format!("Break the question into exactly {n} sub-questions."),
            None => "Break the question into as many sub-questions as it needs.".to_string(),
        }),
        _ => None,
    }))
}

/// Prompt asking the model to pick one of the six methods for `question`.
pub fn build_meta_prompt(question: &str) -> Result<String, GrammarError> {
    let question = question.trim();
    if question.is_empty() {
        return Err(GrammarError::EmptyQuestion);
    }
    Ok(render(META_TEMPLATE, question, |_| None))
}

// Substitutes placeholders in a single pass so that braces inside the
// question are never re-expanded. Unknown placeholders are left verbatim.
fn render(template: &str, question: &str, param: impl Fn(&str) -> Option<String>) -> String {
    let mut out = String::with_capacity(template.len() + question.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open..];
        let Some(close) = after.find('}') else {
            out.push_str(after);
            return out;
        };
        let name = &after[1..close];
        let replacement = if name == "question" {
            Some(question.to_string())
        } else {
            name.strip_prefix("param:").and_then(&param)
        };
        match replacement {
            Some(r) => out.push_str(&r),
            None => out.push_str(&after[..=close]),
        }
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetaSelectionError {
    #[error("no <selected_method> element found")]
    NoSelectionFound,
    #[error("selected method `{0}` is not one of the six supported methods")]
    UnknownMethod(String),
}

/// Reads the method named by the first `<selected_method>` element.
pub fn parse_meta_selection(raw: &str) -> Result<ReasoningMethod, MetaSelectionError> {
    let vocab = Vocabulary::new([("selected_method", false, None)]);
    let scanned = scan(raw, &vocab);
    let first = scanned
        .elements
        .first()
        .ok_or(MetaSelectionError::NoSelectionFound)?;
    let content = crate::text::decode_entities(&first.inner_text);
    ReasoningMethod::from_lenient(&content)
        .ok_or_else(|| MetaSelectionError::UnknownMethod(content.trim().to_string()))
}
