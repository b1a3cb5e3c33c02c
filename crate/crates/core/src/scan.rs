//! Lenient, rule-based tag scanner.
//!
//! Model output is prose with tags sprinkled through it, not an XML
//! document. The scanner only recognizes tags from a given vocabulary and
//! treats every other byte as text. It runs in a single left-to-right pass:
//! every `<` is examined once and a candidate tag can never extend past the
//! next `<`, so the cost is linear in the input.

use crate::diagnostic::{Diagnostic, DiagnosticCode, Span};
use crate::text::decode_entities;

/// The set of tags a scan recognizes.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tags: Vec<VocabTag>,
}

#[derive(Debug, Clone)]
struct VocabTag {
    name: &'static str,
    container: bool,
    parent: Option<&'static str>,
}

impl Vocabulary {
    /// Each entry is `(name, is_container, required_parent)`.
    pub fn new(
        tags: impl IntoIterator<Item = (&'static str, bool, Option<&'static str>)>,
    ) -> Self {
        Vocabulary {
            tags: tags
                .into_iter()
                .map(|(name, container, parent)| VocabTag {
                    name,
                    container,
                    parent,
                })
                .collect(),
        }
    }

    fn lookup(&self, name: &str) -> Option<usize> {
        self.tags
            .iter()
            .position(|t| t.name.eq_ignore_ascii_case(name))
    }
}

/// One recognized element. Spans are character offsets into the scanned
/// text and cover the opening tag through the closing tag.
#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub tag: &'static str,
    /// Attribute names are lowercased; values have entities decoded.
    pub attributes: Vec<(String, String)>,
    /// Raw text between the opening and closing tag.
    pub inner_text: String,
    pub span: Span,
    pub children: Vec<Element>,
}

impl Element {
    pub fn attr(&self, name: &str) -> Option<&str> {
        self.attributes
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
    }
}

#[derive(Debug, Clone, Default)]
pub struct Scan {
    pub elements: Vec<Element>,
    pub diagnostics: Vec<Diagnostic>,
}

enum TagKind {
    Open,
    Close,
    SelfClosing,
}

struct RawTag {
    kind: TagKind,
    vocab_index: usize,
    attributes: Vec<(String, String)>,
    /// Byte offset one past the closing `>`.
    end: usize,
}

struct Frame {
    vocab_index: usize,
    attributes: Vec<(String, String)>,
    open_start: usize,
    content_start: usize,
    children: Vec<Element>,
}

/// Maps byte offsets to char offsets; queries are mostly increasing.
struct CharOffsets<'a> {
    text: &'a str,
    byte: usize,
    chars: usize,
}

impl<'a> CharOffsets<'a> {
    fn new(text: &'a str) -> Self {
        CharOffsets {
            text,
            byte: 0,
            chars: 0,
        }
    }

    fn at(&mut self, byte: usize) -> usize {
        if byte < self.byte {
            self.byte = 0;
            self.chars = 0;
        }
        self.chars += self.text[self.byte..byte].chars().count();
        self.byte = byte;
        self.chars
    }
}

struct Scanner<'a> {
    text: &'a str,
    vocab: &'a Vocabulary,
    offsets: CharOffsets<'a>,
    stack: Vec<Frame>,
    top: Vec<Element>,
    diagnostics: Vec<Diagnostic>,
}

/// Scans `text` for elements of `vocab`.
pub fn scan(text: &str, vocab: &Vocabulary) -> Scan {
    let mut s = Scanner {
        text,
        vocab,
        offsets: CharOffsets::new(text),
        stack: Vec::new(),
        top: Vec::new(),
        diagnostics: Vec::new(),
    };
    s.run();
    Scan {
        elements: s.top,
        diagnostics: s.diagnostics,
    }
}

impl<'a> Scanner<'a> {
    fn run(&mut self) {
        let bytes = self.text.as_bytes();
        let mut i = 0;
        while let Some(off) = bytes[i..].iter().position(|&b| b == b'<') {
            let pos = i + off;
            match parse_tag(self.text, pos, self.vocab) {
                None => i = pos + 1,
                Some(tag) => {
                    i = tag.end;
                    self.handle(pos, tag);
                }
            }
        }
        while let Some(frame) = self.stack.pop() {
            self.unclosed(frame);
        }
    }

    fn handle(&mut self, pos: usize, tag: RawTag) {
        match tag.kind {
            TagKind::Open | TagKind::SelfClosing => {
                let parent = self.vocab.tags[tag.vocab_index].parent;
                while let Some(top) = self.stack.last() {
                    let spec = &self.vocab.tags[top.vocab_index];
                    if spec.container && parent == Some(spec.name) {
                        break;
                    }
                    let frame = self.stack.pop().expect("non-empty stack");
                    self.unclosed(frame);
                }
                let frame = Frame {
                    vocab_index: tag.vocab_index,
                    attributes: tag.attributes,
                    open_start: pos,
                    content_start: tag.end,
                    children: Vec::new(),
                };
                if matches!(tag.kind, TagKind::SelfClosing) {
                    self.finish(frame, tag.end, tag.end);
                } else {
                    self.stack.push(frame);
                }
            }
            TagKind::Close => {
                let found = self
                    .stack
                    .iter()
                    .rposition(|f| f.vocab_index == tag.vocab_index);
                match found {
                    Some(k) => {
                        while self.stack.len() > k + 1 {
                            let frame = self.stack.pop().expect("frame above match");
                            self.unclosed(frame);
                        }
                        let frame = self.stack.pop().expect("matched frame");
                        self.finish(frame, pos, tag.end);
                    }
                    None => {
                        let span = Span::new(self.offsets.at(pos), self.offsets.at(tag.end));
                        let name = self.vocab.tags[tag.vocab_index].name;
                        self.diagnostics.push(
                            Diagnostic::warning(
                                DiagnosticCode::StrayCloseTag,
                                format!("closing </{name}> without a matching opening tag"),
                            )
                            .with_span(span),
                        );
                    }
                }
            }
        }
    }

    fn finish(&mut self, frame: Frame, content_end: usize, end: usize) {
        let span = Span::new(self.offsets.at(frame.open_start), self.offsets.at(end));
        let element = Element {
            tag: self.vocab.tags[frame.vocab_index].name,
            attributes: frame.attributes,
            inner_text: self.text[frame.content_start..content_end].to_string(),
            span,
            children: frame.children,
        };
        match self.stack.last_mut() {
            Some(parent) => parent.children.push(element),
            None => self.top.push(element),
        }
    }

    fn unclosed(&mut self, frame: Frame) {
        let span = Span::new(
            self.offsets.at(frame.open_start),
            self.offsets.at(frame.content_start),
        );
        let name = self.vocab.tags[frame.vocab_index].name;
        self.diagnostics.push(
            Diagnostic::warning(
                DiagnosticCode::UnclosedTag,
                format!("<{name}> is never closed; element dropped"),
            )
            .with_span(span),
        );
    }
}

fn is_name_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b':' | b'.')
}

fn skip_ws(bytes: &[u8], mut i: usize) -> usize {
    while i < bytes.len() && bytes[i].is_ascii_whitespace() {
        i += 1;
    }
    i
}

/// Tries to read a vocabulary tag starting at the `<` at `pos`.
fn parse_tag(text: &str, pos: usize, vocab: &Vocabulary) -> Option<RawTag> {
    let bytes = text.as_bytes();
    let mut i = pos + 1;
    let closing = bytes.get(i) == Some(&b'/');
    if closing {
        i = skip_ws(bytes, i + 1);
    }
    let name_start = i;
    while i < bytes.len() && is_name_byte(bytes[i]) {
        i += 1;
    }
    if i == name_start {
        return None;
    }
    let vocab_index = vocab.lookup(&text[name_start..i])?;

    if closing {
        i = skip_ws(bytes, i);
        return (bytes.get(i) == Some(&b'>')).then_some(RawTag {
            kind: TagKind::Close,
            vocab_index,
            attributes: Vec::new(),
            end: i + 1,
        });
    }

    let mut attributes = Vec::new();
    loop {
        let before = i;
        i = skip_ws(bytes, i);
        match bytes.get(i)? {
            b'>' => {
                return Some(RawTag {
                    kind: TagKind::Open,
                    vocab_index,
                    attributes,
                    end: i + 1,
                })
            }
            b'/' if bytes.get(i + 1) == Some(&b'>') => {
                return Some(RawTag {
                    kind: TagKind::SelfClosing,
                    vocab_index,
                    attributes,
                    end: i + 2,
                })
            }
            _ => {}
        }
        // attributes must be separated from the name and from each other
        if i == before {
            return None;
        }
        let attr_start = i;
        while i < bytes.len() && is_name_byte(bytes[i]) {
            i += 1;
        }
        if i == attr_start {
            return None;
        }
        let name = text[attr_start..i].to_ascii_lowercase();
        let after_name = skip_ws(bytes, i);
        if bytes.get(after_name) != Some(&b'=') {
            attributes.push((name, String::new()));
            continue;
        }
        i = skip_ws(bytes, after_name + 1);
        let value = match *bytes.get(i)? {
            q @ (b'"' | b'\'') => {
                let start = i + 1;
                let len = bytes[start..]
                    .iter()
                    .position(|&b| b == q || b == b'<')?;
                if bytes[start + len] != q {
                    return None;
                }
                i = start + len + 1;
                &text[start..start + len]
            }
            _ => {
                let start = i;
                while i < bytes.len()
                    && !bytes[i].is_ascii_whitespace()
                    && !matches!(bytes[i], b'>' | b'<' | b'"' | b'\'')
                    && !(bytes[i] == b'/' && bytes.get(i + 1) == Some(&b'>'))
                {
                    i += 1;
                }
                if i == start {
                    return None;
                }
                &text[start..i]
            }
        };
        attributes.push((name, decode_entities(value)));
    }
}
