//! BIO tags and entity spans.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A BIO tag. Classes are `1..=C`; `O` is class 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tag {
    O,
    B(usize),
    I(usize),
}

impl Tag {
    /// Collapsed class id: 0 for `O`, otherwise the entity class.
    pub fn class(self) -> usize {
        match self {
            Tag::O => 0,
            Tag::B(c) | Tag::I(c) => c,
        }
    }

    /// Render with class names, e.g. `B-PER`. `names[0]` is the name of class 1.
    pub fn render(self, names: &[String]) -> String {
        match self {
            Tag::O => "O".to_string(),
            Tag::B(c) => format!("B-{}", names[c - 1]),
            Tag::I(c) => format!("I-{}", names[c - 1]),
        }
    }

    /// Parse `O`, `B-X` or `I-X` against a list of class names.
    pub fn parse(s: &str, names: &[String]) -> Result<Tag> {
        if s == "O" {
            return Ok(Tag::O);
        }
        let (prefix, name) = s
            .split_once('-')
            .ok_or_else(|| Error::validation(format!("malformed BIO tag {s:?}")))?;
        let class = names.iter().position(|n| n == name).ok_or_else(|| {
            Error::validation(format!("unknown entity type {name:?} in tag {s:?}"))
        })? + 1;
        match prefix {
            "B" => Ok(Tag::B(class)),
            "I" => Ok(Tag::I(class)),
            _ => Err(Error::validation(format!("malformed BIO tag {s:?}"))),
        }
    }
}

/// True when every `I-X` continues a `B-X` or `I-X`.
pub fn is_valid_bio(tags: &[Tag]) -> bool {
    let mut prev = Tag::O;
    for &t in tags {
        if let Tag::I(c) = t {
            if prev.class() != c {
                return false;
            }
        }
        prev = t;
    }
    true
}

/// An entity occurrence: inclusive token range within one sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub sentence: usize,
    pub start: usize,
    pub end: usize,
    pub class: usize,
}

impl Span {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Maximal runs of one positive class become one span each; class 0 breaks runs.
pub fn decode_spans_from_classes(sentence: usize, classes: &[usize]) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut i = 0;
    while i < classes.len() {
        let c = classes[i];
        if c == 0 {
            i += 1;
            continue;
        }
        let start = i;
        while i + 1 < classes.len() && classes[i + 1] == c {
            i += 1;
        }
        spans.push(Span {
            sentence,
            start,
            end: i,
            class: c,
        });
        i += 1;
    }
    spans
}

/// Spans decoded from BIO tags plus the number of invalid `I-X` tags that were
/// treated as `B-X`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedSpans {
    pub spans: Vec<Span>,
    pub repairs: usize,
}

pub fn decode_spans_from_bio(sentence: usize, tags: &[Tag]) -> DecodedSpans {
    let mut spans: Vec<Span> = Vec::new();
    let mut repairs = 0;
    let mut open: Option<Span> = None;
    for (i, &t) in tags.iter().enumerate() {
        match t {
            Tag::O => {
                spans.extend(open.take());
            }
            Tag::B(c) => {
                spans.extend(open.take());
                open = Some(Span {
                    sentence,
                    start: i,
                    end: i,
                    class: c,
                });
            }
            Tag::I(c) => match open.as_mut() {
                Some(span) if span.class == c => span.end = i,
                _ => {
                    repairs += 1;
                    spans.extend(open.take());
                    open = Some(Span {
                        sentence,
                        start: i,
                        end: i,
                        class: c,
                    });
                }
            },
        }
    }
    spans.extend(open);
    DecodedSpans { spans, repairs }
}

/// Write spans of one sentence as BIO tags. Spans must not overlap.
pub fn encode_spans_to_bio(len: usize, spans: &[Span]) -> Vec<Tag> {
    let mut tags = vec![Tag::O; len];
    for s in spans {
        tags[s.start] = Tag::B(s.class);
        for t in &mut tags[s.start + 1..=s.end] {
            *t = Tag::I(s.class);
        }
    }
    tags
}
