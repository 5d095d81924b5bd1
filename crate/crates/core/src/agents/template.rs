use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("missing binding for placeholder `{0}`")]
    MissingPlaceholder(String),
    #[error("template `{name}`: malformed placeholder at byte {at}")]
    Malformed { name: String, at: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(String),
}

/// A prompt body with `{name}` placeholders. `{{` and `}}` render as literal
/// braces. Every placeholder that appears in the body is required.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    name: String,
    body: String,
    pieces: Vec<Piece>,
    required: BTreeSet<String>,
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, body: impl Into<String>) -> Result<Self, TemplateError> {
        let name = name.into();
        let body = body.into();
        let pieces = parse_pieces(&name, &body)?;
        let required = pieces
            .iter()
            .filter_map(|p| match p {
                Piece::Slot(s) => Some(s.clone()),
                Piece::Text(_) => None,
            })
            .collect();
        Ok(Self {
            name,
            body,
            pieces,
            required,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn required_placeholders(&self) -> &BTreeSet<String> {
        &self.required
    }

    pub fn render(&self, bindings: &HashMap<&str, String>) -> Result<String, TemplateError> {
        if let Some(missing) = self.required.iter().find(|r| !bindings.contains_key(r.as_str())) {
            return Err(TemplateError::MissingPlaceholder(missing.clone()));
        }
        let mut out = String::with_capacity(self.body.len());
        for piece in &self.pieces {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(s) => out.push_str(&bindings[s.as_str()]),
            }
        }
        Ok(out)
    }
}

fn parse_pieces(name: &str, body: &str) -> Result<Vec<Piece>, TemplateError> {
    let malformed = |at| TemplateError::Malformed {
        name: name.to_string(),
        at,
    };
    let mut pieces = Vec::new();
    let mut text = String::new();
    let mut chars = body.char_indices().peekable();
    while let Some((at, c)) = chars.next() {
        match c {
            '{' if chars.peek().map(|&(_, n)| n) == Some('{') => {
                chars.next();
                text.push('{');
            }
            '}' if chars.peek().map(|&(_, n)| n) == Some('}') => {
                chars.next();
                text.push('}');
            }
            '{' => {
                let mut ident = String::new();
                loop {
                    match chars.next() {
                        Some((_, '}')) => break,
                        Some((_, ch)) if ch.is_ascii_alphanumeric() || ch == '_' => ident.push(ch),
                        _ => return Err(malformed(at)),
                    }
                }
                if ident.is_empty() {
                    return Err(malformed(at));
                }
                if !text.is_empty() {
                    pieces.push(Piece::Text(std::mem::take(&mut text)));
                }
                pieces.push(Piece::Slot(ident));
            }
            '}' => return Err(malformed(at)),
            _ => text.push(c),
        }
    }
    if !text.is_empty() {
        pieces.push(Piece::Text(text));
    }
    Ok(pieces)
}

/// Builds a binding map from `(name, value)` pairs.
pub fn bindings<const N: usize>(pairs: [(&'static str, String); N]) -> HashMap<&'static str, String> {
    pairs.into_iter().collect()
}
