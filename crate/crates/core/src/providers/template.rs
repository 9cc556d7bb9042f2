//! Prompt templates with `{name}` placeholders.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use super::ProviderRole;

const BUILTIN: &str = include_str!("../../templates/prompts.toml");

#[derive(Debug, Error, PartialEq)]
pub enum TemplateError {
    #[error("template {template}: unbound placeholder {{{name}}}")]
    Unbound { template: String, name: String },
    #[error("template {template}: unterminated placeholder")]
    Unterminated { template: String },
    #[error("unknown template {0:?}")]
    Unknown(String),
    #[error("bad template file: {0}")]
    Parse(String),
}

#[derive(Clone, Debug, PartialEq)]
enum Piece {
    Text(String),
    Slot(String),
}

#[derive(Clone, Debug)]
pub struct PromptTemplate {
    pub name: String,
    pub role: ProviderRole,
    pub version: String,
    text: String,
    pieces: Vec<Piece>,
}

impl PromptTemplate {
    pub fn new(
        name: &str,
        role: ProviderRole,
        version: &str,
        text: &str,
    ) -> Result<Self, TemplateError> {
        Ok(PromptTemplate {
            name: name.to_string(),
            role,
            version: version.to_string(),
            text: text.to_string(),
            pieces: parse(name, text)?,
        })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn placeholders(&self) -> Vec<&str> {
        self.pieces
            .iter()
            .filter_map(|p| match p {
                Piece::Slot(s) => Some(s.as_str()),
                Piece::Text(_) => None,
            })
            .collect()
    }

    /// Renders the template. Arguments not named by the template are ignored.
    pub fn render(&self, args: &BTreeMap<String, String>) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(self.text.len());
        for piece in &self.pieces {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(name) => match args.get(name) {
                    Some(v) => out.push_str(v),
                    None => {
                        return Err(TemplateError::Unbound {
                            template: self.name.clone(),
                            name: name.clone(),
                        })
                    }
                },
            }
        }
        Ok(out)
    }
}

fn parse(name: &str, text: &str) -> Result<Vec<Piece>, TemplateError> {
    let mut pieces = Vec::new();
    let mut buf = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '{' if chars.peek() == Some(&'{') => {
                chars.next();
                buf.push('{');
            }
            '}' if chars.peek() == Some(&'}') => {
                chars.next();
                buf.push('}');
            }
            '{' => {
                let mut slot = String::new();
                loop {
                    match chars.next() {
                        Some('}') => break,
                        Some(ch) => slot.push(ch),
                        None => {
                            return Err(TemplateError::Unterminated {
                                template: name.to_string(),
                            })
                        }
                    }
                }
                if !buf.is_empty() {
                    pieces.push(Piece::Text(std::mem::take(&mut buf)));
                }
                pieces.push(Piece::Slot(slot.trim().to_string()));
            }
            _ => buf.push(c),
        }
    }
    if !buf.is_empty() {
        pieces.push(Piece::Text(buf));
    }
    Ok(pieces)
}

#[derive(Deserialize)]
struct TemplateFile {
    version: String,
    templates: BTreeMap<String, TemplateEntry>,
}

#[derive(Deserialize)]
struct TemplateEntry {
    role: ProviderRole,
    text: String,
    version: Option<String>,
}

/// Named templates, loaded from TOML.
#[derive(Clone, Debug)]
pub struct TemplateRegistry {
    version: String,
    templates: BTreeMap<String, PromptTemplate>,
}

impl TemplateRegistry {
    pub fn builtin() -> Self {
        Self::from_toml_str(BUILTIN).expect("builtin templates parse")
    }

    pub fn from_toml_str(src: &str) -> Result<Self, TemplateError> {
        let file: TemplateFile =
            toml::from_str(src).map_err(|e| TemplateError::Parse(e.to_string()))?;
        let mut templates = BTreeMap::new();
        for (name, entry) in file.templates {
            let version = entry.version.unwrap_or_else(|| file.version.clone());
            let text = entry.text.trim_start_matches('\n');
            templates.insert(
                name.clone(),
                PromptTemplate::new(&name, entry.role, &version, text)?,
            );
        }
        Ok(TemplateRegistry {
            version: file.version,
            templates,
        })
    }

    /// Loads a template file on top of the builtin set; entries in the file win.
    pub fn with_overrides(path: &Path) -> Result<Self, TemplateError> {
        let src = std::fs::read_to_string(path).map_err(|e| TemplateError::Parse(e.to_string()))?;
        let overrides = Self::from_toml_str(&src)?;
        let mut reg = Self::builtin();
        reg.version = overrides.version;
        reg.templates.extend(overrides.templates);
        Ok(reg)
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn get(&self, name: &str) -> Result<&PromptTemplate, TemplateError> {
        self.templates
            .get(name)
            .ok_or_else(|| TemplateError::Unknown(name.to_string()))
    }

    pub fn insert(&mut self, template: PromptTemplate) {
        self.templates.insert(template.name.clone(), template);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }
}

impl Default for TemplateRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn renders_and_escapes() {
        let t = PromptTemplate::new("t", ProviderRole::Prover, "v1", "a {x} {{lit}} {y}!").unwrap();
        assert_eq!(t.placeholders(), vec!["x", "y"]);
        assert_eq!(
            t.render(&args(&[("x", "1"), ("y", "2"), ("z", "3")])).unwrap(),
            "a 1 {lit} 2!"
        );
    }

    #[test]
    fn unbound_placeholder_is_error() {
        let t = PromptTemplate::new("t", ProviderRole::Prover, "v1", "{x} and {y}").unwrap();
        assert_eq!(
            t.render(&args(&[("x", "1")])),
            Err(TemplateError::Unbound {
                template: "t".into(),
                name: "y".into()
            })
        );
    }

    #[test]
    fn unterminated_rejected() {
        assert!(PromptTemplate::new("t", ProviderRole::Prover, "v1", "oops {x").is_err());
    }

    #[test]
    fn builtin_registry_covers_every_call() {
        let reg = TemplateRegistry::builtin();
        let expected = [
            ("caption", ProviderRole::Captioner),
            ("declarative", ProviderRole::Decomposer),
            ("decompose", ProviderRole::Decomposer),
            ("fact", ProviderRole::FactExtractor),
            ("triplets", ProviderRole::TripletParser),
            ("retrieve", ProviderRole::Retriever),
            ("navigate", ProviderRole::Navigator),
            ("verify", ProviderRole::Prover),
            ("rewrite", ProviderRole::Rewriter),
            ("blind_answer", ProviderRole::Prover),
        ];
        for (name, role) in expected {
            let t = reg.get(name).unwrap();
            assert_eq!(t.role, role, "{name}");
            assert_eq!(t.version, "v1");
        }
        assert!(matches!(reg.get("nope"), Err(TemplateError::Unknown(_))));
    }
}
