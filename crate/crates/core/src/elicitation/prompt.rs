use std::fmt;
use std::path::Path;
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;
use thiserror::Error;

use super::persona::{InferredPersona, PersonaSpec};
use crate::corpus::Dilemma;
use crate::profiling::ValueProfile;

#[derive(Debug, Error, PartialEq)]
pub enum TemplateError {
    #[error("template placeholder {{{0}}} has no value")]
    Missing(String),
    #[error("prompt kind {0} needs a {1} context")]
    MissingContext(PromptKind, &'static str),
    #[error("reading template {path}: {message}")]
    Io { path: String, message: String },
    #[error("unknown prompt kind {0:?}")]
    UnknownKind(String),
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z_]+)\}").expect("valid regex"))
}

/// Substitutes `{name}` placeholders. Every lowercase placeholder in the
/// template must have a value; other braces are left alone.
pub fn fill_template(template: &str, values: &[(&str, &str)]) -> Result<String, TemplateError> {
    let mut missing = None;
    let out = placeholder_re().replace_all(template, |caps: &regex::Captures<'_>| {
        let name = &caps[1];
        match values.iter().find(|(k, _)| *k == name) {
            Some((_, v)) => v.to_string(),
            None => {
                missing.get_or_insert_with(|| name.to_string());
                String::new()
            }
        }
    });
    match missing {
        Some(name) => Err(TemplateError::Missing(name)),
        None => Ok(out.into_owned()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    ZeroShot,
    PersonaSampled,
    PersonaInferred,
    ProfileConditioned,
}

impl PromptKind {
    pub const ALL: [PromptKind; 4] = [
        PromptKind::ZeroShot,
        PromptKind::PersonaSampled,
        PromptKind::PersonaInferred,
        PromptKind::ProfileConditioned,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::ZeroShot => "zero_shot",
            PromptKind::PersonaSampled => "persona_sampled",
            PromptKind::PersonaInferred => "persona_inferred",
            PromptKind::ProfileConditioned => "profile_conditioned",
        }
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptKind {
    type Err = TemplateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PromptKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| TemplateError::UnknownKind(s.to_string()))
    }
}

/// The four elicitation templates. Defaults ship with the crate; a template
/// directory may override any of them with `<kind>.txt`.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplates {
    pub zero_shot: String,
    pub persona_sampled: String,
    pub persona_inferred: String,
    pub profile_conditioned: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            zero_shot: include_str!("../../templates/zero_shot.txt").to_string(),
            persona_sampled: include_str!("../../templates/persona_sampled.txt").to_string(),
            persona_inferred: include_str!("../../templates/persona_inferred.txt").to_string(),
            profile_conditioned: include_str!("../../templates/profile_conditioned.txt").to_string(),
        }
    }
}

impl PromptTemplates {
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut out = Self::default();
        for kind in PromptKind::ALL {
            let path = dir.join(format!("{kind}.txt"));
            if path.exists() {
                let text = std::fs::read_to_string(&path).map_err(|e| TemplateError::Io {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
                *out.get_mut(kind) = text;
            }
        }
        Ok(out)
    }

    pub fn get(&self, kind: PromptKind) -> &str {
        match kind {
            PromptKind::ZeroShot => &self.zero_shot,
            PromptKind::PersonaSampled => &self.persona_sampled,
            PromptKind::PersonaInferred => &self.persona_inferred,
            PromptKind::ProfileConditioned => &self.profile_conditioned,
        }
    }

    fn get_mut(&mut self, kind: PromptKind) -> &mut String {
        match kind {
            PromptKind::ZeroShot => &mut self.zero_shot,
            PromptKind::PersonaSampled => &mut self.persona_sampled,
            PromptKind::PersonaInferred => &mut self.persona_inferred,
            PromptKind::ProfileConditioned => &mut self.profile_conditioned,
        }
    }
}

/// Per-query conditioning information.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PromptContext {
    None,
    Persona(PersonaSpec),
    Inferred(InferredPersona),
    Profile(ValueProfile),
}

pub fn render_prompt(
    templates: &PromptTemplates,
    kind: PromptKind,
    d: &Dilemma,
    context: &PromptContext,
) -> Result<String, TemplateError> {
    let template = templates.get(kind);
    let body = d.body.as_str();
    match (kind, context) {
        (PromptKind::ZeroShot, _) => fill_template(template, &[("body", body)]),
        (PromptKind::PersonaSampled, PromptContext::Persona(p)) => {
            let age = p.age.to_string();
            fill_template(template, &[("body", body), ("age", &age), ("gender", &p.gender)])
        }
        (PromptKind::PersonaInferred, PromptContext::Inferred(p)) => {
            let age = format!("{:+.2}", p.age_score);
            let gender = format!("{:+.2}", p.gender_score);
            let partisanship = format!("{:+.2}", p.partisanship);
            fill_template(
                template,
                &[
                    ("body", body),
                    ("age_score", &age),
                    ("gender_score", &gender),
                    ("partisanship_score", &partisanship),
                ],
            )
        }
        (PromptKind::ProfileConditioned, PromptContext::Profile(profile)) => {
            let lines = profile.render_lines();
            fill_template(template, &[("body", body), ("profile_lines", &lines)])
        }
        (PromptKind::PersonaSampled, _) => Err(TemplateError::MissingContext(kind, "persona")),
        (PromptKind::PersonaInferred, _) => Err(TemplateError::MissingContext(kind, "inferred persona")),
        (PromptKind::ProfileConditioned, _) => Err(TemplateError::MissingContext(kind, "value profile")),
    }
}
