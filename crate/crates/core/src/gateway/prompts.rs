//! Prompt templates.
//!
//! A template is plain text split into `### system`, `### user` and
//! `### assistant` sections. Everything before the final user section is a
//! few-shot exchange; the final user section is the query. `{name}`
//! placeholders are replaced only for the variables supplied at render time,
//! so JSON braces in examples pass through untouched.

use std::collections::BTreeMap;
use std::path::Path;

use super::{GatewayError, PromptTag, Role};

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub system: String,
    pub turns: Vec<(Role, String)>,
}

impl PromptTemplate {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut system = String::new();
        let mut turns: Vec<(Role, String)> = Vec::new();
        let mut current: Option<(Role, Vec<&str>)> = None;

        let mut flush = |section: Option<(Role, Vec<&str>)>| {
            if let Some((role, body)) = section {
                let body = body.join("\n").trim().to_string();
                match role {
                    Role::System => system = body,
                    role => turns.push((role, body)),
                }
            }
        };
        for line in text.lines() {
            if let Some(header) = line.strip_prefix("### ") {
                let role = match header.trim() {
                    "system" => Role::System,
                    "user" => Role::User,
                    "assistant" => Role::Assistant,
                    other => return Err(format!("unknown section {other:?}")),
                };
                flush(current.take());
                current = Some((role, Vec::new()));
            } else if let Some((_, body)) = current.as_mut() {
                body.push(line);
            } else if !line.trim().is_empty() {
                return Err("text before the first section header".into());
            }
        }
        flush(current);
        match turns.last() {
            Some((Role::User, _)) => Ok(PromptTemplate { system, turns }),
            _ => Err("template must end with a user section".into()),
        }
    }
}

fn substitute(text: &str, vars: &[(&str, &str)]) -> String {
    vars.iter().fold(text.to_string(), |acc, (key, value)| {
        acc.replace(&format!("{{{key}}}"), value)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptSet {
    templates: BTreeMap<PromptTag, PromptTemplate>,
}

fn builtin_text(tag: PromptTag) -> &'static str {
    match tag {
        PromptTag::SentenceGen => include_str!("../../prompts/sentence_gen.txt"),
        PromptTag::FactorExtract => include_str!("../../prompts/factor_extract.txt"),
        PromptTag::LabelVote => include_str!("../../prompts/label_vote.txt"),
        PromptTag::Theme => include_str!("../../prompts/theme.txt"),
        PromptTag::Prune => include_str!("../../prompts/prune.txt"),
        PromptTag::MapVote => include_str!("../../prompts/map_vote.txt"),
        PromptTag::Reflect => include_str!("../../prompts/reflect.txt"),
        PromptTag::PhiElicit => include_str!("../../prompts/phi_elicit.txt"),
        PromptTag::LatentDiscover => include_str!("../../prompts/latent_discover.txt"),
        PromptTag::LatentElicit => include_str!("../../prompts/latent_elicit.txt"),
    }
}

impl PromptSet {
    /// Templates compiled into the crate.
    pub fn builtin() -> Self {
        let templates = PromptTag::ALL
            .iter()
            .map(|&tag| {
                let t = PromptTemplate::parse(builtin_text(tag))
                    .unwrap_or_else(|e| panic!("builtin template {}: {e}", tag.file_stem()));
                (tag, t)
            })
            .collect();
        PromptSet { templates }
    }

    /// Replaces templates with `<dir>/<stem>.txt` wherever such a file exists.
    pub fn with_overrides(mut self, dir: &Path) -> Result<Self, GatewayError> {
        for tag in PromptTag::ALL {
            let path = dir.join(format!("{}.txt", tag.file_stem()));
            if !path.exists() {
                continue;
            }
            let text = std::fs::read_to_string(&path)
                .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
            let template = PromptTemplate::parse(&text)
                .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
            self.templates.insert(tag, template);
        }
        Ok(self)
    }

    pub fn template(&self, tag: PromptTag) -> &PromptTemplate {
        &self.templates[&tag]
    }

    pub fn render(&self, tag: PromptTag, vars: &[(&str, &str)]) -> (String, Vec<(Role, String)>) {
        let t = self.template(tag);
        (
            substitute(&t.system, vars),
            t.turns
                .iter()
                .map(|(role, text)| (*role, substitute(text, vars)))
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_builtin_parses_and_ends_with_a_query() {
        let set = PromptSet::builtin();
        for tag in PromptTag::ALL {
            let t = set.template(tag);
            assert_eq!(t.turns.last().unwrap().0, Role::User, "{tag}");
        }
    }

    #[test]
    fn substitution_leaves_json_braces_alone() {
        let t = PromptTemplate::parse(
            "### system\nsys {n}\n### user\nQ: {q}\n### assistant\n{\"answer\": [\"x\"]}\n### user\n{q} again",
        )
        .unwrap();
        let set = PromptSet {
            templates: BTreeMap::from([(PromptTag::MapVote, t)]),
        };
        let (system, turns) = set.render(PromptTag::MapVote, &[("q", "why"), ("n", "2")]);
        assert_eq!(system, "sys 2");
        assert_eq!(turns[1].1, "{\"answer\": [\"x\"]}");
        assert_eq!(turns[2].1, "why again");
    }

    #[test]
    fn malformed_templates_are_rejected() {
        assert!(PromptTemplate::parse("no header").is_err());
        assert!(PromptTemplate::parse("### user\nq\n### assistant\na").is_err());
        assert!(PromptTemplate::parse("### critic\nx").is_err());
    }

    #[test]
    fn overrides_replace_single_templates() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("theme.txt"), "### user\nName it: {factors}").unwrap();
        let set = PromptSet::builtin().with_overrides(dir.path()).unwrap();
        let (_, turns) = set.render(PromptTag::Theme, &[("factors", "[\"a\"]")]);
        assert_eq!(turns, vec![(Role::User, "Name it: [\"a\"]".to_string())]);
        assert_eq!(
            set.template(PromptTag::Reflect),
            PromptSet::builtin().template(PromptTag::Reflect)
        );

        std::fs::write(dir.path().join("prune.txt"), "garbage").unwrap();
        assert!(PromptSet::builtin().with_overrides(dir.path()).is_err());
    }
}
