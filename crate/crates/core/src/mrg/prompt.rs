use super::{MrgError, Strategy, StrategyKind};
use crate::corpus::{DialogueContext, ResponseSet};
use serde::{Deserialize, Serialize};
use regex::Regex;
use sha2::{Digest, Sha256};
use std::sync::OnceLock;

/// A frozen prompt template with `{placeholder}` slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Template {
    pub name: &'static str,
    pub text: &'static str,
}

pub const SET_TEMPLATE: Template = Template { name: "set.v1", text: include_str!("../../templates/set.v1.txt") };
pub const COT_TEMPLATE: Template = Template { name: "cot.v1", text: include_str!("../../templates/cot.v1.txt") };
pub const SINGLE_TEMPLATE: Template =
    Template { name: "single.v1", text: include_str!("../../templates/single.v1.txt") };
pub const PC_STEP_TEMPLATE: Template =
    Template { name: "pc_step.v1", text: include_str!("../../templates/pc_step.v1.txt") };

impl Template {
    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.text.as_bytes()))
    }

    /// Substitutes every `{key}` in one pass, so substituted text is never
    /// rescanned. Every placeholder must be supplied and every supplied key
    /// must occur.
    pub fn render(&self, values: &[(&str, &str)]) -> Result<String, MrgError> {
        let re = placeholder_re();
        for (key, _) in values {
            if !self.text.contains(&format!("{{{key}}}")) {
                return Err(MrgError::Template(format!("{} has no placeholder {{{key}}}", self.name)));
            }
        }
        if let Some(m) = re.captures_iter(self.text).find(|c| !values.iter().any(|(k, _)| *k == &c[1])) {
            return Err(MrgError::Template(format!("{} left {} unfilled", self.name, &m[0])));
        }
        Ok(re
            .replace_all(self.text, |c: &regex::Captures| {
                values.iter().find(|(k, _)| *k == &c[1]).map(|(_, v)| v.to_string()).unwrap_or_default()
            })
            .into_owned())
    }
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{(context|n|demos|prior_responses)\}").expect("placeholder regex"))
}

/// A worked example shown to the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub context: DialogueContext,
    pub responses: ResponseSet,
    /// Mean of the set's semantic and lexical similarity; lower is more
    /// diverse.
    pub combined_diversity: f64,
}

fn numbered<'a>(texts: impl Iterator<Item = &'a str>) -> String {
    texts.enumerate().map(|(i, t)| format!("{}. {t}", i + 1)).collect::<Vec<_>>().join("\n")
}

fn render_demos(demos: &[Demonstration]) -> String {
    if demos.is_empty() {
        return String::new();
    }
    let mut out = String::from("\nExamples:\n");
    for (k, d) in demos.iter().enumerate() {
        out.push_str(&format!(
            "\nExample {}:\nDialogue history:\n{}\n\nResponses:\n{}\n",
            k + 1,
            d.context.format_history(),
            numbered(d.responses.present().map(|(_, t)| t))
        ));
    }
    out
}

pub(super) fn template_for(kind: StrategyKind, pc_step: bool) -> Template {
    match kind {
        StrategyKind::Fs | StrategyKind::It => SET_TEMPLATE,
        StrategyKind::Cot => COT_TEMPLATE,
        StrategyKind::Pc if pc_step => PC_STEP_TEMPLATE,
        StrategyKind::Pc | StrategyKind::Mi => SINGLE_TEMPLATE,
    }
}

/// The one-response prompt used for direct generation, MI calls and the
/// first chaining step.
pub fn single_prompt(context: &DialogueContext) -> Result<String, MrgError> {
    SINGLE_TEMPLATE.render(&[("context", &context.format_history())])
}

/// Prompt for strategies that ask for the whole set at once (FS, CoT, IT),
/// and the single-response prompt for PC and MI.
pub fn build_prompt(strategy: &Strategy, context: &DialogueContext, demos: &[Demonstration]) -> Result<String, MrgError> {
    if demos.len() != strategy.shots {
        return Err(MrgError::ShotMismatch { expected: strategy.shots, got: demos.len() });
    }
    let history = context.format_history();
    match strategy.kind {
        StrategyKind::Pc | StrategyKind::Mi => single_prompt(context),
        kind => template_for(kind, false).render(&[
            ("n", &strategy.n.to_string()),
            ("demos", &render_demos(demos)),
            ("context", &history),
        ]),
    }
}

/// Prompt for chaining step `step`, quoting every prior response in order.
/// Step 0 takes no priors; later steps need at least one.
pub fn build_pc_prompt(context: &DialogueContext, step: usize, priors: &[String]) -> Result<String, MrgError> {
    if step == 0 {
        return single_prompt(context);
    }
    if priors.is_empty() {
        return Err(MrgError::MissingPriorResponses { step });
    }
    PC_STEP_TEMPLATE.render(&[
        ("context", &context.format_history()),
        ("prior_responses", &numbered(priors.iter().map(String::as_str))),
    ])
}
