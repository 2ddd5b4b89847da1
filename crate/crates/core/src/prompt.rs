//! Action-order-aware prompt text and parsing of `{"points": [...]}` replies.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::vlm::VlmError;

pub const TASK_SEQUENCE_PLACEHOLDER: &str = "{task_sequence}";
pub const TASK_FOCUS_PLACEHOLDER: &str = "{task_focus}";

pub const DEFAULT_START_TEMPLATE: &str = "I will show an image sequence of human operation. \
It contains the following tasks: {task_sequence}. I have annotated the images with numbered \
circles. Choose the number that is closest to the moment when the ({task_focus}) has started. \
You are a five-time world champion in this game. Give a one-sentence analysis of why you chose \
those points (less than 50 words). Provide your answer at the end in a JSON file in this \
format: {\"points\": []}.";

pub const DEFAULT_END_TEMPLATE: &str = "I will show an image sequence of human operation. \
It contains the following tasks: {task_sequence}. I have annotated the images with numbered \
circles. Choose the number that is closest to the moment when the ({task_focus}) has ended. \
You are a five-time world champion in this game. Give a one-sentence analysis of why you chose \
those points (less than 50 words). Provide your answer at the end in a JSON file in this \
format: {\"points\": []}.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Start,
    End,
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Boundary::Start => "start",
            Boundary::End => "end",
        })
    }
}

/// Ordered, non-empty list of free-text task labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct TaskSequence(Vec<String>);

impl TaskSequence {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(|s| s.into().trim().to_string()).collect();
        if labels.is_empty() {
            return Err(Error::Validation("task sequence is empty".into()));
        }
        if let Some(i) = labels.iter().position(|l| l.is_empty()) {
            return Err(Error::Validation(format!("task {} has an empty label", i + 1)));
        }
        Ok(Self(labels))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.0
    }

    /// Label of task `k` (1-based).
    pub fn get(&self, k: usize) -> Option<&str> {
        k.checked_sub(1).and_then(|i| self.0.get(i)).map(String::as_str)
    }

    /// `1. L_1, 2. L_2, ...`
    pub fn enumerate(&self) -> String {
        self.0
            .iter()
            .enumerate()
            .map(|(i, l)| format!("{}. {l}", i + 1))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

impl TryFrom<Vec<String>> for TaskSequence {
    type Error = Error;

    fn try_from(v: Vec<String>) -> Result<Self> {
        TaskSequence::new(v)
    }
}

impl From<TaskSequence> for Vec<String> {
    fn from(t: TaskSequence) -> Self {
        t.0
    }
}

impl FromStr for TaskSequence {
    type Err = Error;

    /// Comma-separated labels.
    fn from_str(s: &str) -> Result<Self> {
        TaskSequence::new(s.split(','))
    }
}

/// Start and end prompt templates with `{task_sequence}` / `{task_focus}`
/// placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptTemplates {
    pub start_template: String,
    pub end_template: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            start_template: DEFAULT_START_TEMPLATE.to_string(),
            end_template: DEFAULT_END_TEMPLATE.to_string(),
        }
    }
}

impl PromptTemplates {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [("start_template", &self.start_template), ("end_template", &self.end_template)] {
            if !t.contains(TASK_FOCUS_PLACEHOLDER) {
                return Err(Error::Config(format!("prompt.{name} lacks {TASK_FOCUS_PLACEHOLDER}")));
            }
        }
        Ok(())
    }

    pub fn template(&self, boundary: Boundary) -> &str {
        match boundary {
            Boundary::Start => &self.start_template,
            Boundary::End => &self.end_template,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PromptRequest<'a> {
    pub tasks: &'a TaskSequence,
    /// 1-based index of the task being searched.
    pub focus: usize,
    pub boundary: Boundary,
}

impl PromptRequest<'_> {
    pub fn focus_text(&self) -> Result<String> {
        let label = self.tasks.get(self.focus).ok_or_else(|| {
            Error::Validation(format!(
                "focus index {} outside 1..={}",
                self.focus,
                self.tasks.len()
            ))
        })?;
        Ok(format!("{}. {label}", self.focus))
    }
}

pub fn build_prompt(req: &PromptRequest<'_>, templates: &PromptTemplates) -> Result<String> {
    let focus = req.focus_text()?;
    Ok(templates
        .template(req.boundary)
        .replace(TASK_SEQUENCE_PLACEHOLDER, &req.tasks.enumerate())
        .replace(TASK_FOCUS_PLACEHOLDER, &focus))
}

/// A parsed model reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VlmAnswer {
    /// The label acted upon: the first valid entry of `points`.
    pub selected: u32,
    /// Every valid label the model listed, in reply order.
    pub points: Vec<u32>,
    pub raw_text: String,
}

/// Finds the last JSON object in `raw` that has a `points` key.
fn last_points_object(raw: &str) -> Option<Value> {
    raw.char_indices()
        .rev()
        .filter(|(_, c)| *c == '{')
        .find_map(|(i, _)| {
            let mut stream = serde_json::Deserializer::from_str(&raw[i..]).into_iter::<Value>();
            match stream.next() {
                Some(Ok(v)) if v.get("points").is_some() => Some(v),
                _ => None,
            }
        })
}

fn as_label(v: &Value) -> Option<i64> {
    match v {
        Value::Number(n) => n
            .as_i64()
            .or_else(|| n.as_f64().filter(|f| f.fract() == 0.0).map(|f| f as i64)),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

/// Extracts the selected label from a free-text reply ending in
/// `{"points": [...]}`. Entries outside `is_valid` are dropped.
pub fn parse_answer(raw: &str, is_valid: impl Fn(u32) -> bool) -> Result<VlmAnswer, VlmError> {
    let obj = last_points_object(raw).ok_or_else(|| VlmError::Parse(truncate(raw, 200)))?;
    let points: Vec<u32> = match &obj["points"] {
        Value::Array(items) => items
            .iter()
            .filter_map(as_label)
            .filter_map(|p| u32::try_from(p).ok())
            .filter(|p| is_valid(*p))
            .collect(),
        single => as_label(single)
            .and_then(|p| u32::try_from(p).ok())
            .filter(|p| is_valid(*p))
            .into_iter()
            .collect(),
    };
    let selected = *points
        .first()
        .ok_or_else(|| VlmError::EmptyAnswer(obj["points"].to_string()))?;
    Ok(VlmAnswer {
        selected,
        points,
        raw_text: raw.to_string(),
    })
}

fn truncate(s: &str, max: usize) -> String {
    match s.char_indices().nth(max) {
        Some((i, _)) => format!("{}...", &s[..i]),
        None => s.to_string(),
    }
}
