//! Task definitions, few-shot datasets, token sequences, and query rendering.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A discrete token sequence: candidate-vocabulary ids plus the rendered
/// surface string. Rendering is owned by the vocabulary that produced the
/// sequence; everything here treats `text` as opaque. Sequences built from
/// raw text (e.g. a manually chosen trigger) carry no ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    pub text: String,
}

impl TokenSeq {
    pub fn empty() -> Self {
        TokenSeq { ids: Vec::new(), text: String::new() }
    }

    /// Wraps an externally supplied surface string with no vocabulary ids.
    pub fn from_text(text: impl Into<String>) -> Self {
        TokenSeq { ids: Vec::new(), text: text.into() }
    }

    /// Number of vocabulary tokens in the sequence.
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty() && self.text.is_empty()
    }

    /// First `n` tokens. Valid for vocabulary-rendered sequences, where
    /// surface tokens align one-to-one with ids.
    pub fn prefix(&self, n: usize) -> TokenSeq {
        let n = n.min(self.ids.len());
        let words: Vec<&str> = self.text.split_whitespace().collect();
        debug_assert_eq!(words.len(), self.ids.len(), "ids/text misaligned");
        TokenSeq { ids: self.ids[..n].to_vec(), text: words[..n].join(" ") }
    }

    /// True when `other` is an exact token prefix of `self`.
    pub fn starts_with(&self, other: &TokenSeq) -> bool {
        self.ids.starts_with(&other.ids)
    }

    /// Concatenation, space-joining the surface strings.
    pub fn join(&self, other: &TokenSeq) -> TokenSeq {
        let mut ids = self.ids.clone();
        ids.extend_from_slice(&other.ids);
        let text = match (self.text.is_empty(), other.text.is_empty()) {
            (true, _) => other.text.clone(),
            (_, true) => self.text.clone(),
            _ => format!("{} {}", self.text, other.text),
        };
        TokenSeq { ids, text }
    }
}

impl fmt::Display for TokenSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// Where the trigger goes relative to the input text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TriggerPosition {
    /// Appended after the input (default).
    #[default]
    Suffix,
    /// Prepended before the input.
    Prefix,
    /// Substituted into the template's `{trigger}` placeholder.
    TemplateSlot,
}

impl fmt::Display for TriggerPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TriggerPosition::Suffix => "suffix",
            TriggerPosition::Prefix => "prefix",
            TriggerPosition::TemplateSlot => "template-slot",
        };
        f.write_str(s)
    }
}

/// A classification task: class names, the label word read back from the
/// victim for each class, the query template, and the attack target class.
///
/// The template must contain `{input}` and `{prompt}` exactly once and
/// `{trigger}` at most once; `{mask}` expands to `mask_token` for masked-LM
/// style victims and may be omitted for left-to-right victims.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub classes: Vec<String>,
    /// Label word per class, index-aligned with `classes`.
    pub verbalizer: Vec<String>,
    pub template: String,
    #[serde(default = "default_mask_token")]
    pub mask_token: String,
    pub target_class: usize,
    #[serde(default)]
    pub trigger_position: TriggerPosition,
}

fn default_mask_token() -> String {
    "<mask>".to_string()
}

impl TaskSpec {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::Config("a task needs at least 2 classes".into()));
        }
        if self.verbalizer.len() != self.classes.len() {
            return Err(Error::Config(format!(
                "verbalizer has {} entries for {} classes",
                self.verbalizer.len(),
                self.classes.len()
            )));
        }
        let mut seen = BTreeMap::new();
        for (i, word) in self.verbalizer.iter().enumerate() {
            if word.trim().is_empty() {
                return Err(Error::Config(format!("empty label word for class {i}")));
            }
            if let Some(prev) = seen.insert(word.to_lowercase(), i) {
                return Err(Error::Config(format!(
                    "label word {word:?} used for classes {prev} and {i}"
                )));
            }
        }
        if self.target_class >= self.classes.len() {
            return Err(Error::Config(format!(
                "target class {} out of range for {} classes",
                self.target_class,
                self.classes.len()
            )));
        }
        for (placeholder, want) in [("{input}", 1usize), ("{prompt}", 1)] {
            let got = self.template.matches(placeholder).count();
            if got != want {
                return Err(Error::Config(format!(
                    "template must contain {placeholder} exactly once (found {got})"
                )));
            }
        }
        let trigger_slots = self.template.matches("{trigger}").count();
        if trigger_slots > 1 {
            return Err(Error::Config(
                "template may contain {trigger} at most once".into(),
            ));
        }
        if self.trigger_position == TriggerPosition::TemplateSlot && trigger_slots == 0 {
            return Err(Error::Config(
                "trigger position is template-slot but the template has no {trigger}".into(),
            ));
        }
        Ok(())
    }
}

/// One labeled input sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub text: String,
    pub label: usize,
}

impl Example {
    pub fn new(text: impl Into<String>, label: usize) -> Self {
        Example { text: text.into(), label }
    }
}

/// Few-shot splits: `k` examples per class in train and dev, plus a test set
/// disjoint from both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotDataset {
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
    pub k: usize,
}

impl FewShotDataset {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        for (name, split) in [("train", &self.train), ("dev", &self.dev), ("test", &self.test)] {
            for ex in split {
                if ex.label >= num_classes {
                    return Err(Error::Config(format!(
                        "{name} example {:?} has label {} but the task has {num_classes} classes",
                        ex.text, ex.label
                    )));
                }
            }
        }
        for (name, split) in [("train", &self.train), ("dev", &self.dev)] {
            let mut counts = vec![0usize; num_classes];
            for ex in split {
                counts[ex.label] += 1;
            }
            for (class, &count) in counts.iter().enumerate() {
                if count != self.k {
                    return Err(Error::Config(format!(
                        "{name} split has {count} examples of class {class}, expected k={}",
                        self.k
                    )));
                }
            }
        }
        let held: std::collections::BTreeSet<&str> = self
            .train
            .iter()
            .chain(self.dev.iter())
            .map(|ex| ex.text.as_str())
            .collect();
        for ex in &self.test {
            if held.contains(ex.text.as_str()) {
                return Err(Error::Config(format!(
                    "test example {:?} also appears in train/dev",
                    ex.text
                )));
            }
        }
        Ok(())
    }
}

/// Inserts the trigger text into an input sentence at the configured
/// position, single-space separated. An empty trigger leaves the input
/// unchanged; the original input is recoverable by removing exactly the
/// inserted substring. For `TemplateSlot` the insertion happens at render
/// time instead, so the input passes through untouched.
pub fn insert_trigger(input: &str, trigger: &TokenSeq, position: TriggerPosition) -> String {
    if trigger.text.is_empty() {
        return input.to_string();
    }
    if input.is_empty() {
        return trigger.text.clone();
    }
    match position {
        TriggerPosition::Suffix => format!("{input} {}", trigger.text),
        TriggerPosition::Prefix => format!("{} {input}", trigger.text),
        TriggerPosition::TemplateSlot => input.to_string(),
    }
}

/// Renders the query sent to a victim: substitutes `{input}`, `{trigger}`,
/// `{prompt}` and `{mask}` in the task template, then collapses whitespace
/// runs so identical logical queries produce bit-identical cache keys.
pub fn render_query(
    spec: &TaskSpec,
    prompt: &TokenSeq,
    trigger: Option<&TokenSeq>,
    input: &str,
) -> Result<String> {
    if prompt.text.is_empty() {
        return Err(Error::Argument("prompt must be non-empty".into()));
    }
    for placeholder in ["{input}", "{prompt}"] {
        if !spec.template.contains(placeholder) {
            return Err(Error::Config(format!(
                "template is missing the required {placeholder} placeholder"
            )));
        }
    }
    let in_slot = spec.trigger_position == TriggerPosition::TemplateSlot;
    let triggered_input = match trigger {
        Some(t) if !in_slot => insert_trigger(input, t, spec.trigger_position),
        _ => input.to_string(),
    };
    let slot_text = match trigger {
        Some(t) if in_slot => t.text.as_str(),
        _ => "",
    };
    let rendered = spec
        .template
        .replace("{input}", &triggered_input)
        .replace("{trigger}", slot_text)
        .replace("{prompt}", &prompt.text)
        .replace("{mask}", &spec.mask_token);
    Ok(rendered.split_whitespace().collect::<Vec<_>>().join(" "))
}

/// On-disk bundle of a task plus its few-shot data (JSON, UTF-8).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskFile {
    #[serde(default = "default_version")]
    pub version: u32,
    pub task: TaskSpec,
    pub data: FewShotDataset,
}

fn default_version() -> u32 {
    1
}

impl TaskFile {
    pub fn load(path: impl AsRef<Path>) -> Result<TaskFile> {
        let raw = std::fs::read_to_string(path)?;
        let file: TaskFile = serde_json::from_str(&raw)?;
        file.task.validate()?;
        file.data.validate(file.task.num_classes())?;
        Ok(file)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.task.validate()?;
        self.data.validate(self.task.num_classes())?;
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
