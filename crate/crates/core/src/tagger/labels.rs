use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Lid,
    Pos,
    Ner,
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lid" => Ok(Task::Lid),
            "pos" => Ok(Task::Pos),
            "ner" => Ok(Task::Ner),
            _ => Err(Error::Config(format!("unknown task `{s}` (expected lid, pos or ner)"))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Lid => "lid",
            Task::Pos => "pos",
            Task::Ner => "ner",
        })
    }
}

/// The three-way label set predicted from morphology alone.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Simplified {
    Lang1,
    Lang2,
    Other,
}

impl Simplified {
    pub const ALL: [Simplified; 3] = [Simplified::Lang1, Simplified::Lang2, Simplified::Other];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Simplified::Lang1 => "lang1",
            Simplified::Lang2 => "lang2",
            Simplified::Other => "other",
        }
    }
}

impl fmt::Display for Simplified {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Simplified {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::Scheme(format!("`{s}` is not a simplified label (lang1, lang2, other)")))
    }
}

/// The eight CALCS language-identification labels.
pub const CALCS_LABELS: [&str; 8] = ["lang1", "lang2", "ne", "mixed", "ambiguous", "fw", "other", "unk"];

/// Universal POS tags plus the two code-switching extensions.
pub const UNIVERSAL_POS: [&str; 19] = [
    "ADJ", "ADP", "ADV", "AUX", "CCONJ", "DET", "INTJ", "NOUN", "NUM", "PART", "PRON", "PROPN",
    "PUNCT", "SCONJ", "SYM", "VERB", "X", "PART_NEG", "PRON_WH",
];

/// Maps a CALCS label to the simplified set. Everything that is neither
/// language goes to `other`.
pub fn simplify(label: &str) -> Result<Simplified> {
    match label {
        "lang1" => Ok(Simplified::Lang1),
        "lang2" => Ok(Simplified::Lang2),
        "ne" | "mixed" | "ambiguous" | "fw" | "other" | "unk" => Ok(Simplified::Other),
        _ => Err(Error::Scheme(format!("`{label}` is not a CALCS label"))),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelScheme {
    task: Task,
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelScheme {
    pub fn new(task: Task, labels: Vec<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Scheme("a label scheme needs at least one label".into()));
        }
        let mut index = HashMap::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            if l.is_empty() || l.chars().any(char::is_whitespace) {
                return Err(Error::Scheme(format!("invalid label `{l}`")));
            }
            if index.insert(l.clone(), i).is_some() {
                return Err(Error::Scheme(format!("duplicate label `{l}`")));
            }
        }
        if task == Task::Lid {
            let mut sorted: Vec<&str> = labels.iter().map(String::as_str).collect();
            sorted.sort_unstable();
            let mut want = CALCS_LABELS.to_vec();
            want.sort_unstable();
            if sorted != want {
                return Err(Error::Scheme(format!(
                    "an LID scheme must have exactly the CALCS labels {CALCS_LABELS:?}"
                )));
            }
        }
        Ok(Self { task, labels, index })
    }

    pub fn lid() -> Self {
        Self::new(Task::Lid, CALCS_LABELS.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    pub fn universal_pos() -> Self {
        Self::new(Task::Pos, UNIVERSAL_POS.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    /// `O` plus `B-`/`I-` tags for each entity type.
    pub fn bio(entity_types: &[&str]) -> Result<Self> {
        let mut labels = vec!["O".to_string()];
        for t in entity_types {
            labels.push(format!("B-{t}"));
            labels.push(format!("I-{t}"));
        }
        Self::new(Task::Ner, labels)
    }

    /// Reads a scheme file: one label per line, blank lines ignored.
    pub fn from_file(task: Task, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(task, &text)
    }

    pub fn from_text(task: Task, text: &str) -> Result<Self> {
        let labels = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        Self::new(task, labels)
    }

    /// The built-in scheme for a task; NER has no default inventory.
    pub fn builtin(task: Task) -> Result<Self> {
        match task {
            Task::Lid => Ok(Self::lid()),
            Task::Pos => Ok(Self::universal_pos()),
            Task::Ner => Err(Error::Config("NER needs a scheme file listing its labels".into())),
        }
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.index.get(label).copied().ok_or_else(|| {
            Error::Scheme(format!(
                "unknown label `{label}` for the {} scheme (valid: {})",
                self.task,
                self.labels.join(", ")
            ))
        })
    }

    pub fn contains(&self, label: &str) -> bool {
        self.index.contains_key(label)
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    /// Simplified label implied by a primary label (LID schemes only).
    pub fn implied_simplified(&self, label: &str) -> Option<Simplified> {
        (self.task == Task::Lid).then(|| simplify(label).ok()).flatten()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplify_mapping() {
        assert_eq!(simplify("lang1").unwrap(), Simplified::Lang1);
        assert_eq!(simplify("ne").unwrap(), Simplified::Other);
        let mut outs: Vec<Simplified> = CALCS_LABELS.iter().map(|l| simplify(l).unwrap()).collect();
        outs.sort();
        outs.dedup();
        assert_eq!(outs, Simplified::ALL.to_vec());
        assert!(matches!(simplify("NOUN"), Err(Error::Scheme(_))));
    }

    #[test]
    fn lid_scheme_is_exactly_calcs() {
        let s = LabelScheme::lid();
        assert_eq!(s.len(), 8);
        assert!(LabelScheme::new(Task::Lid, vec!["lang1".into(), "lang2".into()]).is_err());
        let err = s.index_of("english").unwrap_err().to_string();
        assert!(err.contains("english") && err.contains("lang1"));
    }

    #[test]
    fn scheme_files_and_bio() {
        let s = LabelScheme::from_text(Task::Ner, "O\nB-PER\n\nI-PER\n").unwrap();
        assert_eq!(s.labels(), &["O", "B-PER", "I-PER"]);
        assert_eq!(LabelScheme::bio(&["PER"]).unwrap(), s);
        assert!(LabelScheme::from_text(Task::Pos, "NOUN\nNOUN\n").is_err());
        assert!(LabelScheme::universal_pos().contains("PRON_WH"));
    }
}
