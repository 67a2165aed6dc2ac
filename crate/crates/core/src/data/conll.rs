use std::path::Path;

use log::warn;

use crate::encoder::vocab::normalize;
use crate::error::{Error, Result};
use crate::tagger::{LabelScheme, Simplified, Task};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    pub label: String,
    /// Explicit simplified label from a third column, if any.
    pub simplified: Option<Simplified>,
}

impl Token {
    pub fn new(surface: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            surface: surface.into(),
            label: label.into(),
            simplified: None,
        }
    }

    pub fn with_simplified(mut self, s: Simplified) -> Self {
        self.simplified = Some(s);
        self
    }

    /// The explicit simplified label, or the one implied by an LID label.
    pub fn simplified_in(&self, scheme: &LabelScheme) -> Option<Simplified> {
        self.simplified.or_else(|| scheme.implied_simplified(&self.label))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn new(tokens: Vec<Token>) -> Self {
        Self { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn words(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.surface.clone()).collect()
    }

    pub fn labels(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.label.as_str()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub scheme: LabelScheme,
    pub train: Vec<Sentence>,
    pub dev: Vec<Sentence>,
    pub test: Vec<Sentence>,
}

impl Corpus {
    pub fn task(&self) -> Task {
        self.scheme.task()
    }

    pub fn splits(&self) -> [(&'static str, &[Sentence]); 3] {
        [("train", &self.train), ("dev", &self.dev), ("test", &self.test)]
    }

    /// Checks every label against the scheme.
    pub fn validate(&self) -> Result<()> {
        for (_, split) in self.splits() {
            for s in split {
                for t in &s.tokens {
                    self.scheme.index_of(&t.label)?;
                }
            }
        }
        Ok(())
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn fields(line: &str) -> Vec<&str> {
    if line.contains('\t') {
        line.split('\t').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

/// Parses token-per-line text. Each line is `token TAB label`, optionally
/// followed by `TAB simplified`; a blank line ends a sentence.
pub fn parse_conll_str(text: &str, scheme: &LabelScheme) -> Result<Vec<Sentence>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let lineno = n + 1;
        let line = raw.trim_end();
        if line.trim().is_empty() {
            if !cur.is_empty() {
                out.push(Sentence::new(std::mem::take(&mut cur)));
            }
            continue;
        }
        let f = fields(line);
        if !(2..=3).contains(&f.len()) || f.iter().any(|x| x.is_empty()) {
            return Err(parse_err(
                lineno,
                format!("expected `token<TAB>label[<TAB>simplified]`, got {:?}", raw),
            ));
        }
        scheme.index_of(f[1]).map_err(|e| match e {
            Error::Scheme(m) => Error::Scheme(format!("line {lineno}: {m}")),
            e => e,
        })?;
        let mut tok = Token::new(normalize(f[0]), f[1]);
        if let Some(s) = f.get(2) {
            let s: Simplified = s
                .parse()
                .map_err(|_| parse_err(lineno, format!("bad simplified label `{s}`")))?;
            tok.simplified = Some(s);
        }
        cur.push(tok);
    }
    if !cur.is_empty() {
        out.push(Sentence::new(cur));
    }
    if scheme.task() == Task::Ner {
        let bad: usize = out.iter().map(|s| bio_violations(s).len()).sum();
        if bad > 0 {
            warn!("{bad} BIO violations (I-X not preceded by B-X or I-X)");
        }
    }
    Ok(out)
}

pub fn parse_conll(path: &Path, scheme: &LabelScheme) -> Result<Vec<Sentence>> {
    let text = std::fs::read_to_string(path)?;
    parse_conll_str(&text, scheme)
}

/// Inverse of [`parse_conll_str`]: one token per line, a blank line after
/// every sentence.
pub fn write_conll(sentences: &[Sentence]) -> String {
    let mut s = String::new();
    for sent in sentences {
        for t in &sent.tokens {
            s.push_str(&t.surface);
            s.push('\t');
            s.push_str(&t.label);
            if let Some(x) = t.simplified {
                s.push('\t');
                s.push_str(x.as_str());
            }
            s.push('\n');
        }
        s.push('\n');
    }
    s
}

/// Canonical textual form of a well-formed file: NFC surfaces, tab
/// separators, no trailing whitespace, exactly one blank line after each
/// sentence.
pub fn normalize_conll_text(text: &str) -> String {
    let mut out = String::new();
    let mut open = false;
    for raw in text.lines() {
        let line = raw.trim_end();
        if line.trim().is_empty() {
            if open {
                out.push('\n');
                open = false;
            }
            continue;
        }
        let f = fields(line);
        out.push_str(&normalize(f[0]));
        for x in &f[1..] {
            out.push('\t');
            out.push_str(x);
        }
        out.push('\n');
        open = true;
    }
    if open {
        out.push('\n');
    }
    out
}

/// Indices of `I-X` tags that do not continue a `B-X` or `I-X`.
pub fn bio_violations(s: &Sentence) -> Vec<usize> {
    let mut prev: Option<&str> = None;
    let mut bad = Vec::new();
    for (i, t) in s.tokens.iter().enumerate() {
        if let Some(ty) = t.label.strip_prefix("I-") {
            let ok = prev
                .and_then(|p| p.strip_prefix("B-").or_else(|| p.strip_prefix("I-")))
                .is_some_and(|p| p == ty);
            if !ok {
                bad.push(i);
            }
        }
        prev = Some(&t.label);
    }
    bad
}

/// Turns each invalid `I-X` into `B-X`; returns the number of repairs.
pub fn repair_bio(s: &mut Sentence) -> usize {
    let bad = bio_violations(s);
    for &i in &bad {
        let ty = s.tokens[i].label[2..].to_string();
        s.tokens[i].label = format!("B-{ty}");
    }
    bad.len()
}
