use std::collections::{BTreeSet, HashMap};

use unicode_normalization::UnicodeNormalization;

pub const PAD: usize = 0;
pub const UNK: usize = 1;

/// Character inventory; row 0 is PAD and row 1 is UNK.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CharVocab {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl CharVocab {
    pub fn new(chars: impl IntoIterator<Item = char>) -> Self {
        let chars: Vec<char> = chars.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let index = chars.iter().enumerate().map(|(i, &c)| (c, i + 2)).collect();
        Self { chars, index }
    }

    /// Collects every character of the NFC-normalized words.
    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        Self::new(words.into_iter().flat_map(|w| w.nfc().collect::<Vec<_>>()))
    }

    /// Vocabulary size including PAD and UNK.
    pub fn size(&self) -> usize {
        self.chars.len() + 2
    }

    pub fn id(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(UNK)
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }
}

pub fn normalize(word: &str) -> String {
    word.nfc().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_rows_and_unknowns() {
        let v = CharVocab::from_words(["kaam", "ab"]);
        assert_eq!(v.size(), 2 + 4);
        assert_eq!(v.id('a'), 2);
        assert_eq!(v.id('z'), UNK);
    }

    #[test]
    fn normalizes_to_nfc() {
        let decomposed = "e\u{301}";
        assert_eq!(normalize(decomposed), "\u{e9}");
        let v = CharVocab::from_words([decomposed]);
        assert_eq!(v.chars(), &['\u{e9}']);
    }
}
