use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::conll::{Corpus, Sentence, Token};
use crate::error::{Error, Result};
use crate::tagger::{LabelScheme, Simplified, Task};

const PUNCT: [&str; 5] = [",", ".", "!", "?", "..."];

/// POS tag assigned to words carrying the suffix at each inventory index.
pub const SUFFIX_TAGS: [&str; 4] = ["VERB", "NOUN", "ADJ", "ADV"];

/// Parameters of the synthetic code-switched corpus. Words are a stem
/// followed by a suffix from their language's inventory, so the final
/// characters carry the language signal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub lang1_stems: Vec<String>,
    pub lang2_stems: Vec<String>,
    pub lang1_suffixes: Vec<String>,
    pub lang2_suffixes: Vec<String>,
    pub switch_prob: f64,
    pub other_rate: f64,
    pub ne_rate: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub sentences: usize,
    pub seed: u64,
    /// `lid` labels tokens by language; `pos` labels them by suffix class.
    pub task: Task,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self::demo(50, 7)
    }
}

/// Two-syllable stems over one shared alphabet. Every fifth stem starts with
/// a suffix of the other language, so a suffix only identifies the language
/// in word-final position.
fn make_stems(rng: &mut ChaCha8Rng, n: usize, foreign: &[&str]) -> Vec<String> {
    const C: [&str; 12] = ["k", "t", "m", "r", "s", "p", "b", "d", "n", "l", "g", "v"];
    const V: [&str; 5] = ["a", "e", "i", "o", "u"];
    let mut out: Vec<String> = Vec::with_capacity(n);
    while out.len() < n {
        let mut s = String::new();
        if out.len() % 5 == 4 {
            s.push_str(foreign[out.len() / 5 % foreign.len()]);
        }
        for _ in 0..2 {
            s.push_str(C.choose(rng).unwrap());
            s.push_str(V.choose(rng).unwrap());
        }
        s.push_str(C.choose(rng).unwrap());
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

impl SyntheticSpec {
    /// The demo inventory with `stems` stems per language.
    pub fn demo(stems: usize, seed: u64) -> Self {
        let l1 = ["ing", "ed", "ous", "ly"];
        let l2 = ["iye", "ne", "isi", "ando"];
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        Self {
            lang1_stems: make_stems(&mut rng, stems, &l2),
            lang2_stems: make_stems(&mut rng, stems, &l1),
            lang1_suffixes: l1.iter().map(|s| s.to_string()).collect(),
            lang2_suffixes: l2.iter().map(|s| s.to_string()).collect(),
            switch_prob: 0.3,
            other_rate: 0.1,
            ne_rate: 0.05,
            min_len: 5,
            max_len: 10,
            sentences: 2000,
            seed,
            task: Task::Lid,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.lang1_stems.is_empty() || self.lang2_stems.is_empty() {
            return bad("stem inventories must be non-empty");
        }
        if self.lang1_suffixes.is_empty() || self.lang2_suffixes.is_empty() {
            return bad("suffix inventories must be non-empty");
        }
        let all = self.lang1_stems.iter().chain(&self.lang2_stems);
        if all.chain(&self.lang1_suffixes).chain(&self.lang2_suffixes).any(|s| {
            s.is_empty() || s.chars().any(|c| c.is_whitespace() || c.is_uppercase())
        }) {
            return bad("stems and suffixes must be non-empty lowercase strings without whitespace");
        }
        for a in &self.lang1_suffixes {
            for b in &self.lang2_suffixes {
                if a.ends_with(b.as_str()) || b.ends_with(a.as_str()) {
                    return bad(&format!("suffixes `{a}` and `{b}` overlap; inventories must be disjoint"));
                }
            }
        }
        for (name, p) in [("switch_prob", self.switch_prob), ("other_rate", self.other_rate), ("ne_rate", self.ne_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        if self.other_rate + self.ne_rate > 1.0 {
            return bad("other_rate + ne_rate must not exceed 1");
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad("need 1 <= min_len <= max_len");
        }
        if self.task == Task::Pos && self.lang1_suffixes.len().max(self.lang2_suffixes.len()) > SUFFIX_TAGS.len() {
            return bad("the pos task supports at most four suffixes per language");
        }
        if self.task == Task::Ner {
            return bad("task must be lid or pos");
        }
        Ok(())
    }

    pub fn scheme(&self) -> LabelScheme {
        match self.task {
            Task::Pos => LabelScheme::universal_pos(),
            _ => LabelScheme::lid(),
        }
    }
}

fn token(spec: &SyntheticSpec, surface: String, lid: &str, pos: &str, simplified: Simplified) -> Token {
    let label = if spec.task == Task::Pos { pos } else { lid };
    Token::new(surface, label).with_simplified(simplified)
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next()
        .map(|f| f.to_uppercase().chain(c).collect())
        .unwrap_or_default()
}

fn sentence(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Sentence {
    let len = rng.gen_range(spec.min_len..=spec.max_len);
    let mut lang2 = rng.gen_bool(0.5);
    let mut started = false;
    let mut tokens = Vec::with_capacity(len);
    for _ in 0..len {
        let r: f64 = rng.gen();
        if r < spec.other_rate {
            let t = if rng.gen_bool(0.5) {
                token(spec, PUNCT.choose(rng).unwrap().to_string(), "other", "PUNCT", Simplified::Other)
            } else {
                token(spec, format!("@user{}", rng.gen_range(0..20)), "other", "X", Simplified::Other)
            };
            tokens.push(t);
        } else if r < spec.other_rate + spec.ne_rate {
            let stems = if rng.gen_bool(0.5) { &spec.lang2_stems } else { &spec.lang1_stems };
            let s = capitalize(stems.choose(rng).unwrap());
            tokens.push(token(spec, s, "ne", "PROPN", Simplified::Other));
        } else {
            if started && rng.gen_bool(spec.switch_prob) {
                lang2 = !lang2;
            }
            started = true;
            let (stems, sufs, lid, simp) = if lang2 {
                (&spec.lang2_stems, &spec.lang2_suffixes, "lang2", Simplified::Lang2)
            } else {
                (&spec.lang1_stems, &spec.lang1_suffixes, "lang1", Simplified::Lang1)
            };
            let k = rng.gen_range(0..sufs.len());
            let w = format!("{}{}", stems.choose(rng).unwrap(), sufs[k]);
            tokens.push(token(spec, w, lid, SUFFIX_TAGS[k % SUFFIX_TAGS.len()], simp));
        }
    }
    Sentence::new(tokens)
}

/// Generates the corpus and splits it 70/15/15 in generation order.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let all: Vec<Sentence> = (0..spec.sentences).map(|_| sentence(spec, &mut rng)).collect();
    let n_train = (spec.sentences as f64 * 0.7).round() as usize;
    let n_dev = (spec.sentences as f64 * 0.15).round() as usize;
    let mut it = all.into_iter();
    let train = it.by_ref().take(n_train).collect();
    let dev = it.by_ref().take(n_dev).collect();
    let test = it.collect();
    Ok(Corpus {
        scheme: spec.scheme(),
        train,
        dev,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::cmi::corpus_cmi;
    use crate::data::conll::write_conll;

    fn all(c: &Corpus) -> Vec<&Sentence> {
        c.train.iter().chain(&c.dev).chain(&c.test).collect()
    }

    #[test]
    fn deterministic_and_split() {
        let spec = SyntheticSpec { sentences: 200, ..SyntheticSpec::default() };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(write_conll(&a.train), write_conll(&b.train));
        assert_eq!((a.train.len(), a.dev.len(), a.test.len()), (140, 30, 30));
        a.validate().unwrap();
    }

    #[test]
    fn no_switching_means_monolingual() {
        let spec = SyntheticSpec { sentences: 300, switch_prob: 0.0, ..SyntheticSpec::default() };
        let c = generate_synthetic(&spec).unwrap();
        let utts: Vec<Vec<Simplified>> = all(&c)
            .iter()
            .map(|s| s.tokens.iter().map(|t| t.simplified.unwrap()).collect())
            .collect();
        assert_eq!(corpus_cmi(&utts).unwrap().cmi_all, 0.0);
    }

    #[test]
    fn labels_match_inventories() {
        let spec = SyntheticSpec::default();
        let c = generate_synthetic(&spec).unwrap();
        for s in all(&c) {
            for t in &s.tokens {
                let ends = |sufs: &[String]| sufs.iter().any(|x| t.surface.ends_with(x.as_str()));
                match t.label.as_str() {
                    "lang1" => assert!(ends(&spec.lang1_suffixes) && !ends(&spec.lang2_suffixes)),
                    "lang2" => assert!(ends(&spec.lang2_suffixes) && !ends(&spec.lang1_suffixes)),
                    "ne" => assert!(t.surface.chars().next().unwrap().is_uppercase()),
                    "other" => assert!(!t.surface.chars().next().unwrap().is_alphabetic()),
                    l => panic!("unexpected label {l}"),
                }
            }
        }
    }

    #[test]
    fn label_rates_match_expectation() {
        let spec = SyntheticSpec { sentences: 1000, switch_prob: 0.5, ..SyntheticSpec::default() };
        let c = generate_synthetic(&spec).unwrap();
        let toks: Vec<&Token> = all(&c).into_iter().flat_map(|s| &s.tokens).collect();
        let n = toks.len() as f64;
        let count = |l: &str| toks.iter().filter(|t| t.label == l).count() as f64;
        let lang = 1.0 - spec.other_rate - spec.ne_rate;
        for (l, p) in [("other", spec.other_rate), ("ne", spec.ne_rate), ("lang1", lang / 2.0), ("lang2", lang / 2.0)] {
            let rel = (count(l) - p * n).abs() / (p * n);
            assert!(rel < 0.05, "{l}: {} vs {}", count(l), p * n);
        }
        let utts: Vec<Vec<Simplified>> = all(&c)
            .iter()
            .map(|s| s.tokens.iter().map(|t| t.simplified.unwrap()).collect())
            .collect();
        assert!(corpus_cmi(&utts).unwrap().cmi_mixed > 0.0);
    }

    #[test]
    fn pos_mode_tags_by_suffix() {
        let spec = SyntheticSpec { sentences: 50, task: Task::Pos, ..SyntheticSpec::default() };
        let c = generate_synthetic(&spec).unwrap();
        assert_eq!(c.task(), Task::Pos);
        c.validate().unwrap();
        let t = c.train.iter().flat_map(|s| &s.tokens).find(|t| t.surface.ends_with("ing")).unwrap();
        assert_eq!(t.label, "VERB");
    }

    #[test]
    fn bad_specs_rejected() {
        let mut s = SyntheticSpec::default();
        s.lang2_stems.clear();
        assert!(matches!(generate_synthetic(&s), Err(Error::Config(_))));
        let s = SyntheticSpec { lang2_suffixes: vec!["ing".into()], ..SyntheticSpec::default() };
        assert!(generate_synthetic(&s).is_err());
        let s = SyntheticSpec { switch_prob: 1.5, ..SyntheticSpec::default() };
        assert!(generate_synthetic(&s).is_err());
    }
}
