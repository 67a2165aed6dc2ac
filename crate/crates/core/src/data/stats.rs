use serde::{Deserialize, Serialize};

use super::cmi::{corpus_cmi, is_code_switched, CmiReport};
use super::conll::{Corpus, Sentence};
use crate::error::Result;
use crate::tagger::{LabelScheme, Simplified};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCount {
    pub label: String,
    pub count: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtteranceClasses {
    pub code_switched: usize,
    pub lang1_only: usize,
    pub lang2_only: usize,
    pub other_only: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub name: String,
    pub sentences: usize,
    pub tokens: usize,
    /// Counts in scheme order.
    pub labels: Vec<LabelCount>,
    /// Present when every token has a simplified label.
    pub utterances: Option<UtteranceClasses>,
    pub cmi: Option<CmiReport>,
}

pub fn split_stats(name: &str, sentences: &[Sentence], scheme: &LabelScheme) -> Result<SplitStats> {
    let mut counts = vec![0usize; scheme.len()];
    for t in sentences.iter().flat_map(|s| &s.tokens) {
        counts[scheme.index_of(&t.label)?] += 1;
    }
    let simplified: Option<Vec<Vec<Simplified>>> = sentences
        .iter()
        .map(|s| s.tokens.iter().map(|t| t.simplified_in(scheme)).collect())
        .collect();
    let (utterances, cmi) = match simplified {
        Some(utts) => {
            let mut c = UtteranceClasses::default();
            for u in &utts {
                if is_code_switched(u) {
                    c.code_switched += 1;
                } else if u.contains(&Simplified::Lang1) {
                    c.lang1_only += 1;
                } else if u.contains(&Simplified::Lang2) {
                    c.lang2_only += 1;
                } else {
                    c.other_only += 1;
                }
            }
            (Some(c), Some(corpus_cmi(&utts)?))
        }
        None => (None, None),
    };
    Ok(SplitStats {
        name: name.to_string(),
        sentences: sentences.len(),
        tokens: counts.iter().sum(),
        labels: scheme
            .labels()
            .iter()
            .zip(counts)
            .map(|(l, count)| LabelCount { label: l.clone(), count })
            .collect(),
        utterances,
        cmi,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub task: String,
    pub splits: Vec<SplitStats>,
}

pub fn dataset_stats(corpus: &Corpus) -> Result<CorpusStats> {
    Ok(CorpusStats {
        task: corpus.task().to_string(),
        splits: corpus
            .splits()
            .into_iter()
            .map(|(n, s)| split_stats(n, s, &corpus.scheme))
            .collect::<Result<_>>()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{generate_synthetic, SyntheticSpec};

    #[test]
    fn counts_are_conserved() {
        let c = generate_synthetic(&SyntheticSpec { sentences: 100, ..SyntheticSpec::default() }).unwrap();
        let st = dataset_stats(&c).unwrap();
        for s in &st.splits {
            let real: usize = c.splits().iter().find(|x| x.0 == s.name).unwrap().1.iter().map(Sentence::len).sum();
            assert_eq!(s.tokens, real);
            assert_eq!(s.labels.iter().map(|l| l.count).sum::<usize>(), real);
            let u = s.utterances.as_ref().unwrap();
            assert_eq!(u.code_switched + u.lang1_only + u.lang2_only + u.other_only, s.sentences);
        }
    }

    #[test]
    fn monolingual_has_no_switched_utterances() {
        let spec = SyntheticSpec { sentences: 100, switch_prob: 0.0, ..SyntheticSpec::default() };
        let st = dataset_stats(&generate_synthetic(&spec).unwrap()).unwrap();
        assert!(st.splits.iter().all(|s| s.utterances.as_ref().unwrap().code_switched == 0));
    }
}
