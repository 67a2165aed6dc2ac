use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelScore {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

fn check_len<T>(gold: &[T], pred: &[T]) -> Result<()> {
    if gold.len() != pred.len() {
        return Err(Error::Input(format!(
            "gold has {} labels but prediction has {}",
            gold.len(),
            pred.len()
        )));
    }
    Ok(())
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Precision, recall and F1 of each label in `labels`.
pub fn per_label_f1<T: AsRef<str>>(gold: &[T], pred: &[T], labels: &[T]) -> Result<Vec<LabelScore>> {
    check_len(gold, pred)?;
    Ok(labels
        .iter()
        .map(|l| {
            let l = l.as_ref();
            let (mut tp, mut fp, mut fnn) = (0usize, 0usize, 0usize);
            for (g, p) in gold.iter().zip(pred) {
                let (g, p) = (g.as_ref() == l, p.as_ref() == l);
                match (g, p) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fnn += 1,
                    _ => {}
                }
            }
            let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
            let recall = if tp + fnn == 0 { 0.0 } else { tp as f64 / (tp + fnn) as f64 };
            LabelScore {
                label: l.to_string(),
                precision,
                recall,
                f1: if tp == 0 { 0.0 } else { (2 * tp) as f64 / (2 * tp + fp + fnn) as f64 },
                support: tp + fnn,
            }
        })
        .collect())
}

/// Support-weighted mean of per-label F1; zero when no label has support.
pub fn weighted_f1<T: AsRef<str>>(gold: &[T], pred: &[T], labels: &[T]) -> Result<f64> {
    Ok(weighted_mean(&per_label_f1(gold, pred, labels)?))
}

pub fn weighted_mean(scores: &[LabelScore]) -> f64 {
    let total: usize = scores.iter().map(|s| s.support).sum();
    if total == 0 {
        return 0.0;
    }
    scores.iter().map(|s| s.f1 * s.support as f64).sum::<f64>() / total as f64
}

/// Weighted average of the two language F1 scores by gold support.
pub fn wa_f1(lang1_f1: f64, lang2_f1: f64, lang1_support: usize, lang2_support: usize) -> f64 {
    let n = lang1_support + lang2_support;
    if n == 0 {
        return 0.0;
    }
    (lang1_f1 * lang1_support as f64 + lang2_f1 * lang2_support as f64) / n as f64
}

pub fn accuracy<T: PartialEq>(gold: &[T], pred: &[T]) -> Result<f64> {
    check_len(gold, pred)?;
    if gold.is_empty() {
        return Ok(0.0);
    }
    let hits = gold.iter().zip(pred).filter(|(g, p)| g == p).count();
    Ok(hits as f64 / gold.len() as f64)
}

/// `(type, start, end_exclusive)` spans of a BIO sequence. An `I-X` that
/// does not continue an `X` span opens a new one.
pub fn bio_spans<T: AsRef<str>>(tags: &[T]) -> BTreeSet<(String, usize, usize)> {
    let mut spans = BTreeSet::new();
    let mut open: Option<(String, usize)> = None;
    for (i, t) in tags.iter().enumerate() {
        let t = t.as_ref();
        let (cont, start) = match (t.strip_prefix("B-"), t.strip_prefix("I-")) {
            (Some(ty), _) => (None, Some(ty)),
            (_, Some(ty)) if open.as_ref().is_some_and(|(o, _)| o == ty) => (Some(ty), None),
            (_, Some(ty)) => (None, Some(ty)),
            _ => (None, None),
        };
        if cont.is_some() {
            continue;
        }
        if let Some((ty, s)) = open.take() {
            spans.insert((ty, s, i));
        }
        if let Some(ty) = start {
            open = Some((ty.to_string(), i));
        }
    }
    if let Some((ty, s)) = open {
        spans.insert((ty, s, tags.len()));
    }
    spans
}

/// Micro-averaged exact-match F1 over BIO entity spans.
pub fn entity_f1<T: AsRef<str>>(gold: &[Vec<T>], pred: &[Vec<T>]) -> Result<f64> {
    check_len(gold, pred)?;
    let (mut tp, mut ng, mut np) = (0usize, 0usize, 0usize);
    for (g, p) in gold.iter().zip(pred) {
        check_len(g, p)?;
        let (gs, ps) = (bio_spans(g), bio_spans(p));
        tp += gs.intersection(&ps).count();
        ng += gs.len();
        np += ps.len();
    }
    let precision = if np == 0 { 0.0 } else { tp as f64 / np as f64 };
    let recall = if ng == 0 { 0.0 } else { tp as f64 / ng as f64 };
    Ok(harmonic(precision, recall))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_confusion_case() {
        let g = ["A", "A", "B", "B"];
        let p = ["A", "B", "B", "B"];
        let s = per_label_f1(&g, &p, &["A", "B"]).unwrap();
        assert!((s[0].f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((s[1].f1 - 0.8).abs() < 1e-15);
        let w = weighted_f1(&g, &p, &["A", "B", "C"]).unwrap();
        assert!((w - (2.0 * 2.0 / 3.0 + 2.0 * 0.8) / 4.0).abs() < 1e-15);
        assert_eq!(weighted_f1(&g, &g, &["A", "B"]).unwrap(), 1.0);
        assert!(matches!(weighted_f1(&g, &p[..3], &["A"]), Err(Error::Input(_))));
    }

    #[test]
    fn wa_f1_weights_by_support() {
        assert!((wa_f1(1.0, 0.5, 3, 1) - 0.875).abs() < 1e-15);
        assert_eq!(wa_f1(0.3, 0.4, 0, 0), 0.0);
    }

    #[test]
    fn entity_spans() {
        let g = vec![vec!["B-PER", "I-PER", "O", "B-LOC"]];
        assert_eq!(entity_f1(&g, &g).unwrap(), 1.0);
        let p = vec![vec!["B-PER", "O", "O", "B-LOC"]];
        // one of two spans right on each side
        assert!((entity_f1(&g, &p).unwrap() - 0.5).abs() < 1e-15);
        let spans = bio_spans(&["I-PER", "I-PER", "I-LOC"]);
        assert_eq!(spans.len(), 2);
    }

    fn oracle(gold: &[u8], pred: &[u8], k: u8) -> f64 {
        // counts from an explicit k×k confusion matrix
        let mut m = vec![vec![0usize; k as usize]; k as usize];
        for (&g, &p) in gold.iter().zip(pred) {
            m[g as usize][p as usize] += 1;
        }
        let mut num = 0.0;
        let mut den = 0usize;
        for l in 0..k as usize {
            let tp = m[l][l];
            let row: usize = m[l].iter().sum();
            let col: usize = m.iter().map(|r| r[l]).sum();
            let f = if tp == 0 { 0.0 } else { 2.0 * tp as f64 / (row + col) as f64 };
            num += f * row as f64;
            den += row;
        }
        if den == 0 {
            0.0
        } else {
            num / den as f64
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn weighted_f1_matches_confusion_oracle(pairs in prop::collection::vec((0u8..4, 0u8..4), 1..30)) {
            let names = ["w", "x", "y", "z"];
            let gold: Vec<&str> = pairs.iter().map(|p| names[p.0 as usize]).collect();
            let pred: Vec<&str> = pairs.iter().map(|p| names[p.1 as usize]).collect();
            let g: Vec<u8> = pairs.iter().map(|p| p.0).collect();
            let p: Vec<u8> = pairs.iter().map(|p| p.1).collect();
            let got = weighted_f1(&gold, &pred, &names).unwrap();
            prop_assert_eq!(got, oracle(&g, &p, 4));
        }
    }
}
