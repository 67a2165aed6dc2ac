use serde::{Deserialize, Serialize};

use crate::data::metrics::{accuracy, entity_f1, per_label_f1, wa_f1, weighted_mean, LabelScore};
use crate::data::Sentence;
use crate::error::{Error, Result};
use crate::tagger::{LabelScheme, Prediction, Simplified, TaggerModel, Task};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sentences: usize,
    pub tokens: usize,
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub per_label: Vec<LabelScore>,
    /// LID only: lang1/lang2 F1 weighted by support.
    pub wa_f1: Option<f64>,
    /// NER only: exact-match span F1.
    pub entity_f1: Option<f64>,
    /// Accuracy of the simplified head over tokens with a simplified label.
    pub secondary_accuracy: Option<f64>,
}

/// Scores predicted label sequences against gold sentences.
pub fn score_predictions(
    scheme: &LabelScheme,
    gold: &[Sentence],
    pred: &[Vec<String>],
    pred_simplified: Option<&[Vec<Simplified>]>,
) -> Result<EvalReport> {
    if gold.len() != pred.len() {
        return Err(Error::Input(format!("{} gold sentences but {} predictions", gold.len(), pred.len())));
    }
    let g: Vec<&str> = gold.iter().flat_map(|s| s.tokens.iter().map(|t| t.label.as_str())).collect();
    let p: Vec<&str> = pred.iter().flatten().map(String::as_str).collect();
    let labels: Vec<&str> = scheme.labels().iter().map(String::as_str).collect();
    let per_label = per_label_f1(&g, &p, &labels)?;
    let wa = (scheme.task() == Task::Lid).then(|| {
        let f = |l: &str| per_label.iter().find(|s| s.label == l).unwrap();
        let (a, b) = (f("lang1"), f("lang2"));
        wa_f1(a.f1, b.f1, a.support, b.support)
    });
    let ent = if scheme.task() == Task::Ner {
        let gs: Vec<Vec<&str>> = gold.iter().map(Sentence::labels).collect();
        let ps: Vec<Vec<&str>> = pred.iter().map(|s| s.iter().map(String::as_str).collect()).collect();
        Some(entity_f1(&gs, &ps)?)
    } else {
        None
    };
    let secondary_accuracy = match pred_simplified {
        Some(ps) => {
            let mut pairs = (Vec::new(), Vec::new());
            for (s, q) in gold.iter().zip(ps) {
                if s.len() != q.len() {
                    return Err(Error::Input("simplified prediction length mismatch".into()));
                }
                for (t, &y) in s.tokens.iter().zip(q) {
                    if let Some(gy) = t.simplified_in(scheme) {
                        pairs.0.push(gy);
                        pairs.1.push(y);
                    }
                }
            }
            (!pairs.0.is_empty()).then(|| accuracy(&pairs.0, &pairs.1)).transpose()?
        }
        None => None,
    };
    Ok(EvalReport {
        sentences: gold.len(),
        tokens: g.len(),
        accuracy: accuracy(&g, &p)?,
        weighted_f1: weighted_mean(&per_label),
        per_label,
        wa_f1: wa,
        entity_f1: ent,
        secondary_accuracy,
    })
}

/// Predicts every sentence with actual positions and scores the result.
pub fn evaluate(model: &TaggerModel, gold: &[Sentence]) -> Result<(EvalReport, Vec<Prediction>)> {
    let preds: Vec<Prediction> = gold.iter().map(|s| model.predict(&s.words())).collect::<Result<_>>()?;
    let labels: Vec<Vec<String>> = preds.iter().map(|p| p.labels.clone()).collect();
    let simp: Option<Vec<Vec<Simplified>>> = preds.iter().map(|p| p.simplified.clone()).collect();
    let report = score_predictions(model.scheme(), gold, &labels, simp.as_deref())?;
    Ok((report, preds))
}
