use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tagger::Simplified;

/// Code-mixed index of one utterance, on a 0 to 100 scale.
pub fn compute_cmi(labels: &[Simplified]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Input("CMI of an empty sentence".into()));
    }
    let n = labels.len();
    let u = labels.iter().filter(|&&l| l == Simplified::Other).count();
    if n == u {
        return Ok(0.0);
    }
    let l1 = labels.iter().filter(|&&l| l == Simplified::Lang1).count();
    let m = l1.max(n - u - l1);
    Ok(100.0 * (1.0 - m as f64 / (n - u) as f64))
}

/// Contains at least one token of each language.
pub fn is_code_switched(labels: &[Simplified]) -> bool {
    labels.contains(&Simplified::Lang1) && labels.contains(&Simplified::Lang2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CmiReport {
    /// Mean CMI over every utterance.
    pub cmi_all: f64,
    /// Mean CMI over code-switched utterances only.
    pub cmi_mixed: f64,
    pub utterances: usize,
    pub mixed_utterances: usize,
}

pub fn corpus_cmi(utterances: &[Vec<Simplified>]) -> Result<CmiReport> {
    let mut all = 0.0;
    let mut mixed = 0.0;
    let mut n_mixed = 0;
    for u in utterances {
        let c = compute_cmi(u)?;
        all += c;
        if is_code_switched(u) {
            mixed += c;
            n_mixed += 1;
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    Ok(CmiReport {
        cmi_all: mean(all, utterances.len()),
        cmi_mixed: mean(mixed, n_mixed),
        utterances: utterances.len(),
        mixed_utterances: n_mixed,
    })
}
