use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NgramWeight {
    pub text: String,
    pub pos: usize,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderTrace {
    pub order: usize,
    pub ngrams: Vec<NgramWeight>,
}

/// Attention weights recorded while encoding one word.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub word: String,
    pub orders: Vec<OrderTrace>,
    /// Weights across orders; empty unless hierarchical attention is on.
    pub hier: Vec<f64>,
}

/// One JSON-lines export record: a single (token, order) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub sentence: usize,
    pub token: usize,
    pub word: String,
    pub order: usize,
    pub ngrams: Vec<NgramWeight>,
    pub hier: Vec<f64>,
    pub pred: String,
    pub gold: Option<String>,
}

impl AttentionTrace {
    pub fn records(&self, sentence: usize, token: usize, pred: &str, gold: Option<&str>) -> Vec<TraceRecord> {
        self.orders
            .iter()
            .map(|o| TraceRecord {
                sentence,
                token,
                word: self.word.clone(),
                order: o.order,
                ngrams: o.ngrams.clone(),
                hier: self.hier.clone(),
                pred: pred.to_string(),
                gold: gold.map(str::to_string),
            })
            .collect()
    }

    /// Every weight list is nonnegative and sums to one within `tol`.
    pub fn is_simplex(&self, tol: f64) -> bool {
        let ok = |ws: &mut dyn Iterator<Item = f64>| {
            let mut s = 0.0;
            for w in ws {
                if !(w >= 0.0) {
                    return false;
                }
                s += w;
            }
            (s - 1.0).abs() <= tol
        };
        self.orders
            .iter()
            .all(|o| ok(&mut o.ngrams.iter().map(|n| n.alpha)))
            && (self.hier.is_empty() || ok(&mut self.hier.iter().copied()))
    }
}

impl TraceRecord {
    pub fn is_simplex(&self, tol: f64) -> bool {
        AttentionTrace {
            word: String::new(),
            orders: vec![OrderTrace {
                order: self.order,
                ngrams: self.ngrams.clone(),
            }],
            hier: self.hier.clone(),
        }
        .is_simplex(tol)
    }
}
