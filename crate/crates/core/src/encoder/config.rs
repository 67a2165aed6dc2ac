use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the per-order n-gram feature maps are reduced to one vector each.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingMode {
    /// Max over positions, concatenated across orders (the CNN baseline).
    MaxPool,
    /// Attention per order without position embeddings, concatenated.
    Attn,
    /// Position-aware attention per order, concatenated.
    PosAttn,
    /// Position-aware attention per order, then attention across orders.
    PosHierAttn,
}

impl PoolingMode {
    pub fn is_attention(self) -> bool {
        self != PoolingMode::MaxPool
    }

    pub fn uses_positions(self) -> bool {
        matches!(self, PoolingMode::PosAttn | PoolingMode::PosHierAttn)
    }

    pub fn is_hierarchical(self) -> bool {
        self == PoolingMode::PosHierAttn
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PoolingMode::MaxPool => "maxpool",
            PoolingMode::Attn => "attn",
            PoolingMode::PosAttn => "posattn",
            PoolingMode::PosHierAttn => "poshierattn",
        }
    }
}

impl fmt::Display for PoolingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PoolingMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "maxpool" => Ok(PoolingMode::MaxPool),
            "attn" | "attention" => Ok(PoolingMode::Attn),
            "posattn" => Ok(PoolingMode::PosAttn),
            "poshierattn" => Ok(PoolingMode::PosHierAttn),
            _ => Err(Error::Config(format!(
                "unknown pooling mode `{s}` (expected maxpool, attn, posattn or poshierattn)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub char_vocab_size: usize,
    pub char_emb_dim: usize,
    /// N-gram orders in ascending order.
    pub orders: Vec<usize>,
    /// Output channels per order, aligned with `orders`.
    pub channels: Vec<usize>,
    pub max_word_len: usize,
    pub attention_dim: usize,
    pub pooling: PoolingMode,
    pub token_dim: usize,
    pub highway: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            char_vocab_size: 2,
            char_emb_dim: 16,
            orders: vec![1, 2, 3],
            channels: vec![32, 32, 64],
            max_word_len: 50,
            attention_dim: 64,
            pooling: PoolingMode::PosHierAttn,
            token_dim: 128,
            highway: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.orders.is_empty() {
            return bad("at least one n-gram order is required".into());
        }
        if self.orders.windows(2).any(|w| w[0] >= w[1]) || self.orders[0] == 0 {
            return bad(format!("orders {:?} must be positive and strictly ascending", self.orders));
        }
        if self.channels.len() != self.orders.len() {
            return bad(format!(
                "{} channel counts for {} orders",
                self.channels.len(),
                self.orders.len()
            ));
        }
        if self.channels.iter().any(|&c| c == 0) {
            return bad("every order needs at least one channel".into());
        }
        if self.max_order() > self.max_word_len {
            return bad(format!(
                "largest order {} exceeds max word length {}",
                self.max_order(),
                self.max_word_len
            ));
        }
        if self.attention_dim == 0 || self.char_emb_dim == 0 || self.token_dim == 0 {
            return bad("attention_dim, char_emb_dim and token_dim must be positive".into());
        }
        if self.char_vocab_size < 2 {
            return bad("character vocabulary must include PAD and UNK".into());
        }
        Ok(())
    }

    pub fn max_order(&self) -> usize {
        *self.orders.iter().max().unwrap_or(&1)
    }

    /// Width of the pooled representation, `Σ c_j`.
    pub fn enhanced_dim(&self) -> usize {
        self.channels.iter().sum()
    }

    /// Rows in the position table of order `j`: `k − j + 1`.
    pub fn position_rows(&self, order: usize) -> usize {
        self.max_word_len + 1 - order
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = EncoderConfig::default();
        c.validate().unwrap();
        assert_eq!(c.enhanced_dim(), 128);
        assert_eq!(c.position_rows(3), 48);
    }

    #[test]
    fn invalid_configs() {
        let mut c = EncoderConfig {
            orders: vec![1, 60],
            channels: vec![4, 4],
            ..EncoderConfig::default()
        };
        assert!(c.validate().is_err());
        c.orders = vec![2, 1];
        assert!(c.validate().is_err());
        c.orders = vec![1, 2];
        c.channels = vec![4];
        assert!(c.validate().is_err());
        c.channels = vec![4, 0];
        assert!(c.validate().is_err());
    }

    #[test]
    fn pooling_mode_parsing() {
        assert_eq!("PosHierAttn".parse::<PoolingMode>().unwrap(), PoolingMode::PosHierAttn);
        assert_eq!("max-pool".parse::<PoolingMode>().unwrap(), PoolingMode::MaxPool);
        assert!("mean".parse::<PoolingMode>().is_err());
    }
}
