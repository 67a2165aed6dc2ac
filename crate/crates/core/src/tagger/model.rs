use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bilstm::BiLstm;
use super::crf::{forbid_boundaries, transition_spec, Chain};
use super::labels::{LabelScheme, Simplified, Task};
use super::secondary::{secondary_backward, secondary_probs};
use crate::data::{EmbeddingTable, Sentence};
use crate::encoder::{
    ActualPositions, AttentionTrace, CharNgramEncoder, CharVocab, EncoderConfig, PoolingMode,
    PositionSampler, ShuffledPositions, WordForward,
};
use crate::error::{Error, Result};
use crate::numerics::serialize::{read_container, write_container};
use crate::numerics::{
    add_assign, matvec_add, matvec_t_add, outer_add, Gradients, Init, ParamGroup,
    ParamId, ParamSpec, ParamStore, Tensor,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggerFlags {
    /// Feed the enhanced n-gram representation into the CRF as well.
    pub concat_ngram_to_crf: bool,
    /// Train and predict the simplified-LID head.
    pub use_secondary: bool,
    /// Concatenate static word embeddings to the BiLSTM input.
    pub use_static: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaggerConfig {
    pub encoder: EncoderConfig,
    pub hidden: usize,
    pub flags: TaggerFlags,
}

impl Default for TaggerConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            hidden: 64,
            flags: TaggerFlags {
                concat_ngram_to_crf: true,
                use_secondary: true,
                use_static: false,
            },
        }
    }
}

impl TaggerConfig {
    /// Pooling mode and flags of a rung of the ablation ladder
    /// (`1.2`, `2.1`, `2.2`, `2.3`, `3.1`, `3.2`, `3.3`).
    pub fn experiment(name: &str) -> Result<(PoolingMode, TaggerFlags)> {
        let off = TaggerFlags::default();
        Ok(match name {
            "1.2" => (PoolingMode::MaxPool, off),
            "2.1" => (PoolingMode::Attn, off),
            "2.2" => (PoolingMode::PosAttn, off),
            "2.3" => (PoolingMode::PosHierAttn, off),
            "3.1" => (PoolingMode::PosHierAttn, TaggerFlags { concat_ngram_to_crf: true, ..off }),
            "3.2" => (
                PoolingMode::PosHierAttn,
                TaggerFlags { concat_ngram_to_crf: true, use_secondary: true, ..off },
            ),
            "3.3" => (
                PoolingMode::PosHierAttn,
                TaggerFlags { concat_ngram_to_crf: true, use_secondary: true, use_static: true },
            ),
            _ => return Err(Error::Config(format!("unknown experiment `{name}`"))),
        })
    }
}

/// A sentence with labels resolved to indices.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSentence {
    pub words: Vec<String>,
    pub labels: Vec<usize>,
    pub simplified: Vec<Option<Simplified>>,
}

/// Summed losses over a batch with the counts that normalize them.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BatchLoss {
    pub nll_sum: f64,
    pub tokens: usize,
    pub secondary_sum: f64,
    pub secondary_tokens: usize,
}

impl BatchLoss {
    /// Sentence NLL summed over the batch, divided by its token count.
    pub fn primary(&self) -> f64 {
        if self.tokens == 0 {
            0.0
        } else {
            self.nll_sum / self.tokens as f64
        }
    }

    /// Mean cross-entropy over tokens that have a simplified label.
    pub fn secondary(&self) -> f64 {
        if self.secondary_tokens == 0 {
            0.0
        } else {
            self.secondary_sum / self.secondary_tokens as f64
        }
    }

    pub fn add(&mut self, o: &BatchLoss) {
        self.nll_sum += o.nll_sum;
        self.tokens += o.tokens;
        self.secondary_sum += o.secondary_sum;
        self.secondary_tokens += o.secondary_tokens;
    }
}

#[derive(Clone, Debug)]
pub struct Prediction {
    pub labels: Vec<String>,
    pub label_ids: Vec<usize>,
    pub score: f64,
    pub simplified: Option<Vec<Simplified>>,
    pub simplified_probs: Option<Vec<[f64; 3]>>,
    /// One entry per token; `None` in max-pool mode.
    pub traces: Vec<Option<AttentionTrace>>,
}

#[derive(Clone, Copy, Debug)]
struct HeadIds {
    trans: ParamId,
    emit_w: ParamId,
    emit_b: ParamId,
    sec_w: ParamId,
    sec_b: ParamId,
}

struct SentenceForward {
    inputs: Vec<Vec<f64>>,
    lstm: super::bilstm::BiLstmForward,
    crf_in: Vec<Vec<f64>>,
    emissions: Vec<f64>,
    sec_probs: Vec<[f64; 3]>,
}

#[derive(Serialize, Deserialize)]
struct StaticMeta {
    dim: usize,
    words: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    config: TaggerConfig,
    task: Task,
    labels: Vec<String>,
    chars: String,
    static_tables: Vec<StaticMeta>,
}

/// Encoder, BiLSTM, CRF primary head and simplified-LID secondary head.
#[derive(Clone, Debug)]
pub struct TaggerModel {
    config: TaggerConfig,
    scheme: LabelScheme,
    store: ParamStore,
    encoder: CharNgramEncoder,
    bilstm: BiLstm,
    heads: HeadIds,
    static_tables: Vec<EmbeddingTable>,
}

fn input_dim(config: &TaggerConfig, tables: &[EmbeddingTable]) -> usize {
    config.encoder.token_dim + tables.iter().map(EmbeddingTable::dim).sum::<usize>()
}

fn crf_dim(config: &TaggerConfig) -> usize {
    2 * config.hidden + if config.flags.concat_ngram_to_crf { config.encoder.enhanced_dim() } else { 0 }
}

fn head_specs(config: &TaggerConfig, labels: usize) -> Vec<ParamSpec> {
    let c = crf_dim(config);
    let e = config.encoder.enhanced_dim();
    vec![
        transition_spec(labels),
        ParamSpec::new("crf.emission.W", &[labels, c], ParamGroup::NonCore, Init::Xavier(c, labels)),
        ParamSpec::new("crf.emission.b", &[labels], ParamGroup::NonCore, Init::Zeros),
        ParamSpec::new("secondary.W", &[3, e], ParamGroup::NonCore, Init::Xavier(e, 3)),
        ParamSpec::new("secondary.b", &[3], ParamGroup::NonCore, Init::Zeros),
    ]
}

impl TaggerModel {
    fn specs(config: &TaggerConfig, tables: &[EmbeddingTable], labels: usize) -> (Vec<ParamSpec>, [usize; 3]) {
        let mut specs = CharNgramEncoder::param_specs(&config.encoder);
        let n_enc = specs.len();
        specs.extend(BiLstm::param_specs("tagger.bilstm", input_dim(config, tables), config.hidden));
        let n_lstm = specs.len();
        specs.extend(head_specs(config, labels));
        let n = specs.len();
        (specs, [n_enc, n_lstm, n])
    }

    fn prepare(mut config: TaggerConfig, vocab: &CharVocab, tables: Vec<EmbeddingTable>) -> Result<(TaggerConfig, Vec<EmbeddingTable>)> {
        config.encoder.char_vocab_size = vocab.size();
        config.encoder.validate()?;
        if config.hidden == 0 {
            return Err(Error::Config("BiLSTM hidden size must be positive".into()));
        }
        let tables = if config.flags.use_static {
            if tables.is_empty() {
                return Err(Error::Config("use_static is set but no embedding table was given".into()));
            }
            tables
        } else {
            Vec::new()
        };
        Ok((config, tables))
    }

    fn bind(
        config: TaggerConfig,
        scheme: LabelScheme,
        vocab: CharVocab,
        tables: Vec<EmbeddingTable>,
        store: ParamStore,
        bounds: [usize; 3],
        ids: &[ParamId],
    ) -> Result<Self> {
        let encoder = CharNgramEncoder::attach(config.encoder.clone(), vocab, &store)?;
        let bilstm = BiLstm::from_ids(input_dim(&config, &tables), config.hidden, &ids[bounds[0]..bounds[1]]);
        let h = &ids[bounds[1]..];
        Ok(Self {
            heads: HeadIds {
                trans: h[0],
                emit_w: h[1],
                emit_b: h[2],
                sec_w: h[3],
                sec_b: h[4],
            },
            config,
            scheme,
            store,
            encoder,
            bilstm,
            static_tables: tables,
        })
    }

    /// Freshly initialized model. The encoder's vocabulary size is taken
    /// from `vocab`.
    pub fn new(
        config: TaggerConfig,
        scheme: LabelScheme,
        vocab: CharVocab,
        static_tables: Vec<EmbeddingTable>,
        seed: u64,
    ) -> Result<Self> {
        let (config, tables) = Self::prepare(config, &vocab, static_tables)?;
        let (specs, bounds) = Self::specs(&config, &tables, scheme.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let ids = store.register(&specs, &mut rng)?;
        let mut model = Self::bind(config, scheme, vocab, tables, store, bounds, &ids)?;
        model.bilstm.init_forget_bias(&mut model.store);
        let l = model.scheme.len();
        forbid_boundaries(model.store.get_mut(model.heads.trans).tensor.values_mut(), l);
        Ok(model)
    }

    pub fn config(&self) -> &TaggerConfig {
        &self.config
    }

    pub fn scheme(&self) -> &LabelScheme {
        &self.scheme
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn encoder(&self) -> &CharNgramEncoder {
        &self.encoder
    }

    pub fn vocab(&self) -> &CharVocab {
        self.encoder.vocab()
    }

    pub fn static_tables(&self) -> &[EmbeddingTable] {
        &self.static_tables
    }

    pub fn pooling(&self) -> PoolingMode {
        self.config.encoder.pooling
    }

    /// Switches pooling mode; all modes share one parameter layout.
    pub fn set_pooling(&mut self, mode: PoolingMode) {
        self.config.encoder.pooling = mode;
        self.encoder.set_pooling(mode);
    }

    pub fn bilstm_input_dim(&self) -> usize {
        input_dim(&self.config, &self.static_tables)
    }

    pub fn crf_input_dim(&self) -> usize {
        crf_dim(&self.config)
    }

    /// SHA-256 over every encoder parameter.
    pub fn encoder_checksum(&self) -> String {
        self.store.checksum("encoder.")
    }

    pub fn is_encoder_param(name: &str) -> bool {
        name.starts_with("encoder.")
    }

    /// True when any encoder parameter would receive gradient.
    pub fn encoder_trainable(&self) -> bool {
        self.store.iter().any(|(_, p)| p.trainable && Self::is_encoder_param(&p.name))
    }

    pub fn set_encoder_trainable(&mut self, trainable: bool) {
        for p in self.store.iter_mut().filter(|p| Self::is_encoder_param(&p.name)) {
            p.trainable = trainable;
        }
    }

    /// BiLSTM input for one token: the encoder's token vector followed by
    /// each static table's vector (zeros when the word is absent).
    pub fn bilstm_input(&self, word: &str, token_vec: &[f64]) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.bilstm_input_dim());
        v.extend_from_slice(token_vec);
        for t in &self.static_tables {
            let start = v.len();
            v.resize(start + t.dim(), 0.0);
            t.lookup_into(word, &mut v[start..]);
        }
        v
    }

    /// CRF emission input: BiLSTM output, followed by the enhanced n-gram
    /// representation when `concat_ngram_to_crf` is set.
    pub fn crf_input(&self, lstm_out: &[f64], enhanced: &[f64]) -> Vec<f64> {
        let mut v = lstm_out.to_vec();
        if self.config.flags.concat_ngram_to_crf {
            v.extend_from_slice(enhanced);
        }
        v
    }

    /// Simplified-LID distribution from the enhanced representation alone.
    pub fn secondary_logits(&self, enhanced: &Tensor) -> Result<Tensor> {
        if !self.config.flags.use_secondary {
            return Err(Error::Config("the secondary head is disabled".into()));
        }
        let e = self.config.encoder.enhanced_dim();
        if enhanced.len() != e {
            return Err(Error::dim("secondary_logits", format!("expected {e} features, got {}", enhanced.len())));
        }
        Tensor::vector(self.secondary_probs(enhanced.values()).to_vec())
    }

    fn secondary_probs(&self, enhanced: &[f64]) -> [f64; 3] {
        secondary_probs(self.store.value(self.heads.sec_w), self.store.value(self.heads.sec_b), enhanced)
    }

    pub fn encode_sentence(&self, s: &Sentence) -> Result<EncodedSentence> {
        if s.is_empty() {
            return Err(Error::Input("empty sentence".into()));
        }
        Ok(EncodedSentence {
            words: s.words(),
            labels: s
                .tokens
                .iter()
                .map(|t| self.scheme.index_of(&t.label))
                .collect::<Result<_>>()?,
            simplified: s.tokens.iter().map(|t| t.simplified_in(&self.scheme)).collect(),
        })
    }

    fn encode_words<'a>(
        &self,
        words: impl Iterator<Item = &'a str>,
        sampler: &mut dyn PositionSampler,
    ) -> Result<(HashMap<&'a str, usize>, Vec<WordForward>)> {
        let mut index = HashMap::new();
        let mut fwds = Vec::new();
        for w in words {
            if !index.contains_key(w) {
                index.insert(w, fwds.len());
                fwds.push(self.encoder.forward(&self.store, w, sampler)?);
            }
        }
        Ok((index, fwds))
    }

    fn forward_sentence(&self, words: &[String], wf: &[&WordForward]) -> Result<SentenceForward> {
        let inputs: Vec<Vec<f64>> = words
            .iter()
            .zip(wf)
            .map(|(w, f)| self.bilstm_input(w, &f.token_vec))
            .collect();
        let xs: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
        let lstm = self.bilstm.forward(&self.store, &xs)?;
        let crf_in: Vec<Vec<f64>> = lstm
            .outputs
            .iter()
            .zip(wf)
            .map(|(o, f)| self.crf_input(o, &f.enhanced))
            .collect();
        let l = self.scheme.len();
        let c = self.crf_input_dim();
        let mut emissions = Vec::with_capacity(words.len() * l);
        for x in &crf_in {
            let mut e = self.store.value(self.heads.emit_b).to_vec();
            matvec_add(self.store.value(self.heads.emit_w), c, x, &mut e);
            emissions.extend(e);
        }
        let sec_probs = if self.config.flags.use_secondary {
            wf.iter().map(|f| self.secondary_probs(&f.enhanced)).collect()
        } else {
            Vec::new()
        };
        Ok(SentenceForward {
            inputs,
            lstm,
            crf_in,
            emissions,
            sec_probs,
        })
    }

    fn chain<'a>(&'a self, emissions: &'a [f64]) -> Result<Chain<'a>> {
        Chain::new(emissions, self.store.value(self.heads.trans), self.scheme.len())
    }

    fn sentence_loss(&self, s: &EncodedSentence, f: &SentenceForward) -> Result<BatchLoss> {
        let nll = self.chain(&f.emissions)?.nll(&s.labels)?;
        let mut out = BatchLoss {
            nll_sum: nll,
            tokens: s.words.len(),
            ..Default::default()
        };
        for (p, y) in f.sec_probs.iter().zip(&s.simplified) {
            if let Some(y) = y {
                out.secondary_sum -= p[y.index()].ln();
                out.secondary_tokens += 1;
            }
        }
        Ok(out)
    }

    /// Forward-only loss over `batch` with actual positions.
    pub fn batch_loss(&self, batch: &[&EncodedSentence]) -> Result<BatchLoss> {
        let (index, fwds) = self.encode_words(batch.iter().flat_map(|s| s.words.iter().map(String::as_str)), &mut ActualPositions)?;
        let mut total = BatchLoss::default();
        for s in batch {
            let wf: Vec<&WordForward> = s.words.iter().map(|w| &fwds[index[w.as_str()]]).collect();
            let f = self.forward_sentence(&s.words, &wf)?;
            total.add(&self.sentence_loss(s, &f)?);
        }
        Ok(total)
    }

    /// Loss and gradients of `primary + beta·secondary` over `batch`, added
    /// into `grads`. Encoder gradients are skipped when no encoder
    /// parameter is trainable.
    pub fn batch_gradients(&self, batch: &[&EncodedSentence], beta: f64, grads: &mut Gradients) -> Result<BatchLoss> {
        let (index, fwds) = self.encode_words(batch.iter().flat_map(|s| s.words.iter().map(String::as_str)), &mut ActualPositions)?;
        let n_tokens: usize = batch.iter().map(|s| s.words.len()).sum();
        let n_sec: usize = if self.config.flags.use_secondary {
            batch.iter().flat_map(|s| &s.simplified).filter(|y| y.is_some()).count()
        } else {
            0
        };
        let p_scale = 1.0 / n_tokens.max(1) as f64;
        let s_scale = if n_sec > 0 { beta / n_sec as f64 } else { 0.0 };
        let backprop_encoder = self.encoder_trainable();
        let t_dim = self.config.encoder.token_dim;
        let e_dim = self.config.encoder.enhanced_dim();
        let h2 = 2 * self.config.hidden;
        let c = self.crf_input_dim();
        let l = self.scheme.len();
        let mut d_tok: Vec<Vec<f64>> = vec![vec![0.0; t_dim]; fwds.len()];
        let mut d_enh: Vec<Vec<f64>> = vec![vec![0.0; e_dim]; fwds.len()];
        let mut total = BatchLoss::default();

        for s in batch {
            let wi: Vec<usize> = s.words.iter().map(|w| index[w.as_str()]).collect();
            let wf: Vec<&WordForward> = wi.iter().map(|&i| &fwds[i]).collect();
            let f = self.forward_sentence(&s.words, &wf)?;
            let (nll, d_em, d_tr) = self.chain(&f.emissions)?.nll_backward(&s.labels)?;
            total.nll_sum += nll;
            total.tokens += s.words.len();

            for (g, d) in grads.buf(self.heads.trans).iter_mut().zip(&d_tr) {
                *g += d * p_scale;
            }
            let mut d_lstm = Vec::with_capacity(s.words.len());
            for (t, x) in f.crf_in.iter().enumerate() {
                let de: Vec<f64> = d_em[t * l..(t + 1) * l].iter().map(|v| v * p_scale).collect();
                outer_add(grads.buf(self.heads.emit_w), c, &de, x);
                add_assign(grads.buf(self.heads.emit_b), &de);
                let mut dx = vec![0.0; c];
                matvec_t_add(self.store.value(self.heads.emit_w), c, &de, &mut dx);
                if self.config.flags.concat_ngram_to_crf {
                    add_assign(&mut d_enh[wi[t]], &dx[h2..]);
                }
                dx.truncate(h2);
                d_lstm.push(dx);
            }
            let xs: Vec<&[f64]> = f.inputs.iter().map(Vec::as_slice).collect();
            let d_in = self.bilstm.backward(&self.store, &xs, &f.lstm, &d_lstm, grads);
            for (t, d) in d_in.iter().enumerate() {
                add_assign(&mut d_tok[wi[t]], &d[..t_dim]);
            }

            for (t, (p, y)) in f.sec_probs.iter().zip(&s.simplified).enumerate() {
                let Some(y) = y else { continue };
                total.secondary_sum -= p[y.index()].ln();
                total.secondary_tokens += 1;
                let mut gw = grads.take(self.heads.sec_w);
                let mut gb = grads.take(self.heads.sec_b);
                let w = self.store.value(self.heads.sec_w);
                secondary_backward(w, &wf[t].enhanced, p, *y, s_scale, (&mut gw, &mut gb, &mut d_enh[wi[t]]));
                grads.restore(self.heads.sec_w, gw);
                grads.restore(self.heads.sec_b, gb);
            }
        }

        if backprop_encoder {
            for (k, f) in fwds.iter().enumerate() {
                self.encoder.backward(&self.store, f, &d_tok[k], Some(&d_enh[k]), grads);
            }
        }
        Ok(total)
    }

    pub fn predict(&self, words: &[String]) -> Result<Prediction> {
        self.predict_with(words, &mut ActualPositions)
    }

    /// Prediction with every position-table lookup drawn at random.
    pub fn predict_shuffled(&self, words: &[String], seed: u64) -> Result<Prediction> {
        if !self.pooling().uses_positions() {
            return Err(Error::Mode(format!(
                "position shuffling needs a positional pooling mode, model uses {}",
                self.pooling().as_str()
            )));
        }
        self.predict_with(words, &mut ShuffledPositions::new(seed))
    }

    pub fn predict_with(&self, words: &[String], sampler: &mut dyn PositionSampler) -> Result<Prediction> {
        if words.is_empty() {
            return Err(Error::Input("cannot tag an empty sentence".into()));
        }
        // one encoder pass per token so shuffled lookups differ per occurrence
        let fwds: Vec<WordForward> = words
            .iter()
            .map(|w| self.encoder.forward(&self.store, w, sampler))
            .collect::<Result<_>>()?;
        let wf: Vec<&WordForward> = fwds.iter().collect();
        let f = self.forward_sentence(words, &wf)?;
        let (label_ids, score) = self.chain(&f.emissions)?.viterbi();
        let (simplified, simplified_probs) = if self.config.flags.use_secondary {
            let labels = f
                .sec_probs
                .iter()
                .map(|p| {
                    let mut best = 0;
                    for k in 1..3 {
                        if p[k] > p[best] {
                            best = k;
                        }
                    }
                    Simplified::from_index(best)
                })
                .collect();
            (Some(labels), Some(f.sec_probs))
        } else {
            (None, None)
        };
        Ok(Prediction {
            labels: label_ids.iter().map(|&i| self.scheme.label(i).to_string()).collect(),
            label_ids,
            score,
            simplified,
            simplified_probs,
            traces: words.iter().zip(&fwds).map(|(w, f)| self.encoder.trace(w, f)).collect(),
        })
    }

    fn meta(&self) -> Result<String> {
        Ok(serde_json::to_string(&CheckpointMeta {
            config: self.config.clone(),
            task: self.scheme.task(),
            labels: self.scheme.labels().to_vec(),
            chars: self.vocab().chars().iter().collect(),
            static_tables: self
                .static_tables
                .iter()
                .map(|t| StaticMeta {
                    dim: t.dim(),
                    words: t.words().to_vec(),
                })
                .collect(),
        })?)
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let statics: Vec<(String, Tensor)> = self
            .static_tables
            .iter()
            .enumerate()
            .map(|(i, t)| Ok((format!("static.{i}"), Tensor::matrix(t.len(), t.dim(), t.values().to_vec())?)))
            .collect::<Result<_>>()?;
        let mut params: Vec<(&str, &Tensor)> = self.store.iter().map(|(_, p)| (p.name.as_str(), &p.tensor)).collect();
        params.extend(statics.iter().map(|(n, t)| (n.as_str(), t)));
        write_container(w, &self.meta()?, &params)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut v = Vec::new();
        self.write_to(&mut v)?;
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let (meta, tensors) = read_container(r)?;
        let meta: CheckpointMeta =
            serde_json::from_str(&meta).map_err(|e| Error::Load(format!("bad checkpoint metadata: {e}")))?;
        let scheme = LabelScheme::new(meta.task, meta.labels).map_err(|e| Error::Load(e.to_string()))?;
        let vocab = CharVocab::new(meta.chars.chars());
        let mut tensors: BTreeMap<String, Tensor> = tensors.into_iter().collect();
        let mut tables = Vec::new();
        for (i, sm) in meta.static_tables.into_iter().enumerate() {
            let t = tensors
                .remove(&format!("static.{i}"))
                .ok_or_else(|| Error::Load(format!("missing static table {i}")))?;
            tables.push(EmbeddingTable::from_rows(sm.dim, sm.words, t.into_values()).map_err(|e| Error::Load(e.to_string()))?);
        }
        let (config, tables) = Self::prepare(meta.config, &vocab, tables)?;
        let (specs, bounds) = Self::specs(&config, &tables, scheme.len());
        let mut store = ParamStore::new();
        let mut ids = Vec::with_capacity(specs.len());
        for s in &specs {
            let t = tensors
                .remove(&s.name)
                .ok_or_else(|| Error::Load(format!("checkpoint lacks parameter `{}`", s.name)))?;
            if t.shape() != s.shape.as_slice() {
                return Err(Error::Load(format!(
                    "parameter `{}` has shape {:?} in the checkpoint, expected {:?}",
                    s.name,
                    t.shape(),
                    s.shape
                )));
            }
            ids.push(store.add(s.name.clone(), t, s.group)?);
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Load(format!("unexpected parameter `{extra}` in checkpoint")));
        }
        Self::bind(config, scheme, vocab, tables, store, bounds, &ids)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }

    /// Copies every encoder parameter from `other`, which must share this
    /// model's encoder layout and character vocabulary.
    pub fn copy_encoder_from(&mut self, other: &TaggerModel) -> Result<()> {
        if other.vocab() != self.vocab() {
            return Err(Error::Load("pretrained encoder uses a different character vocabulary".into()));
        }
        let mut mismatches = Vec::new();
        let names: Vec<String> = self
            .store
            .iter()
            .filter(|(_, p)| Self::is_encoder_param(&p.name))
            .map(|(_, p)| p.name.clone())
            .collect();
        for name in &names {
            let id = self.store.id_of(name).unwrap();
            match other.store.by_name(name) {
                None => mismatches.push(format!("`{name}` missing from the pretrained model")),
                Some(p) if p.tensor.shape() != self.store.get(id).tensor.shape() => mismatches.push(format!(
                    "`{name}`: pretrained {:?} vs expected {:?}",
                    p.tensor.shape(),
                    self.store.get(id).tensor.shape()
                )),
                Some(_) => {}
            }
        }
        if !mismatches.is_empty() {
            return Err(Error::Load(format!("encoder mismatch: {}", mismatches.join("; "))));
        }
        for name in &names {
            let id = self.store.id_of(name).unwrap();
            let src = other.store.by_name(name).unwrap().tensor.values().to_vec();
            self.store.get_mut(id).tensor.values_mut().copy_from_slice(&src);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Sentence, Token};

    fn tiny_config(pooling: PoolingMode, flags: TaggerFlags) -> TaggerConfig {
        TaggerConfig {
            encoder: EncoderConfig {
                char_vocab_size: 0,
                char_emb_dim: 3,
                orders: vec![1, 2, 3],
                channels: vec![2, 2, 3],
                max_word_len: 8,
                attention_dim: 3,
                pooling,
                token_dim: 4,
                highway: true,
            },
            hidden: 3,
            flags,
        }
    }

    fn all_flags() -> TaggerFlags {
        TaggerFlags {
            concat_ngram_to_crf: true,
            use_secondary: true,
            use_static: false,
        }
    }

    fn sentence() -> Sentence {
        Sentence::new(vec![
            Token::new("kaming", "lang1"),
            Token::new("nehi", "lang2"),
            Token::new("!", "other"),
            Token::new("kaming", "lang1"),
        ])
    }

    fn model(pooling: PoolingMode, flags: TaggerFlags, seed: u64) -> TaggerModel {
        let vocab = CharVocab::from_words(["kaming", "nehi", "!"]);
        TaggerModel::new(tiny_config(pooling, flags), LabelScheme::lid(), vocab, vec![], seed).unwrap()
    }

    #[test]
    fn dims_follow_flags() {
        let m = model(PoolingMode::MaxPool, TaggerFlags::default(), 0);
        assert_eq!(m.crf_input_dim(), 6);
        let m = model(PoolingMode::PosHierAttn, all_flags(), 0);
        assert_eq!(m.crf_input_dim(), 6 + 7);
        let mut c = TaggerConfig::default();
        c.flags.concat_ngram_to_crf = true;
        assert_eq!(crf_dim(&c), 2 * 64 + 128);
    }

    #[test]
    fn static_tables_required_and_oov_is_zero() {
        let vocab = CharVocab::from_words(["ab"]);
        let flags = TaggerFlags { use_static: true, ..TaggerFlags::default() };
        let cfg = tiny_config(PoolingMode::Attn, flags);
        let r = TaggerModel::new(cfg.clone(), LabelScheme::lid(), vocab.clone(), vec![], 0);
        assert!(matches!(r, Err(Error::Config(_))));
        let table = EmbeddingTable::from_rows(2, vec!["ab".into()], vec![0.5, 0.25]).unwrap();
        let m = TaggerModel::new(cfg, LabelScheme::lid(), vocab, vec![table], 0).unwrap();
        assert_eq!(m.bilstm_input_dim(), 6);
        let v = m.bilstm_input("zz", &[1.0; 4]);
        assert_eq!(&v[4..], &[0.0, 0.0]);
        assert_eq!(&m.bilstm_input("ab", &[1.0; 4])[4..], &[0.5, 0.25]);
    }

    #[test]
    fn secondary_head_is_context_free_and_gated() {
        let m = model(PoolingMode::PosHierAttn, all_flags(), 1);
        let p = m.predict(&sentence().words()).unwrap();
        let probs = p.simplified_probs.unwrap();
        assert_eq!(probs[0], probs[3]);
        for q in &probs {
            assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let off = model(PoolingMode::PosHierAttn, TaggerFlags::default(), 1);
        assert!(matches!(off.secondary_logits(&Tensor::zeros(&[7])), Err(Error::Config(_))));
        assert!(off.predict(&sentence().words()).unwrap().simplified.is_none());
    }

    #[test]
    fn secondary_flag_does_not_change_primary_forward() {
        let on = model(PoolingMode::PosHierAttn, all_flags(), 4);
        let mut flags = all_flags();
        flags.use_secondary = false;
        let off = model(PoolingMode::PosHierAttn, flags, 4);
        let a = on.predict(&sentence().words()).unwrap();
        let b = off.predict(&sentence().words()).unwrap();
        assert_eq!((a.label_ids, a.score), (b.label_ids, b.score));
        let enc = on.encode_sentence(&sentence()).unwrap();
        let la = on.batch_loss(&[&enc]).unwrap();
        let lb = off.batch_loss(&[&enc]).unwrap();
        assert_eq!(la.nll_sum, lb.nll_sum);
    }

    #[test]
    fn predict_errors_and_determinism() {
        let m = model(PoolingMode::Attn, all_flags(), 2);
        assert!(matches!(m.predict(&[]), Err(Error::Input(_))));
        let one = m.predict(&["nehi".to_string()]).unwrap();
        assert_eq!(one.labels.len(), 1);
        let a = m.predict(&sentence().words()).unwrap();
        let b = m.predict(&sentence().words()).unwrap();
        assert_eq!((a.labels, a.score), (b.labels, b.score));
        assert!(matches!(m.predict_shuffled(&sentence().words(), 1), Err(Error::Mode(_))));
    }

    /// Finite differences of the whole multi-task loss wrt every parameter.
    fn full_model_grad_error(pooling: PoolingMode, seed: u64) -> f64 {
        let m = model(pooling, all_flags(), seed);
        let enc = m.encode_sentence(&sentence()).unwrap();
        let beta = 0.7;
        let mut grads = m.store().gradients();
        m.batch_gradients(&[&enc], beta, &mut grads).unwrap();
        let loss = |m: &TaggerModel| {
            let b = m.batch_loss(&[&enc]).unwrap();
            b.primary() + beta * b.secondary()
        };
        let mut worst: f64 = 0.0;
        let eps = 1e-5;
        for (id, p) in m.store().iter() {
            // stride keeps the check fast on the bigger matrices
            let stride = (p.tensor.len() / 7).max(1);
            for k in (0..p.tensor.len()).step_by(stride) {
                let mut plus = m.clone();
                plus.store_mut().get_mut(id).tensor.values_mut()[k] += eps;
                let mut minus = m.clone();
                minus.store_mut().get_mut(id).tensor.values_mut()[k] -= eps;
                let num = (loss(&plus) - loss(&minus)) / (2.0 * eps);
                let ana = grads.get(id)[k];
                worst = worst.max((num - ana).abs() / 1f64.max(num.abs()).max(ana.abs()));
            }
        }
        worst
    }

    #[test]
    fn model_gradients_match_finite_differences() {
        for mode in [PoolingMode::MaxPool, PoolingMode::Attn, PoolingMode::PosAttn, PoolingMode::PosHierAttn] {
            for seed in 0..2 {
                let e = full_model_grad_error(mode, seed);
                assert!(e < 1e-4, "{mode:?} seed {seed}: {e}");
            }
        }
    }

    #[test]
    fn frozen_encoder_gets_no_gradient() {
        let mut m = model(PoolingMode::PosHierAttn, all_flags(), 3);
        m.set_encoder_trainable(false);
        let enc = m.encode_sentence(&sentence()).unwrap();
        let mut grads = m.store().gradients();
        m.batch_gradients(&[&enc], 0.2, &mut grads).unwrap();
        for (id, p) in m.store().iter() {
            if TaggerModel::is_encoder_param(&p.name) {
                assert!(grads.get(id).iter().all(|&g| g == 0.0), "{}", p.name);
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let vocab = CharVocab::from_words(["kaming", "nehi", "!"]);
        let table = EmbeddingTable::from_rows(2, vec!["nehi".into()], vec![0.5, -1.0]).unwrap();
        let flags = TaggerFlags { use_static: true, ..all_flags() };
        let m = TaggerModel::new(tiny_config(PoolingMode::PosHierAttn, flags), LabelScheme::lid(), vocab, vec![table], 5).unwrap();
        let bytes = m.to_bytes().unwrap();
        let back = TaggerModel::read_from(&bytes[..]).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        let w = sentence().words();
        assert_eq!(m.predict(&w).unwrap().score, back.predict(&w).unwrap().score);
        assert_eq!(back.encoder_checksum(), m.encoder_checksum());
    }

    #[test]
    fn encoder_copy_checks_shapes() {
        let a = model(PoolingMode::PosHierAttn, all_flags(), 1);
        let mut b = model(PoolingMode::PosHierAttn, TaggerFlags::default(), 2);
        b.copy_encoder_from(&a).unwrap();
        assert_eq!(a.encoder_checksum(), b.encoder_checksum());
        let vocab = CharVocab::from_words(["kaming", "nehi", "!"]);
        let mut cfg = tiny_config(PoolingMode::PosHierAttn, all_flags());
        cfg.encoder.channels = vec![2, 2, 4];
        let mut c = TaggerModel::new(cfg, LabelScheme::lid(), vocab, vec![], 0).unwrap();
        let e = c.copy_encoder_from(&a).unwrap_err();
        assert!(matches!(e, Error::Load(_)));
        assert!(e.to_string().contains("encoder.conv.order3.kernel"), "{e}");
    }

    #[test]
    fn boundary_transitions_are_forbidden() {
        let m = model(PoolingMode::MaxPool, TaggerFlags::default(), 0);
        let t = m.store().by_name("crf.transitions").unwrap();
        let l = 8;
        assert_eq!(t.tensor.get(&[0, l]), super::super::crf::FORBIDDEN);
        assert_eq!(t.tensor.get(&[l + 1, 3]), super::super::crf::FORBIDDEN);
    }
}
