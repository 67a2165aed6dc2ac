use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::highway::{highway, highway_backward, HighwayForward, HighwayGrads};
use super::attention::{
    attend, attend_backward, hier_attend, hier_attend_backward, max_pool, max_pool_backward,
    AttnForward, AttnGrads, AttnParams, HierForward, HierGrads, HierParams, Positions,
};
use super::trace::{AttentionTrace, NgramWeight, OrderTrace};
use super::vocab::{normalize, CharVocab, PAD};
use super::{EncoderConfig, PoolingMode};
use crate::error::{Error, Result};
use crate::numerics::{
    add_assign, conv1d_valid_backward_slice, conv1d_valid_slice, matvec_add, matvec_t_add,
    outer_add, Gradients, Init, ParamGroup, ParamId, ParamSpec, ParamStore, Tensor,
};

/// Chooses which position-table row each n-gram reads.
pub trait PositionSampler {
    fn row(&mut self, order_index: usize, ngram: usize, table_rows: usize) -> usize;
}

/// The n-gram at offset `i` reads row `i`.
pub struct ActualPositions;

impl PositionSampler for ActualPositions {
    #[inline]
    fn row(&mut self, _: usize, ngram: usize, _: usize) -> usize {
        ngram
    }
}

/// Every lookup draws a uniformly random row of the table.
pub struct ShuffledPositions {
    rng: ChaCha8Rng,
}

impl ShuffledPositions {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl PositionSampler for ShuffledPositions {
    fn row(&mut self, _: usize, _: usize, table_rows: usize) -> usize {
        self.rng.gen_range(0..table_rows)
    }
}

#[derive(Clone, Debug)]
struct OrderIds {
    kernel: ParamId,
    bias: ParamId,
    w: ParamId,
    b: ParamId,
    v: ParamId,
    pos: ParamId,
    hier_w: ParamId,
}

#[derive(Clone, Debug)]
struct Ids {
    char_emb: ParamId,
    orders: Vec<OrderIds>,
    hier_b: ParamId,
    hier_v: ParamId,
    proj_w: ParamId,
    proj_b: ParamId,
    /// `(W_h, b_h, W_g, b_g)`
    highway: Option<[ParamId; 4]>,
}

/// Character n-gram word encoder: char embeddings, one convolution per
/// n-gram order, per-order pooling, optional attention across orders, a
/// linear projection and an optional highway layer.
///
/// Every attention, position and hierarchy parameter exists regardless of
/// the pooling mode, so a model can be switched between modes without
/// changing its parameter layout.
#[derive(Clone, Debug)]
pub struct CharNgramEncoder {
    config: EncoderConfig,
    vocab: CharVocab,
    ids: Ids,
}

#[derive(Clone, Debug)]
pub enum Pooled {
    Max { z: Vec<f64>, argmax: Vec<usize> },
    Attn { fwd: AttnForward, rows: Option<Vec<usize>> },
}

impl Pooled {
    pub fn z(&self) -> &[f64] {
        match self {
            Pooled::Max { z, .. } => z,
            Pooled::Attn { fwd, .. } => &fwd.z,
        }
    }

    pub fn alphas(&self) -> Option<&[f64]> {
        match self {
            Pooled::Max { .. } => None,
            Pooled::Attn { fwd, .. } => Some(&fwd.alphas),
        }
    }
}

#[derive(Clone, Debug)]
pub struct OrderForward {
    /// Convolution output, `m × c_j`.
    pub x: Vec<f64>,
    pub pooled: Pooled,
}

/// Forward activations for one word, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct WordForward {
    pub chars: Vec<Option<char>>,
    pub ids: Vec<usize>,
    emb: Vec<f64>,
    pub orders: Vec<OrderForward>,
    pub hier: Option<HierForward>,
    pub enhanced: Vec<f64>,
    proj: Vec<f64>,
    highway: Option<HighwayForward>,
    pub token_vec: Vec<f64>,
}

impl CharNgramEncoder {
    pub fn param_specs(config: &EncoderConfig) -> Vec<ParamSpec> {
        use ParamGroup::*;
        let (d, a, t) = (config.char_emb_dim, config.attention_dim, config.token_dim);
        let mut specs = vec![ParamSpec::new(
            "encoder.char_emb",
            &[config.char_vocab_size, d],
            CharEmbeddings,
            Init::Uniform(1.0),
        )];
        for (&j, &c) in config.orders.iter().zip(&config.channels) {
            let p = format!("encoder.conv.order{j}");
            specs.push(ParamSpec::new(format!("{p}.kernel"), &[j, d, c], Convolutions, Init::Xavier(j * d, c)));
            specs.push(ParamSpec::new(format!("{p}.bias"), &[c], Convolutions, Init::Zeros));
        }
        for (&j, &c) in config.orders.iter().zip(&config.channels) {
            let p = format!("encoder.attn.order{j}");
            specs.push(ParamSpec::new(format!("{p}.Wx"), &[a, c], NonCore, Init::Xavier(c, a)));
            specs.push(ParamSpec::new(format!("{p}.bx"), &[a], NonCore, Init::Zeros));
            specs.push(ParamSpec::new(format!("{p}.v"), &[a], NonCore, Init::Xavier(a, 1)));
            specs.push(ParamSpec::new(
                format!("{p}.pos"),
                &[config.position_rows(j), c],
                NonCore,
                Init::Uniform(0.05),
            ));
        }
        for (&j, &c) in config.orders.iter().zip(&config.channels) {
            specs.push(ParamSpec::new(
                format!("encoder.hier.order{j}.Wh"),
                &[a, c],
                NonCore,
                Init::Xavier(c, a),
            ));
        }
        specs.push(ParamSpec::new("encoder.hier.bh", &[a], NonCore, Init::Zeros));
        specs.push(ParamSpec::new("encoder.hier.vh", &[a], NonCore, Init::Xavier(a, 1)));
        let e = config.enhanced_dim();
        specs.push(ParamSpec::new("encoder.proj.W", &[t, e], Projection, Init::Xavier(e, t)));
        specs.push(ParamSpec::new("encoder.proj.b", &[t], Projection, Init::Zeros));
        if config.highway {
            specs.push(ParamSpec::new("encoder.highway.Wh", &[t, t], Highway, Init::Xavier(t, t)));
            specs.push(ParamSpec::new("encoder.highway.bh", &[t], Highway, Init::Zeros));
            specs.push(ParamSpec::new("encoder.highway.Wg", &[t, t], Highway, Init::Xavier(t, t)));
            specs.push(ParamSpec::new("encoder.highway.bg", &[t], Highway, Init::Const(-1.0)));
        }
        specs
    }

    /// Registers freshly initialized encoder parameters in `store`.
    pub fn new<R: Rng>(config: EncoderConfig, vocab: CharVocab, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        Self::check(&config, &vocab)?;
        let ids = store.register(&Self::param_specs(&config), rng)?;
        Ok(Self::from_ids(config, vocab, &ids))
    }

    /// Binds to encoder parameters already present in `store`.
    pub fn attach(config: EncoderConfig, vocab: CharVocab, store: &ParamStore) -> Result<Self> {
        Self::check(&config, &vocab)?;
        let ids = store.resolve(&Self::param_specs(&config))?;
        Ok(Self::from_ids(config, vocab, &ids))
    }

    fn check(config: &EncoderConfig, vocab: &CharVocab) -> Result<()> {
        config.validate()?;
        if vocab.size() != config.char_vocab_size {
            return Err(Error::Config(format!(
                "character vocabulary has {} rows but config declares {}",
                vocab.size(),
                config.char_vocab_size
            )));
        }
        Ok(())
    }

    fn from_ids(config: EncoderConfig, vocab: CharVocab, ids: &[ParamId]) -> Self {
        let n = config.orders.len();
        let mut it = ids.iter().copied();
        let mut next = || it.next().unwrap();
        let char_emb = next();
        let conv: Vec<(ParamId, ParamId)> = (0..n).map(|_| (next(), next())).collect();
        let attn: Vec<[ParamId; 4]> = (0..n).map(|_| [next(), next(), next(), next()]).collect();
        let hier_w: Vec<ParamId> = (0..n).map(|_| next()).collect();
        let hier_b = next();
        let hier_v = next();
        let proj_w = next();
        let proj_b = next();
        let highway = config.highway.then(|| [next(), next(), next(), next()]);
        let orders = (0..n)
            .map(|k| OrderIds {
                kernel: conv[k].0,
                bias: conv[k].1,
                w: attn[k][0],
                b: attn[k][1],
                v: attn[k][2],
                pos: attn[k][3],
                hier_w: hier_w[k],
            })
            .collect();
        Self {
            config,
            vocab,
            ids: Ids {
                char_emb,
                orders,
                hier_b,
                hier_v,
                proj_w,
                proj_b,
                highway,
            },
        }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn vocab(&self) -> &CharVocab {
        &self.vocab
    }

    /// Switches the pooling mode; the parameter layout is shared by all modes.
    pub fn set_pooling(&mut self, mode: PoolingMode) {
        self.config.pooling = mode;
    }

    /// Name of the position table parameter for the order at `order_index`.
    pub fn position_table_name(&self, order_index: usize) -> String {
        format!("encoder.attn.order{}.pos", self.config.orders[order_index])
    }

    /// Characters after NFC normalization, truncation to `k` and right
    /// padding (as `None`) up to the largest n-gram order.
    pub fn prepare_chars(&self, word: &str) -> Result<Vec<Option<char>>> {
        let norm = normalize(word);
        let mut chars: Vec<Option<char>> = norm.chars().take(self.config.max_word_len).map(Some).collect();
        if chars.is_empty() {
            return Err(Error::Input("cannot encode an empty word".into()));
        }
        while chars.len() < self.config.max_order() {
            chars.push(None);
        }
        Ok(chars)
    }

    pub fn char_ids(&self, word: &str) -> Result<Vec<usize>> {
        Ok(self
            .prepare_chars(word)?
            .into_iter()
            .map(|c| c.map_or(PAD, |c| self.vocab.id(c)))
            .collect())
    }

    /// Character embedding matrix of the prepared word, `l × d`.
    pub fn embed_chars(&self, store: &ParamStore, word: &str) -> Result<Tensor> {
        let ids = self.char_ids(word)?;
        let d = self.config.char_emb_dim;
        let table = store.value(self.ids.char_emb);
        let mut v = Vec::with_capacity(ids.len() * d);
        for &i in &ids {
            v.extend_from_slice(&table[i * d..(i + 1) * d]);
        }
        Tensor::matrix(ids.len(), d, v)
    }

    pub fn forward(&self, store: &ParamStore, word: &str, sampler: &mut dyn PositionSampler) -> Result<WordForward> {
        let cfg = &self.config;
        let d = cfg.char_emb_dim;
        let chars = self.prepare_chars(word)?;
        let ids: Vec<usize> = chars.iter().map(|c| c.map_or(PAD, |c| self.vocab.id(c))).collect();
        let l = ids.len();
        let table = store.value(self.ids.char_emb);
        let mut emb = Vec::with_capacity(l * d);
        for &i in &ids {
            emb.extend_from_slice(&table[i * d..(i + 1) * d]);
        }

        let mut orders = Vec::with_capacity(cfg.orders.len());
        for (k, (&j, &c)) in cfg.orders.iter().zip(&cfg.channels).enumerate() {
            let oid = &self.ids.orders[k];
            let m = l + 1 - j;
            let mut x = vec![0.0; m * c];
            conv1d_valid_slice(&emb, d, store.value(oid.kernel), j, store.value(oid.bias), &mut x);
            let pooled = if cfg.pooling.is_attention() {
                let params = AttnParams {
                    w: store.value(oid.w),
                    b: store.value(oid.b),
                    v: store.value(oid.v),
                };
                if cfg.pooling.uses_positions() {
                    let rows_avail = cfg.position_rows(j);
                    let rows: Vec<usize> = (0..m).map(|i| sampler.row(k, i, rows_avail)).collect();
                    if rows.iter().any(|&r| r >= rows_avail) {
                        return Err(Error::dim(
                            "position_aware_attention",
                            format!("position row out of range for order {j} ({rows_avail} rows)"),
                        ));
                    }
                    let fwd = attend(
                        &x,
                        c,
                        Some(Positions {
                            table: store.value(oid.pos),
                            rows: &rows,
                        }),
                        params,
                    );
                    Pooled::Attn { fwd, rows: Some(rows) }
                } else {
                    Pooled::Attn {
                        fwd: attend(&x, c, None, params),
                        rows: None,
                    }
                }
            } else {
                let (z, argmax) = max_pool(&x, c);
                Pooled::Max { z, argmax }
            };
            orders.push(OrderForward { x, pooled });
        }

        let (hier, enhanced) = if cfg.pooling.is_hierarchical() {
            let zs: Vec<&[f64]> = orders.iter().map(|o| o.pooled.z()).collect();
            let h = hier_attend(&zs, &self.hier_params(store));
            let out = h.out.clone();
            (Some(h), out)
        } else {
            (None, orders.iter().flat_map(|o| o.pooled.z().iter().copied()).collect())
        };

        let e = enhanced.len();
        let mut proj = store.value(self.ids.proj_b).to_vec();
        matvec_add(store.value(self.ids.proj_w), e, &enhanced, &mut proj);

        let (highway, token_vec) = match self.ids.highway {
            Some([wh, bh, wg, bg]) => {
                let hw = highway(&proj, store.value(wh), store.value(bh), store.value(wg), store.value(bg));
                let out = hw.out.clone();
                (Some(hw), out)
            }
            None => (None, proj.clone()),
        };

        Ok(WordForward {
            chars,
            ids,
            emb,
            orders,
            hier,
            enhanced,
            proj,
            highway,
            token_vec,
        })
    }

    fn hier_params<'a>(&self, store: &'a ParamStore) -> HierParams<'a> {
        HierParams {
            w: self.ids.orders.iter().map(|o| store.value(o.hier_w)).collect(),
            b: store.value(self.ids.hier_b),
            v: store.value(self.ids.hier_v),
        }
    }

    /// Accumulates parameter gradients given upstream gradients wrt the
    /// token vector and the enhanced representation.
    pub fn backward(
        &self,
        store: &ParamStore,
        fwd: &WordForward,
        d_token: &[f64],
        d_enhanced: Option<&[f64]>,
        grads: &mut Gradients,
    ) {
        let cfg = &self.config;
        let t = cfg.token_dim;
        let e = fwd.enhanced.len();

        let mut d_proj = vec![0.0; t];
        match (self.ids.highway, &fwd.highway) {
            (Some([wh, bh, wg, bg]), Some(hw)) => {
                let (mut gwh, mut gbh, mut gwg, mut gbg) =
                    (grads.take(wh), grads.take(bh), grads.take(wg), grads.take(bg));
                highway_backward(
                    &fwd.proj,
                    hw,
                    store.value(wh),
                    store.value(wg),
                    d_token,
                    HighwayGrads {
                        x: &mut d_proj,
                        wh: &mut gwh,
                        bh: &mut gbh,
                        wg: &mut gwg,
                        bg: &mut gbg,
                    },
                );
                grads.restore(wh, gwh);
                grads.restore(bh, gbh);
                grads.restore(wg, gwg);
                grads.restore(bg, gbg);
            }
            _ => d_proj.copy_from_slice(d_token),
        }

        outer_add(grads.buf(self.ids.proj_w), e, &d_proj, &fwd.enhanced);
        add_assign(grads.buf(self.ids.proj_b), &d_proj);
        let mut d_enh = d_enhanced.map_or_else(|| vec![0.0; e], <[f64]>::to_vec);
        matvec_t_add(store.value(self.ids.proj_w), e, &d_proj, &mut d_enh);

        // per-order gradients wrt the pooled vectors
        let mut dz: Vec<Vec<f64>> = cfg.channels.iter().map(|&c| vec![0.0; c]).collect();
        if let Some(h) = &fwd.hier {
            let zs: Vec<&[f64]> = fwd.orders.iter().map(|o| o.pooled.z()).collect();
            let params = self.hier_params(store);
            let mut gw: Vec<Vec<f64>> = self.ids.orders.iter().map(|o| grads.take(o.hier_w)).collect();
            let mut gb = grads.take(self.ids.hier_b);
            let mut gv = grads.take(self.ids.hier_v);
            hier_attend_backward(
                &zs,
                &params,
                h,
                &d_enh,
                HierGrads {
                    z: dz.iter_mut().map(Vec::as_mut_slice).collect(),
                    w: gw.iter_mut().map(Vec::as_mut_slice).collect(),
                    b: &mut gb,
                    v: &mut gv,
                },
            );
            for (o, g) in self.ids.orders.iter().zip(gw) {
                grads.restore(o.hier_w, g);
            }
            grads.restore(self.ids.hier_b, gb);
            grads.restore(self.ids.hier_v, gv);
        } else {
            let mut off = 0;
            for z in dz.iter_mut() {
                let n = z.len();
                z.copy_from_slice(&d_enh[off..off + n]);
                off += n;
            }
        }

        let d = cfg.char_emb_dim;
        let mut d_emb = vec![0.0; fwd.emb.len()];
        for (k, (&j, &c)) in cfg.orders.iter().zip(&cfg.channels).enumerate() {
            let oid = &self.ids.orders[k];
            let of = &fwd.orders[k];
            let mut dx = vec![0.0; of.x.len()];
            match &of.pooled {
                Pooled::Max { argmax, .. } => max_pool_backward(argmax, c, &dz[k], &mut dx),
                Pooled::Attn { fwd: af, rows } => {
                    let params = AttnParams {
                        w: store.value(oid.w),
                        b: store.value(oid.b),
                        v: store.value(oid.v),
                    };
                    let mut gw = grads.take(oid.w);
                    let mut gb = grads.take(oid.b);
                    let mut gv = grads.take(oid.v);
                    let mut gpos = rows.as_ref().map(|_| grads.take(oid.pos));
                    attend_backward(
                        &of.x,
                        c,
                        af,
                        rows.as_deref(),
                        params,
                        &dz[k],
                        AttnGrads {
                            x: &mut dx,
                            w: &mut gw,
                            b: &mut gb,
                            v: &mut gv,
                            table: gpos.as_deref_mut(),
                        },
                    );
                    grads.restore(oid.w, gw);
                    grads.restore(oid.b, gb);
                    grads.restore(oid.v, gv);
                    if let Some(g) = gpos {
                        grads.restore(oid.pos, g);
                    }
                }
            }
            let mut gk = grads.take(oid.kernel);
            let mut gbias = grads.take(oid.bias);
            conv1d_valid_backward_slice(
                &fwd.emb,
                d,
                store.value(oid.kernel),
                j,
                c,
                &dx,
                Some(&mut d_emb),
                &mut gk,
                &mut gbias,
            );
            grads.restore(oid.kernel, gk);
            grads.restore(oid.bias, gbias);
        }

        let g_emb = grads.buf(self.ids.char_emb);
        for (r, &id) in fwd.ids.iter().enumerate() {
            add_assign(&mut g_emb[id * d..(id + 1) * d], &d_emb[r * d..(r + 1) * d]);
        }
    }

    /// Attention weights of an encoded word; `None` in max-pool mode.
    pub fn trace(&self, word: &str, fwd: &WordForward) -> Option<AttentionTrace> {
        if !self.config.pooling.is_attention() {
            return None;
        }
        let orders = self
            .config
            .orders
            .iter()
            .zip(&fwd.orders)
            .map(|(&j, of)| OrderTrace {
                order: j,
                ngrams: of
                    .pooled
                    .alphas()
                    .unwrap_or(&[])
                    .iter()
                    .enumerate()
                    .map(|(i, &alpha)| NgramWeight {
                        text: fwd.chars[i..i + j].iter().flatten().collect(),
                        pos: i,
                        alpha,
                    })
                    .collect(),
            })
            .collect();
        Some(AttentionTrace {
            word: word.to_string(),
            orders,
            hier: fwd.hier.as_ref().map(|h| h.betas.clone()).unwrap_or_default(),
        })
    }

    /// Encodes one word with actual positions: `(token_vec, enhanced_rep, trace)`.
    pub fn encode_word(&self, store: &ParamStore, word: &str) -> Result<(Tensor, Tensor, Option<AttentionTrace>)> {
        let fwd = self.forward(store, word, &mut ActualPositions)?;
        let trace = self.trace(word, &fwd);
        Ok((Tensor::vector(fwd.token_vec)?, Tensor::vector(fwd.enhanced)?, trace))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{dot, grad_check, FnOp};

    fn small_config(vocab: &CharVocab, pooling: PoolingMode) -> EncoderConfig {
        EncoderConfig {
            char_vocab_size: vocab.size(),
            char_emb_dim: 3,
            orders: vec![1, 2, 3],
            channels: vec![2, 3, 4],
            max_word_len: 8,
            attention_dim: 3,
            pooling,
            token_dim: 5,
            highway: true,
        }
    }

    fn build(pooling: PoolingMode, seed: u64) -> (CharNgramEncoder, ParamStore) {
        let vocab = CharVocab::from_words(["kaam", "walking", "ab"]);
        let cfg = small_config(&vocab, pooling);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc = CharNgramEncoder::new(cfg, vocab, &mut store, &mut rng).unwrap();
        // give the zero-initialised biases some mass so the check is not degenerate
        for p in store.iter_mut() {
            if p.name.ends_with(".bias") || p.name.ends_with(".bx") || p.name.ends_with(".bh") {
                p.tensor.values_mut().iter_mut().enumerate().for_each(|(i, v)| *v = 0.1 * (i as f64 - 1.0));
            }
        }
        (enc, store)
    }

    #[test]
    fn padding_and_truncation() {
        let (enc, store) = build(PoolingMode::PosHierAttn, 0);
        let ids = enc.char_ids("ab").unwrap();
        assert_eq!(ids.len(), 3);
        assert_eq!(ids[2], PAD);
        let long: String = "a".repeat(60);
        assert_eq!(enc.char_ids(&long).unwrap().len(), 8);
        assert!(matches!(enc.char_ids(""), Err(Error::Input(_))));
        let e = enc.embed_chars(&store, "zz?").unwrap();
        assert_eq!(e.shape(), &[3, 3]);
        let table = store.by_name("encoder.char_emb").unwrap().tensor.clone();
        assert_eq!(e.row(0), table.row(super::super::vocab::UNK));
    }

    #[test]
    fn embed_chars_is_a_table_lookup() {
        let (enc, store) = build(PoolingMode::PosHierAttn, 1);
        let e = enc.embed_chars(&store, "kaam").unwrap();
        assert_eq!(e.shape(), &[4, 3]);
        let table = &store.by_name("encoder.char_emb").unwrap().tensor;
        for (r, ch) in "kaam".chars().enumerate() {
            assert_eq!(e.row(r), table.row(enc.vocab().id(ch)));
        }
    }

    #[test]
    fn shapes_and_determinism() {
        for mode in [PoolingMode::MaxPool, PoolingMode::Attn, PoolingMode::PosAttn, PoolingMode::PosHierAttn] {
            let (enc, store) = build(mode, 2);
            let (tv, enh, trace) = enc.encode_word(&store, "walking").unwrap();
            assert_eq!(tv.len(), 5);
            assert_eq!(enh.len(), 9);
            assert_eq!(trace.is_some(), mode.is_attention());
            let (tv2, enh2, _) = enc.encode_word(&store, "walking").unwrap();
            assert_eq!(tv, tv2);
            assert_eq!(enh, enh2);
        }
    }

    #[test]
    fn trace_texts_and_simplex() {
        let (enc, store) = build(PoolingMode::PosHierAttn, 3);
        let (_, _, trace) = enc.encode_word(&store, "ab").unwrap();
        let trace = trace.unwrap();
        assert!(trace.is_simplex(1e-9));
        assert_eq!(trace.hier.len(), 3);
        let tri = &trace.orders[2];
        assert_eq!(tri.order, 3);
        assert_eq!(tri.ngrams.len(), 1);
        assert_eq!(tri.ngrams[0].text, "ab");
        let bi: Vec<&str> = trace.orders[1].ngrams.iter().map(|n| n.text.as_str()).collect();
        assert_eq!(bi, ["ab", "b"]);
    }

    #[test]
    fn zero_positions_match_plain_attention() {
        let (mut enc, mut store) = build(PoolingMode::PosAttn, 4);
        for k in 0..3 {
            let id = store.id_of(&enc.position_table_name(k)).unwrap();
            store.get_mut(id).tensor.values_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let (a, ea, _) = enc.encode_word(&store, "walking").unwrap();
        enc.set_pooling(PoolingMode::Attn);
        let (b, eb, _) = enc.encode_word(&store, "walking").unwrap();
        assert_eq!(a, b);
        assert_eq!(ea, eb);
    }

    #[test]
    fn total_over_unicode_words() {
        let (enc, store) = build(PoolingMode::PosHierAttn, 5);
        for w in ["ñandú", "日本語", "a", "🙂🙂🙂🙂🙂🙂🙂🙂🙂🙂🙂", "e\u{301}"] {
            let (tv, enh, _) = enc.encode_word(&store, w).unwrap();
            assert!(tv.is_finite() && enh.is_finite(), "{w}");
        }
    }

    /// Grad-checks the encoder wrt every parameter through a random linear
    /// read-out of both outputs.
    pub(crate) fn encoder_grad_error(mode: PoolingMode, seed: u64, word: &str) -> f64 {
        let (enc, store) = build(mode, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let wt = Tensor::uniform(&[5], 1.0, &mut rng);
        let we = Tensor::uniform(&[9], 1.0, &mut rng);
        let names: Vec<String> = store.iter().map(|(_, p)| p.name.clone()).collect();
        let inputs: Vec<Tensor> = store.iter().map(|(_, p)| p.tensor.clone()).collect();
        let with = |xs: &[Tensor]| {
            let mut s = store.clone();
            for (p, x) in s.iter_mut().zip(xs) {
                p.tensor = x.clone();
            }
            s
        };
        let op = FnOp::new(
            "encode_word",
            |xs| {
                let s = with(xs);
                let f = enc.forward(&s, word, &mut ActualPositions)?;
                Tensor::vector(vec![dot(&f.token_vec, wt.values()) + dot(&f.enhanced, we.values())])
            },
            |xs, g| {
                let s = with(xs);
                let f = enc.forward(&s, word, &mut ActualPositions)?;
                let mut grads = s.gradients();
                let dt: Vec<f64> = wt.values().iter().map(|v| v * g.values()[0]).collect();
                let de: Vec<f64> = we.values().iter().map(|v| v * g.values()[0]).collect();
                enc.backward(&s, &f, &dt, Some(&de), &mut grads);
                names
                    .iter()
                    .map(|n| {
                        let id = s.id_of(n).unwrap();
                        Tensor::new(s.get(id).tensor.shape(), grads.get(id).to_vec())
                    })
                    .collect()
            },
        );
        grad_check(&op, &inputs, 1e-5).unwrap()
    }

    #[test]
    fn encoder_gradients_all_modes() {
        for mode in [PoolingMode::MaxPool, PoolingMode::Attn, PoolingMode::PosAttn, PoolingMode::PosHierAttn] {
            for seed in 0..3 {
                let err = encoder_grad_error(mode, seed, "kaamab");
                assert!(err < 1e-4, "{mode} seed {seed}: {err}");
            }
        }
    }

    #[test]
    fn shuffled_positions_are_seeded() {
        let (enc, store) = build(PoolingMode::PosHierAttn, 6);
        let a = enc.forward(&store, "walking", &mut ShuffledPositions::new(3)).unwrap();
        let b = enc.forward(&store, "walking", &mut ShuffledPositions::new(3)).unwrap();
        assert_eq!(a.token_vec, b.token_vec);
        let c = enc.forward(&store, "walking", &mut ActualPositions).unwrap();
        assert_ne!(a.token_vec, c.token_vec);
    }
}
