//! Encoder-decoder Transformer with post-norm residual sublayers, shared
//! source/target embeddings tied to the output projection, and the visual
//! fusion hooks of [`crate::fusion`].

mod batch;
mod config;
mod decoder;
mod layers;
mod loss;
mod train;

pub use batch::{make_batches, source_ids, Batch, Example};
pub use config::{Fusion, ModelConfig};
pub use decoder::{DecoderCache, EncoderOutput, IncrementalDecoder};
pub use layers::{
    attention, feed_forward, multi_head, positional_encoding, sublayer_wrap, AttentionParams, Dropout,
    FeedForwardParams, HeadKv, LayerNormParams, LAYER_NORM_EPS,
};
pub use loss::{label_smoothed_loss, token_accuracy};
pub use train::{accuracy, train, Freeze, TrainLogRecord, TrainOptions, TrainReport, Trainer};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::fusion::{self, FusionParams, GateInit, VisualFeature};
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::vocab::{Vocab, PAD_ID};

#[derive(Clone, Copy, Debug)]
struct EncoderLayer {
    self_attn: AttentionParams,
    norm1: LayerNormParams,
    ff: FeedForwardParams,
    norm2: LayerNormParams,
}

#[derive(Clone, Copy, Debug)]
struct DecoderLayer {
    self_attn: AttentionParams,
    norm1: LayerNormParams,
    ctx_attn: AttentionParams,
    norm2: LayerNormParams,
    ff: FeedForwardParams,
    norm3: LayerNormParams,
}

#[derive(Clone, Debug)]
struct ModelIds {
    embed: ParamId,
    out_bias: ParamId,
    encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
    fusion: FusionParams,
}

impl ModelIds {
    fn init(store: &mut ParamStore, cfg: &ModelConfig, vocab: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let d = cfg.d_model;
        let a = (3.0 / d as f64).sqrt();
        let emb: Vec<f64> = (0..vocab * d).map(|_| rng.gen_range(-a..a)).collect();
        let embed = store.add("embed", Tensor::new(vec![vocab, d], emb)?)?;
        let out_bias = store.add("out.bias", Tensor::zeros(&[vocab]))?;
        let mut encoder = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let p = format!("enc.{l}");
            encoder.push(EncoderLayer {
                self_attn: AttentionParams::init(store, &format!("{p}.self"), d, rng)?,
                norm1: LayerNormParams::init(store, &format!("{p}.ln1"), d)?,
                ff: FeedForwardParams::init(store, &format!("{p}.ff"), d, cfg.d_ff, rng)?,
                norm2: LayerNormParams::init(store, &format!("{p}.ln2"), d)?,
            });
        }
        let mut decoder = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let p = format!("dec.{l}");
            decoder.push(DecoderLayer {
                self_attn: AttentionParams::init(store, &format!("{p}.self"), d, rng)?,
                norm1: LayerNormParams::init(store, &format!("{p}.ln1"), d)?,
                ctx_attn: AttentionParams::init(store, &format!("{p}.ctx"), d, rng)?,
                norm2: LayerNormParams::init(store, &format!("{p}.ln2"), d)?,
                ff: FeedForwardParams::init(store, &format!("{p}.ff"), d, cfg.d_ff, rng)?,
                norm3: LayerNormParams::init(store, &format!("{p}.ln3"), d)?,
            });
        }
        let fusion = FusionParams::init(store, cfg, vocab, GateInit::Xavier, rng)?;
        Ok(ModelIds {
            embed,
            out_bias,
            encoder,
            decoder,
            fusion,
        })
    }

    fn resolve(store: &ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let mut encoder = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let p = format!("enc.{l}");
            encoder.push(EncoderLayer {
                self_attn: AttentionParams::resolve(store, &format!("{p}.self"))?,
                norm1: LayerNormParams::resolve(store, &format!("{p}.ln1"))?,
                ff: FeedForwardParams::resolve(store, &format!("{p}.ff"))?,
                norm2: LayerNormParams::resolve(store, &format!("{p}.ln2"))?,
            });
        }
        let mut decoder = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let p = format!("dec.{l}");
            decoder.push(DecoderLayer {
                self_attn: AttentionParams::resolve(store, &format!("{p}.self"))?,
                norm1: LayerNormParams::resolve(store, &format!("{p}.ln1"))?,
                ctx_attn: AttentionParams::resolve(store, &format!("{p}.ctx"))?,
                norm2: LayerNormParams::resolve(store, &format!("{p}.ln2"))?,
                ff: FeedForwardParams::resolve(store, &format!("{p}.ff"))?,
                norm3: LayerNormParams::resolve(store, &format!("{p}.ln3"))?,
            });
        }
        Ok(ModelIds {
            embed: store.require("embed")?,
            out_bias: store.require("out.bias")?,
            encoder,
            decoder,
            fusion: FusionParams::resolve(store, cfg.fusion)?,
        })
    }
}

/// Encoder states inside a graph.
#[derive(Clone, Debug)]
pub struct EncodedBatch {
    /// `[B, S, d_model]`
    pub states: Var,
    /// `[B * S]`, true where the position is padding.
    pub key_pad: Vec<bool>,
    pub batch: usize,
    pub len: usize,
}

/// Where the decoder's context attention gets its keys and values.
pub(crate) enum Context<'c, 'a> {
    States(&'c EncodedBatch),
    /// Per-layer head-split keys/values, precomputed once per sentence.
    Projected {
        kv: &'a [(Tensor, Tensor)],
        key_pad: &'c [bool],
    },
}

#[derive(Clone, Debug)]
pub struct Transformer {
    config: ModelConfig,
    vocab: Vocab,
    params: ParamStore,
    ids: ModelIds,
    pe: Tensor,
    mean_feature: Option<VisualFeature>,
}

impl Transformer {
    pub fn new(config: ModelConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let ids = ModelIds::init(&mut params, &config, vocab.len(), &mut rng)?;
        let pe = positional_encoding(config.max_len + 1, config.d_model)?;
        Ok(Transformer {
            config,
            vocab,
            params,
            ids,
            pe,
            mean_feature: None,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.config.validate()?;
        let mut params = ParamStore::new();
        for (name, t) in &ck.tensors {
            params.add(name.clone(), t.clone())?;
        }
        let ids = ModelIds::resolve(&params, &ck.config)?;
        let expected = [ck.vocab.len(), ck.config.d_model];
        if params.value(ids.embed).shape() != expected {
            return Err(Error::Checkpoint(format!(
                "embedding shape {:?} does not match vocabulary/config {expected:?}",
                params.value(ids.embed).shape()
            )));
        }
        let pe = positional_encoding(ck.config.max_len + 1, ck.config.d_model)?;
        Ok(Transformer {
            config: ck.config.clone(),
            vocab: ck.vocab.clone(),
            params,
            ids,
            pe,
            mean_feature: ck.mean_feature.clone(),
        })
    }

    pub fn to_checkpoint(&self, train_step: u64) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            tensors: self.params.iter().map(|(_, p)| (p.name.clone(), p.value.clone())).collect(),
            mean_feature: self.mean_feature.clone(),
            train_step,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn fusion_params(&self) -> &FusionParams {
        &self.ids.fusion
    }

    pub fn mean_feature(&self) -> Option<&VisualFeature> {
        self.mean_feature.as_ref()
    }

    pub fn set_mean_feature(&mut self, f: Option<VisualFeature>) {
        self.mean_feature = f;
    }

    /// Switches a trained model to `fusion`, adding freshly initialised
    /// fusion parameters with gate biases set to `gate_bias`. Existing
    /// parameters are kept as they are.
    pub fn attach_fusion(&mut self, fusion: Fusion, init: GateInit, gate_bias: f64, seed: u64) -> Result<()> {
        if self.config.fusion != Fusion::None {
            return Err(Error::Config(format!("model already uses fusion {:?}", self.config.fusion)));
        }
        let mut cfg = self.config.clone();
        cfg.fusion = fusion;
        cfg.gate_bias_init = gate_bias;
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.ids.fusion = FusionParams::init(&mut self.params, &cfg, self.vocab.len(), init, &mut rng)?;
        self.config = cfg;
        Ok(())
    }

    /// Freezes every parameter outside the fusion mechanisms.
    pub fn freeze_main_network(&mut self) {
        self.params.freeze_except(fusion::is_fusion_param);
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab.len()) {
            return Err(Error::Vocabulary(format!(
                "unknown token id {bad} (vocabulary has {} entries)",
                self.vocab.len()
            )));
        }
        Ok(())
    }

    fn pe_rows(&self, offset: usize, len: usize) -> Result<Tensor> {
        let d = self.config.d_model;
        if offset + len > self.pe.shape()[0] {
            return Err(Error::Decode(format!(
                "sequence of {} positions exceeds max_len {}",
                offset + len,
                self.config.max_len
            )));
        }
        Tensor::new(vec![len, d], self.pe.data()[offset * d..(offset + len) * d].to_vec())
    }

    /// `[B, visual_dim]` graph constant from per-sentence features, or
    /// `None` when the fusion mode does not use them.
    pub fn visual_input<'a>(&self, g: &mut Graph<'a>, visual: &[Option<&VisualFeature>]) -> Result<Option<Var>> {
        if !self.config.fusion.needs_visual() {
            return Ok(None);
        }
        let vd = self.config.visual_dim;
        let mut data = Vec::with_capacity(visual.len() * vd);
        for (i, f) in visual.iter().enumerate() {
            let f = f
                .or(self.mean_feature.as_ref())
                .ok_or_else(|| Error::Visual(format!("fusion {:?} needs a visual feature for sentence {i}", self.config.fusion)))?;
            if f.dim() != vd {
                return Err(Error::Visual(format!("feature width {} but model expects {vd}", f.dim())));
            }
            data.extend_from_slice(f.values());
        }
        Ok(Some(g.constant(Tensor::new(vec![visual.len(), vd], data)?)))
    }

    /// Runs the encoder over a padded `[batch, len]` id matrix.
    pub fn encode_graph<'a>(
        &'a self,
        g: &mut Graph<'a>,
        src: &[usize],
        batch: usize,
        len: usize,
        visual: Option<Var>,
        dropout: &mut Dropout,
    ) -> Result<EncodedBatch> {
        self.check_ids(src)?;
        if src.len() != batch * len {
            return Err(Error::shape("encode", &[batch, len], &[src.len()]));
        }
        let cfg = &self.config;
        let d = cfg.d_model;
        let needs = |v: Option<Var>| {
            v.ok_or_else(|| Error::Visual(format!("fusion {:?} requires visual features", cfg.fusion)))
        };
        let table = self.params.bind(g, self.ids.embed);
        let emb = g.embedding(table, src, &[batch, len])?;
        let mut x = g.scale(emb, (d as f64).sqrt());
        let mut key_pad: Vec<bool> = src.iter().map(|&t| t == PAD_ID).collect();
        let mut len = len;
        if let Some(p) = &self.ids.fusion.img_w {
            let word = fusion::img_w_pseudo_word(g, &self.params, p, needs(visual)?)?;
            let word = g.reshape(word, &[batch, 1, d])?;
            x = g.concat(&[word, x], 1)?;
            key_pad = key_pad
                .chunks(len)
                .flat_map(|row| std::iter::once(false).chain(row.iter().copied()))
                .collect();
            len += 1;
        }
        let pe = g.constant(self.pe_rows(0, len)?);
        x = g.add(x, pe)?;
        x = dropout.apply(g, x)?;

        let mask: Vec<bool> = (0..batch)
            .flat_map(|b| {
                let row = &key_pad[b * len..(b + 1) * len];
                (0..len).flat_map(move |_| row.iter().copied())
            })
            .collect();
        let h = cfg.n_heads;
        for layer in &self.ids.encoder {
            x = sublayer_wrap(g, &self.params, &layer.norm1, x, dropout, |g| {
                multi_head(g, &self.params, &layer.self_attn, x, x, Some(&mask), h)
            })?;
            x = sublayer_wrap(g, &self.params, &layer.norm2, x, dropout, |g| {
                feed_forward(g, &self.params, &layer.ff, x)
            })?;
        }
        if let Some(gate) = &self.ids.fusion.enc_gate {
            x = fusion::encoder_gate(g, &self.params, gate, x, needs(visual)?)?;
        }
        Ok(EncodedBatch {
            states: x,
            key_pad,
            batch,
            len,
        })
    }

    /// Context-attention keys and values of every decoder layer.
    pub(crate) fn context_kv<'a>(&'a self, g: &mut Graph<'a>, enc: &EncodedBatch, layer: usize) -> Result<HeadKv> {
        self.ids.decoder[layer]
            .ctx_attn
            .key_values(g, &self.params, enc.states, self.config.n_heads)
    }

    /// Decoder over target inputs `[batch, len]` occupying positions
    /// `offset..offset + len`. With a cache, earlier positions' self-attention
    /// keys/values are read from it and the new ones appended. Returns
    /// (possibly gated) logits `[batch, len, vocab]`.
    pub(crate) fn decode_graph<'a>(
        &'a self,
        g: &mut Graph<'a>,
        ctx: Context<'_, 'a>,
        tgt_in: &[usize],
        batch: usize,
        len: usize,
        offset: usize,
        mut cache: Option<&mut DecoderCache>,
        visual: Option<Var>,
        dropout: &mut Dropout,
    ) -> Result<Var> {
        self.check_ids(tgt_in)?;
        let cfg = &self.config;
        if offset + len > cfg.max_len {
            return Err(Error::Decode(format!(
                "target prefix of {} tokens exceeds max_len {}",
                offset + len,
                cfg.max_len
            )));
        }
        let (d, h) = (cfg.d_model, cfg.n_heads);
        let needs = |v: Option<Var>| {
            v.ok_or_else(|| Error::Visual(format!("fusion {:?} requires visual features", cfg.fusion)))
        };
        let table = self.params.bind(g, self.ids.embed);
        let emb = g.embedding(table, tgt_in, &[batch, len])?;
        let mut x = g.scale(emb, (d as f64).sqrt());
        if let Some(w) = self.ids.fusion.trg_mul {
            x = fusion::trg_mul_gate(g, &self.params, w, x, needs(visual)?)?;
        }
        let pe = g.constant(self.pe_rows(offset, len)?);
        x = g.add(x, pe)?;
        x = dropout.apply(g, x)?;

        let total = offset + len;
        let self_mask: Vec<bool> = (0..batch)
            .flat_map(|_| (0..len).flat_map(move |i| (0..total).map(move |j| j > offset + i)))
            .collect();
        let src_pad: &[bool] = match &ctx {
            Context::States(e) => &e.key_pad,
            Context::Projected { key_pad, .. } => key_pad,
        };
        if batch == 0 || src_pad.len() % batch != 0 {
            return Err(Error::shape("decode context", &[batch], &[src_pad.len()]));
        }
        let src_len = src_pad.len() / batch;
        let ctx_mask: Vec<bool> = (0..batch)
            .flat_map(|b| {
                let row = &src_pad[b * src_len..(b + 1) * src_len];
                (0..len).flat_map(move |_| row.iter().copied())
            })
            .collect();

        for (l, layer) in self.ids.decoder.iter().enumerate() {
            let mut kv = layer.self_attn.key_values(g, &self.params, x, h)?;
            if let Some(c) = cache.as_deref_mut() {
                if let Some((k_prev, v_prev)) = c.self_kv[l].take() {
                    let kp = g.constant(k_prev);
                    let vp = g.constant(v_prev);
                    kv = HeadKv {
                        k: g.concat(&[kp, kv.k], 2)?,
                        v: g.concat(&[vp, kv.v], 2)?,
                    };
                }
                c.self_kv[l] = Some((g.value(kv.k).clone(), g.value(kv.v).clone()));
            }
            x = sublayer_wrap(g, &self.params, &layer.norm1, x, dropout, |g| {
                layer.self_attn.attend(g, &self.params, x, kv, Some(&self_mask), h)
            })?;
            let ckv = match &ctx {
                Context::States(e) => self.context_kv(g, e, l)?,
                Context::Projected { kv, .. } => HeadKv {
                    k: g.constant_ref(&kv[l].0),
                    v: g.constant_ref(&kv[l].1),
                },
            };
            x = sublayer_wrap(g, &self.params, &layer.norm2, x, dropout, |g| {
                layer.ctx_attn.attend(g, &self.params, x, ckv, Some(&ctx_mask), h)
            })?;
            x = sublayer_wrap(g, &self.params, &layer.norm3, x, dropout, |g| {
                feed_forward(g, &self.params, &layer.ff, x)
            })?;
        }
        if let Some(c) = cache {
            c.len = total;
        }

        let table = self.params.bind(g, self.ids.embed);
        let proj = g.transpose(table)?;
        let logits = g.matmul(x, proj)?;
        let bias = self.params.bind(g, self.ids.out_bias);
        let mut logits = g.add(logits, bias)?;
        if let Some(gate) = &self.ids.fusion.dec_gate {
            logits = fusion::decoder_gate(g, &self.params, gate, x, needs(visual)?, logits)?;
        }
        Ok(logits)
    }

    /// Teacher-forced logits for a padded batch.
    pub fn forward_batch<'a>(&'a self, g: &mut Graph<'a>, batch: &Batch, dropout: &mut Dropout) -> Result<Var> {
        let feats: Vec<Option<&VisualFeature>> = batch.visual.iter().map(Option::as_ref).collect();
        let visual = self.visual_input(g, &feats)?;
        let enc = self.encode_graph(g, &batch.src, batch.size, batch.src_len, visual, dropout)?;
        self.decode_graph(
            g,
            Context::States(&enc),
            &batch.tgt_in,
            batch.size,
            batch.tgt_len,
            0,
            None,
            visual,
            dropout,
        )
    }

    /// Label-smoothed loss of a batch, averaged over non-pad target tokens.
    pub fn batch_loss<'a>(&'a self, g: &mut Graph<'a>, batch: &Batch, dropout: &mut Dropout) -> Result<Var> {
        let logits = self.forward_batch(g, batch, dropout)?;
        label_smoothed_loss(g, logits, &batch.tgt_out, self.config.label_smoothing, Some(PAD_ID))
    }
}
