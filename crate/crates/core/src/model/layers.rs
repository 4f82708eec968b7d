use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fusion::xavier;
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// `PE[pos, 2i] = sin(pos / 10000^(2i/d))`, `PE[pos, 2i+1] = cos(...)`.
pub fn positional_encoding(len: usize, d_model: usize) -> Result<Tensor> {
    if len == 0 || d_model == 0 || d_model % 2 != 0 {
        return Err(Error::invalid(
            "positional_encoding",
            format!("need len > 0 and positive even d_model, got len {len}, d_model {d_model}"),
        ));
    }
    let mut data = vec![0.0; len * d_model];
    for pos in 0..len {
        for i in 0..d_model / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            data[pos * d_model + 2 * i] = angle.sin();
            data[pos * d_model + 2 * i + 1] = angle.cos();
        }
    }
    Tensor::new(vec![len, d_model], data)
}

/// Source of dropout keep-masks. Evaluation mode never drops.
pub struct Dropout {
    p: f64,
    rng: Option<ChaCha8Rng>,
}

impl Dropout {
    pub fn eval() -> Self {
        Dropout { p: 0.0, rng: None }
    }

    pub fn train(p: f64, seed: u64) -> Self {
        Dropout {
            p,
            rng: Some(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn apply(&mut self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let Some(rng) = self.rng.as_mut().filter(|_| self.p > 0.0) else {
            return Ok(x);
        };
        let p = self.p;
        let keep: Vec<bool> = (0..g.value(x).numel()).map(|_| rng.gen::<f64>() >= p).collect();
        g.dropout(x, &keep, p)
    }
}

/// `softmax(Q·Kᵀ / √d_k)·V` over the last two axes. `mask` marks blocked
/// (query, key) positions and must match the score shape.
pub fn attention(g: &mut Graph<'_>, q: Var, k: Var, v: Var, mask: Option<&[bool]>) -> Result<Var> {
    let dk = *g.shape(q).last().unwrap_or(&1);
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scores = g.scale(scores, 1.0 / (dk as f64).sqrt());
    let scores = match mask {
        Some(m) => g.masked_fill(scores, m, f64::NEG_INFINITY)?,
        None => scores,
    };
    let weights = g.softmax(scores);
    g.matmul(weights, v)
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNormParams {
    pub(crate) fn init(store: &mut ParamStore, prefix: &str, d: usize) -> Result<Self> {
        Ok(LayerNormParams {
            gamma: store.add(format!("{prefix}.gamma"), Tensor::full(&[d], 1.0))?,
            beta: store.add(format!("{prefix}.beta"), Tensor::zeros(&[d]))?,
        })
    }

    pub(crate) fn resolve(store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(LayerNormParams {
            gamma: store.require(&format!("{prefix}.gamma"))?,
            beta: store.require(&format!("{prefix}.beta"))?,
        })
    }

    pub fn forward<'a>(&self, g: &mut Graph<'a>, store: &'a ParamStore, x: Var) -> Result<Var> {
        let gamma = store.bind(g, self.gamma);
        let beta = store.bind(g, self.beta);
        g.layer_norm(x, gamma, beta, LAYER_NORM_EPS)
    }
}

/// Post-norm residual wrapper: `norm(x + dropout(f(x)))`.
pub fn sublayer_wrap<'a>(
    g: &mut Graph<'a>,
    store: &'a ParamStore,
    norm: &LayerNormParams,
    x: Var,
    dropout: &mut Dropout,
    f: impl FnOnce(&mut Graph<'a>) -> Result<Var>,
) -> Result<Var> {
    let fx = f(g)?;
    let fx = dropout.apply(g, fx)?;
    let sum = g.add(x, fx)?;
    norm.forward(g, store, sum)
}

#[derive(Clone, Copy, Debug)]
pub struct FeedForwardParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl FeedForwardParams {
    pub(crate) fn init(store: &mut ParamStore, prefix: &str, d: usize, d_ff: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(FeedForwardParams {
            w1: store.add(format!("{prefix}.w1"), xavier(rng, d, d_ff))?,
            b1: store.add(format!("{prefix}.b1"), Tensor::zeros(&[d_ff]))?,
            w2: store.add(format!("{prefix}.w2"), xavier(rng, d_ff, d))?,
            b2: store.add(format!("{prefix}.b2"), Tensor::zeros(&[d]))?,
        })
    }

    pub(crate) fn resolve(store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(FeedForwardParams {
            w1: store.require(&format!("{prefix}.w1"))?,
            b1: store.require(&format!("{prefix}.b1"))?,
            w2: store.require(&format!("{prefix}.w2"))?,
            b2: store.require(&format!("{prefix}.b2"))?,
        })
    }
}

/// `max(0, x·W1 + b1)·W2 + b2`, position-wise.
pub fn feed_forward<'a>(g: &mut Graph<'a>, store: &'a ParamStore, p: &FeedForwardParams, x: Var) -> Result<Var> {
    let w1 = store.bind(g, p.w1);
    let b1 = store.bind(g, p.b1);
    let w2 = store.bind(g, p.w2);
    let b2 = store.bind(g, p.b2);
    let h = g.matmul(x, w1)?;
    let h = g.add(h, b1)?;
    let h = g.relu(h);
    let o = g.matmul(h, w2)?;
    g.add(o, b2)
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionParams {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
}

/// Keys and values already split into heads: `[B, h, S, d_k]` each.
#[derive(Clone, Copy, Debug)]
pub struct HeadKv {
    pub k: Var,
    pub v: Var,
}

impl AttentionParams {
    pub(crate) fn init(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut mat = |name: &str, rng: &mut _| store.add(format!("{prefix}.{name}"), xavier(rng, d, d));
        let (wq, wk, wv, wo) = (mat("wq", rng)?, mat("wk", rng)?, mat("wv", rng)?, mat("wo", rng)?);
        let mut bias = |name: &str| store.add(format!("{prefix}.{name}"), Tensor::zeros(&[d]));
        Ok(AttentionParams {
            wq,
            bq: bias("bq")?,
            wk,
            bk: bias("bk")?,
            wv,
            bv: bias("bv")?,
            wo,
            bo: bias("bo")?,
        })
    }

    pub(crate) fn resolve(store: &ParamStore, prefix: &str) -> Result<Self> {
        let r = |n: &str| store.require(&format!("{prefix}.{n}"));
        Ok(AttentionParams {
            wq: r("wq")?,
            bq: r("bq")?,
            wk: r("wk")?,
            bk: r("bk")?,
            wv: r("wv")?,
            bv: r("bv")?,
            wo: r("wo")?,
            bo: r("bo")?,
        })
    }

    /// `x[B, T, d]·W + b` reshaped to `[B, h, T, d/h]`.
    fn heads<'a>(&self, g: &mut Graph<'a>, store: &'a ParamStore, w: ParamId, b: ParamId, x: Var, h: usize) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() != 3 || s[2] % h != 0 {
            return Err(Error::invalid("multi_head", format!("input {s:?} cannot split into {h} heads")));
        }
        let (wv, bv) = (store.bind(g, w), store.bind(g, b));
        let y = g.matmul(x, wv)?;
        let y = g.add(y, bv)?;
        let y = g.reshape(y, &[s[0], s[1], h, s[2] / h])?;
        g.permute(y, &[0, 2, 1, 3])
    }

    pub fn key_values<'a>(&self, g: &mut Graph<'a>, store: &'a ParamStore, x: Var, h: usize) -> Result<HeadKv> {
        Ok(HeadKv {
            k: self.heads(g, store, self.wk, self.bk, x, h)?,
            v: self.heads(g, store, self.wv, self.bv, x, h)?,
        })
    }

    /// Queries from `x[B, T, d]` attend over `kv`; `mask` is `[B, T, S]`
    /// (true = blocked) and is shared by all heads.
    pub fn attend<'a>(
        &self,
        g: &mut Graph<'a>,
        store: &'a ParamStore,
        x: Var,
        kv: HeadKv,
        mask: Option<&[bool]>,
        h: usize,
    ) -> Result<Var> {
        let q = self.heads(g, store, self.wq, self.bq, x, h)?;
        let (b, t, d) = {
            let s = g.shape(x);
            (s[0], s[1], s[2])
        };
        let src_len = g.shape(kv.k)[2];
        let expanded;
        let mask = match mask {
            Some(m) => {
                if m.len() != b * t * src_len {
                    return Err(Error::shape("attention mask", &[b, t, src_len], &[m.len()]));
                }
                expanded = expand_heads(m, b, h, t * src_len);
                Some(expanded.as_slice())
            }
            None => None,
        };
        let ctx = attention(g, q, kv.k, kv.v, mask)?;
        let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = g.reshape(ctx, &[b, t, d])?;
        let wo = store.bind(g, self.wo);
        let bo = store.bind(g, self.bo);
        let o = g.matmul(ctx, wo)?;
        g.add(o, bo)
    }
}

/// `[h] parallel projected attentions, concatenated and projected by W^O`.
pub fn multi_head<'a>(
    g: &mut Graph<'a>,
    store: &'a ParamStore,
    p: &AttentionParams,
    query: Var,
    memory: Var,
    mask: Option<&[bool]>,
    heads: usize,
) -> Result<Var> {
    let kv = p.key_values(g, store, memory, heads)?;
    p.attend(g, store, query, kv, mask, heads)
}

fn expand_heads(mask: &[bool], b: usize, h: usize, block: usize) -> Vec<bool> {
    let mut out = Vec::with_capacity(b * h * block);
    for bi in 0..b {
        for _ in 0..h {
            out.extend_from_slice(&mask[bi * block..(bi + 1) * block]);
        }
    }
    out
}
