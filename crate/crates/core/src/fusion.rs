//! Injection of a per-sentence visual feature vector into the Transformer:
//! a projected pseudo-word on the source side, sigmoid gates over encoder
//! states or decoder logits, and a tanh modulation of target embeddings.
//! Also the corpus-mean "dummy" feature used for text-only data and for
//! blinding, and the binary feature file format.

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Fusion, ModelConfig};
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

/// A fixed-width image descriptor attached to a sentence pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisualFeature(Vec<f64>);

impl VisualFeature {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Visual("empty feature vector".into()));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Visual(format!("non-finite value {bad}")));
        }
        Ok(VisualFeature(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Arithmetic mean of every present feature.
pub fn mean_feature<'f>(features: impl IntoIterator<Item = Option<&'f VisualFeature>>) -> Result<VisualFeature> {
    let mut sum: Vec<f64> = Vec::new();
    let mut count = 0usize;
    for f in features.into_iter().flatten() {
        if sum.is_empty() {
            sum = vec![0.0; f.dim()];
        } else if f.dim() != sum.len() {
            return Err(Error::Visual(format!("mixed feature widths {} and {}", sum.len(), f.dim())));
        }
        for (s, v) in sum.iter_mut().zip(f.values()) {
            *s += v;
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::Visual("no visual features present to average".into()));
    }
    VisualFeature::new(sum.into_iter().map(|s| s / count as f64).collect())
}

// ---- parameters --------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct Affine {
    pub w: ParamId,
    pub b: ParamId,
}

/// `σ(U·state + W·V + b)`; `u` is absent for the visual-only gate.
#[derive(Clone, Copy, Debug)]
pub struct Gate {
    pub u: Option<ParamId>,
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct FusionParams {
    pub img_w: Option<Affine>,
    pub enc_gate: Option<Gate>,
    pub dec_gate: Option<Gate>,
    pub trg_mul: Option<ParamId>,
}

/// How gate weight matrices start out. Bias vectors always start at
/// `ModelConfig::gate_bias_init`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GateInit {
    Xavier,
    Zero,
}

pub(crate) fn xavier(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-a..a)).collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("positive dims")
}

impl FusionParams {
    /// Adds the parameters `config.fusion` needs to `store`.
    pub fn init(store: &mut ParamStore, config: &ModelConfig, vocab_size: usize, init: GateInit, rng: &mut impl Rng) -> Result<Self> {
        let (d, vd) = (config.d_model, config.visual_dim);
        let matrix = |rng: &mut _, r: usize, c: usize| match init {
            GateInit::Xavier => xavier(rng, r, c),
            GateInit::Zero => Tensor::zeros(&[r, c]),
        };
        let bias = |n: usize| Tensor::full(&[n], config.gate_bias_init);
        let mut p = FusionParams::default();
        if config.fusion.uses_img_w() {
            p.img_w = Some(Affine {
                w: store.add("fusion.img_w.w", xavier(rng, vd, d))?,
                b: store.add("fusion.img_w.b", Tensor::zeros(&[d]))?,
            });
        }
        if config.fusion.uses_enc_gate() {
            p.enc_gate = Some(Gate {
                u: Some(store.add("fusion.enc_gate.u", matrix(rng, d, d))?),
                w: store.add("fusion.enc_gate.w", matrix(rng, vd, d))?,
                b: store.add("fusion.enc_gate.b", bias(d))?,
            });
        }
        if config.fusion.uses_dec_gate() {
            let u = if config.fusion == Fusion::DecGateStatic {
                log::warn!("visual-only decoder gate is deprecated; use dec_gate");
                None
            } else {
                Some(store.add("fusion.dec_gate.u", matrix(rng, d, vocab_size))?)
            };
            p.dec_gate = Some(Gate {
                u,
                w: store.add("fusion.dec_gate.w", matrix(rng, vd, vocab_size))?,
                b: store.add("fusion.dec_gate.b", bias(vocab_size))?,
            });
        }
        if config.fusion.uses_trg_mul() {
            p.trg_mul = Some(store.add("fusion.trg_mul.w", xavier(rng, vd, d))?);
        }
        Ok(p)
    }

    /// Looks the parameters up by name, e.g. after loading a checkpoint.
    pub fn resolve(store: &ParamStore, fusion: Fusion) -> Result<Self> {
        let gate = |prefix: &str, with_u: bool| -> Result<Gate> {
            Ok(Gate {
                u: if with_u { Some(store.require(&format!("{prefix}.u"))?) } else { None },
                w: store.require(&format!("{prefix}.w"))?,
                b: store.require(&format!("{prefix}.b"))?,
            })
        };
        let mut p = FusionParams::default();
        if fusion.uses_img_w() {
            p.img_w = Some(Affine {
                w: store.require("fusion.img_w.w")?,
                b: store.require("fusion.img_w.b")?,
            });
        }
        if fusion.uses_enc_gate() {
            p.enc_gate = Some(gate("fusion.enc_gate", true)?);
        }
        if fusion.uses_dec_gate() {
            p.dec_gate = Some(gate("fusion.dec_gate", fusion != Fusion::DecGateStatic)?);
        }
        if fusion.uses_trg_mul() {
            p.trg_mul = Some(store.require("fusion.trg_mul.w")?);
        }
        Ok(p)
    }
}

/// True for parameter names owned by a fusion mechanism.
pub fn is_fusion_param(name: &str) -> bool {
    name.starts_with("fusion.")
}

// ---- graph operations --------------------------------------------------

fn check_visual(g: &Graph, visual: Var, w: Var) -> Result<()> {
    let (vs, ws) = (g.shape(visual), g.shape(w));
    if vs.len() != 2 || vs[1] != ws[0] {
        return Err(Error::shape("visual projection", vs, ws));
    }
    Ok(())
}

/// `x_I = V·W_src + b_I` for a `[B, visual_dim]` batch; returns `[B, d_model]`.
pub fn img_w_pseudo_word<'a>(g: &mut Graph<'a>, store: &'a ParamStore, p: &Affine, visual: Var) -> Result<Var> {
    let w = store.bind(g, p.w);
    let b = store.bind(g, p.b);
    check_visual(g, visual, w)?;
    let proj = g.matmul(visual, w)?;
    g.add(proj, b)
}

fn gate_values<'a>(g: &mut Graph<'a>, store: &'a ParamStore, gate: &Gate, state: Var, visual: Var) -> Result<Var> {
    let w = store.bind(g, gate.w);
    let b = store.bind(g, gate.b);
    check_visual(g, visual, w)?;
    let batch = g.shape(visual)[0];
    let width = g.shape(w)[1];
    let vis = g.matmul(visual, w)?;
    let vis = g.reshape(vis, &[batch, 1, width])?;
    let pre = match gate.u {
        Some(u) => {
            let u = store.bind(g, u);
            let su = g.matmul(state, u)?;
            g.add(su, vis)?
        }
        None => {
            let t = g.shape(state)[1];
            let zeros = g.constant(Tensor::zeros(&[batch, t, width]));
            g.add(zeros, vis)?
        }
    };
    let pre = g.add(pre, b)?;
    Ok(g.sigmoid(pre))
}

/// `y'_j = y_j ⊙ σ(U·s_j + W·V + b)` on pre-softmax logits `[B, T, vocab]`,
/// with decoder states `[B, T, d_model]`.
pub fn decoder_gate<'a>(g: &mut Graph<'a>, store: &'a ParamStore, gate: &Gate, states: Var, visual: Var, logits: Var) -> Result<Var> {
    let gv = gate_values(g, store, gate, states, visual)?;
    g.mul(logits, gv)
}

/// `h'_i = h_i ⊙ σ(U·h_i + W·V + b)` on final encoder states `[B, S, d_model]`.
pub fn encoder_gate<'a>(g: &mut Graph<'a>, store: &'a ParamStore, gate: &Gate, states: Var, visual: Var) -> Result<Var> {
    let gv = gate_values(g, store, gate, states, visual)?;
    g.mul(states, gv)
}

/// `tanh(W_mul·V)` as `[B, 1, d_model]`.
pub fn trg_mul_modulation<'a>(g: &mut Graph<'a>, store: &'a ParamStore, w: ParamId, visual: Var) -> Result<Var> {
    let w = store.bind(g, w);
    check_visual(g, visual, w)?;
    let batch = g.shape(visual)[0];
    let d = g.shape(w)[1];
    let m = g.matmul(visual, w)?;
    let m = g.tanh(m);
    g.reshape(m, &[batch, 1, d])
}

/// `y'_j = y_j ⊙ tanh(W_mul·V)` on target embeddings `[B, T, d_model]`.
pub fn trg_mul_gate<'a>(g: &mut Graph<'a>, store: &'a ParamStore, w: ParamId, embeddings: Var, visual: Var) -> Result<Var> {
    let m = trg_mul_modulation(g, store, w, visual)?;
    g.mul(embeddings, m)
}

// ---- feature files -------------------------------------------------------

const FEATURE_MAGIC: &[u8; 8] = b"MMTVFEAT";
const FEATURE_VERSION: u32 = 1;

/// Features keyed by sample id, as stored in a feature file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureTable {
    pub dim: usize,
    pub features: BTreeMap<u64, VisualFeature>,
}

impl FeatureTable {
    pub fn new(dim: usize) -> Self {
        FeatureTable {
            dim,
            features: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, id: u64, f: VisualFeature) -> Result<()> {
        if f.dim() != self.dim {
            return Err(Error::Visual(format!("feature {id} has width {}, table expects {}", f.dim(), self.dim)));
        }
        if self.features.insert(id, f).is_some() {
            return Err(Error::Visual(format!("duplicate sample id {id}")));
        }
        Ok(())
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(FEATURE_MAGIC)?;
        w.write_all(&FEATURE_VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.features.len() as u64).to_le_bytes())?;
        for (id, f) in &self.features {
            w.write_all(&id.to_le_bytes())?;
            for v in f.values() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != FEATURE_MAGIC {
            return Err(Error::Visual("not a feature file (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FEATURE_VERSION {
            return Err(Error::Visual(format!("unsupported feature file version {version}")));
        }
        let dim = read_u32(&mut r)? as usize;
        let count = read_u64(&mut r)?;
        let mut table = FeatureTable::new(dim);
        for _ in 0..count {
            let id = read_u64(&mut r)?;
            let mut values = Vec::with_capacity(dim);
            for _ in 0..dim {
                values.push(f64::from_le_bytes(read_array(&mut r)?));
            }
            table.insert(id, VisualFeature::new(values)?)?;
        }
        Ok(table)
    }

    /// Per-line features from a manifest holding one sample id per corpus
    /// line, or `-` for a line without an image.
    pub fn align(&self, manifest: impl BufRead) -> Result<Vec<Option<VisualFeature>>> {
        let mut out = Vec::new();
        for (n, line) in manifest.lines().enumerate() {
            let line = line?;
            let key = line.trim();
            if key == "-" {
                out.push(None);
                continue;
            }
            let id: u64 = key
                .parse()
                .map_err(|_| Error::Visual(format!("manifest line {}: bad sample id `{key}`", n + 1)))?;
            let f = self
                .features
                .get(&id)
                .ok_or_else(|| Error::Visual(format!("manifest line {}: unknown sample id {id}", n + 1)))?;
            out.push(Some(f.clone()));
        }
        Ok(out)
    }
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}
