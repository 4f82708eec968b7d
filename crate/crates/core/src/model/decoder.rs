use crate::decode::StepDecoder;
use crate::error::{Error, Result};
use crate::fusion::VisualFeature;
use crate::tensor::kernels::softmax_row;
use crate::tensor::{Graph, Tensor};

use super::{Context, Dropout, Transformer};

/// Encoded source sentence, ready for repeated decoding.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    /// `[1, S, d_model]`
    pub states: Tensor,
    pub key_pad: Vec<bool>,
    /// Head-split context keys/values of every decoder layer.
    ctx_kv: Vec<(Tensor, Tensor)>,
    /// The feature actually used (the model's mean feature if none was given).
    visual: Option<VisualFeature>,
}

impl EncoderOutput {
    pub fn len(&self) -> usize {
        self.key_pad.len()
    }

    pub fn is_empty(&self) -> bool {
        self.key_pad.is_empty()
    }

    pub fn visual(&self) -> Option<&VisualFeature> {
        self.visual.as_ref()
    }
}

/// Self-attention keys/values of the target positions decoded so far.
#[derive(Clone, Debug)]
pub struct DecoderCache {
    pub(crate) self_kv: Vec<Option<(Tensor, Tensor)>>,
    pub(crate) len: usize,
}

impl DecoderCache {
    pub fn new(n_layers: usize) -> Self {
        DecoderCache {
            self_kv: vec![None; n_layers],
            len: 0,
        }
    }

    /// Number of target positions already consumed.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

impl Transformer {
    fn resolve_visual(&self, visual: Option<&VisualFeature>) -> Result<Option<VisualFeature>> {
        if !self.config.fusion.needs_visual() {
            return Ok(None);
        }
        let f = visual.or(self.mean_feature.as_ref()).ok_or_else(|| {
            Error::Visual(format!("fusion {:?} needs a visual feature and the model has no mean feature", self.config.fusion))
        })?;
        Ok(Some(f.clone()))
    }

    /// Encodes one source sentence (ids used as given, no EOS is added).
    pub fn encode(&self, src: &[usize], visual: Option<&VisualFeature>) -> Result<EncoderOutput> {
        if src.is_empty() {
            return Err(Error::Decode("empty source sentence".into()));
        }
        if src.len() > self.config.max_len {
            return Err(Error::Decode(format!(
                "source of {} tokens exceeds max_len {}",
                src.len(),
                self.config.max_len
            )));
        }
        let visual = self.resolve_visual(visual)?;
        let mut g = Graph::new();
        let v = self.visual_input(&mut g, &[visual.as_ref()])?;
        let mut drop = Dropout::eval();
        let enc = self.encode_graph(&mut g, src, 1, src.len(), v, &mut drop)?;
        let mut ctx_kv = Vec::with_capacity(self.config.n_layers);
        for l in 0..self.config.n_layers {
            let kv = self.context_kv(&mut g, &enc, l)?;
            ctx_kv.push((g.value(kv.k).clone(), g.value(kv.v).clone()));
        }
        Ok(EncoderOutput {
            states: g.value(enc.states).clone(),
            key_pad: enc.key_pad,
            ctx_kv,
            visual,
        })
    }

    fn next_token_probs(
        &self,
        enc: &EncoderOutput,
        tokens: &[usize],
        offset: usize,
        cache: Option<&mut DecoderCache>,
    ) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let v = self.visual_input(&mut g, &[enc.visual.as_ref()])?;
        let mut drop = Dropout::eval();
        let ctx = Context::Projected {
            kv: &enc.ctx_kv,
            key_pad: &enc.key_pad,
        };
        let logits = self.decode_graph(&mut g, ctx, tokens, 1, tokens.len(), offset, cache, v, &mut drop)?;
        let data = g.value(logits).data();
        let vsz = self.vocab.len();
        let last = &data[data.len() - vsz..];
        let mut probs = vec![0.0; vsz];
        softmax_row(last, &mut probs);
        Ok(probs)
    }

    /// Next-token distribution after `prefix` (which starts with BOS),
    /// recomputing every position from scratch.
    pub fn decode_step(&self, prefix: &[usize], enc: &EncoderOutput) -> Result<Vec<f64>> {
        if prefix.is_empty() {
            return Err(Error::Decode("empty target prefix".into()));
        }
        self.next_token_probs(enc, prefix, 0, None)
    }

    pub fn incremental<'m>(&'m self, enc: &'m EncoderOutput) -> IncrementalDecoder<'m> {
        IncrementalDecoder { model: self, enc }
    }
}

/// Decodes one token at a time, caching earlier self-attention keys/values.
/// Produces bit-identical distributions to [`Transformer::decode_step`].
pub struct IncrementalDecoder<'m> {
    model: &'m Transformer,
    enc: &'m EncoderOutput,
}

impl StepDecoder for IncrementalDecoder<'_> {
    type State = DecoderCache;

    fn start(&self) -> DecoderCache {
        DecoderCache::new(self.model.config.n_layers)
    }

    fn step(&self, state: &mut DecoderCache, token: usize) -> Result<Vec<f64>> {
        let offset = state.len;
        self.model.next_token_probs(self.enc, &[token], offset, Some(state))
    }
}
