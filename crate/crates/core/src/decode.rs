//! Beam search over any step-wise next-token model, post-softmax ensemble
//! averaging, and the blinded visual-feature provider.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::VisualFeature;
use crate::model::{EncoderOutput, Fusion, Transformer};
use crate::vocab::{BOS_ID, EOS_ID, PAD_ID};

/// Something that yields next-token distributions one token at a time.
pub trait StepDecoder {
    type State: Clone;
    fn start(&self) -> Self::State;
    /// Feeds `token` and returns the distribution over the next token.
    fn step(&self, state: &mut Self::State, token: usize) -> Result<Vec<f64>>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeamConfig {
    pub width: usize,
    /// Length-normalisation exponent: hypotheses are ranked by `lp / len^alpha`.
    pub alpha: f64,
    /// Maximum number of generated tokens, EOS included.
    pub max_len: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            width: 5,
            alpha: 0.6,
            max_len: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Generated tokens without BOS/EOS.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Length counts the EOS token of finished hypotheses.
    pub fn normalized_score(&self, alpha: f64) -> f64 {
        let len = (self.tokens.len() + usize::from(self.finished)).max(1);
        self.log_prob / (len as f64).powf(alpha)
    }
}

fn banned(token: usize) -> bool {
    token == PAD_ID || token == BOS_ID
}

struct Live<S> {
    tokens: Vec<usize>,
    log_prob: f64,
    state: S,
    probs: Vec<f64>,
}

/// Length-normalised beam search. Candidates are ranked by cumulative
/// log-probability (ties: earlier hypothesis, then lower token id); an EOS
/// candidate finishes a hypothesis when it ranks inside the top `width`,
/// and the best `width` non-EOS candidates stay alive. Search stops once
/// `width` hypotheses have finished or `max_len` tokens were generated.
pub fn beam_search<D: StepDecoder>(dec: &D, cfg: &BeamConfig) -> Result<Hypothesis> {
    if cfg.width == 0 {
        return Err(Error::Decode("beam width must be at least 1".into()));
    }
    if cfg.max_len == 0 {
        return Err(Error::Decode("max_len must be at least 1".into()));
    }
    let mut state = dec.start();
    let probs = dec.step(&mut state, BOS_ID)?;
    let mut alive = vec![Live {
        tokens: Vec::new(),
        log_prob: 0.0,
        state,
        probs,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..cfg.max_len {
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        for (i, h) in alive.iter().enumerate() {
            for (w, &p) in h.probs.iter().enumerate() {
                if !banned(w) && p > 0.0 {
                    cands.push((h.log_prob + p.ln(), i, w));
                }
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut next: Vec<(f64, usize, usize)> = Vec::with_capacity(cfg.width);
        for (rank, &c) in cands.iter().enumerate() {
            if c.2 == EOS_ID {
                if rank < cfg.width {
                    finished.push(Hypothesis {
                        tokens: alive[c.1].tokens.clone(),
                        log_prob: c.0,
                        finished: true,
                    });
                }
            } else if next.len() < cfg.width {
                next.push(c);
            }
            if next.len() == cfg.width && rank + 1 >= cfg.width {
                break;
            }
        }
        if finished.len() >= cfg.width || next.is_empty() {
            alive.clear();
            break;
        }
        let last_round = alive[0].tokens.len() + 1 >= cfg.max_len;
        let mut grown = Vec::with_capacity(next.len());
        for (lp, i, w) in next {
            let parent = &alive[i];
            let mut tokens = parent.tokens.clone();
            tokens.push(w);
            let mut state = parent.state.clone();
            let probs = if last_round { Vec::new() } else { dec.step(&mut state, w)? };
            grown.push(Live {
                tokens,
                log_prob: lp,
                state,
                probs,
            });
        }
        alive = grown;
        if last_round {
            break;
        }
    }
    let pool: Vec<Hypothesis> = if finished.is_empty() {
        alive
            .into_iter()
            .map(|h| Hypothesis {
                tokens: h.tokens,
                log_prob: h.log_prob,
                finished: false,
            })
            .collect()
    } else {
        finished
    };
    let mut best: Option<(f64, Hypothesis)> = None;
    for h in pool {
        let s = h.normalized_score(cfg.alpha);
        if best.as_ref().map_or(true, |(b, _)| s > *b) {
            best = Some((s, h));
        }
    }
    best.map(|(_, h)| h)
        .ok_or_else(|| Error::Decode("beam search produced no hypothesis".into()))
}

/// Picks the most probable token at every step (lowest id on ties).
pub fn greedy<D: StepDecoder>(dec: &D, max_len: usize) -> Result<Hypothesis> {
    let mut state = dec.start();
    let mut probs = dec.step(&mut state, BOS_ID)?;
    let mut h = Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    };
    for i in 0..max_len {
        let (w, p) = probs
            .iter()
            .enumerate()
            .filter(|(w, _)| !banned(*w))
            .fold((usize::MAX, f64::NEG_INFINITY), |acc, (w, &p)| if p > acc.1 { (w, p) } else { acc });
        if w == usize::MAX || p <= 0.0 {
            return Err(Error::Decode("model assigns zero probability to every token".into()));
        }
        h.log_prob += p.ln();
        if w == EOS_ID {
            h.finished = true;
            break;
        }
        h.tokens.push(w);
        if i + 1 < max_len {
            probs = dec.step(&mut state, w)?;
        }
    }
    Ok(h)
}

/// Averages member distributions after the softmax.
pub struct Ensemble<D> {
    members: Vec<D>,
}

impl<D: StepDecoder> Ensemble<D> {
    pub fn new(members: Vec<D>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Decode("an ensemble needs at least one member".into()));
        }
        Ok(Ensemble { members })
    }
}

/// `p_1 + Σ (p_i − p_1) / k`: the arithmetic mean, written so that
/// identical members reproduce `p_1` bit for bit.
pub fn average_distributions(dists: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = dists.first().ok_or_else(|| Error::Decode("nothing to average".into()))?;
    if dists.iter().any(|d| d.len() != first.len()) {
        return Err(Error::Vocabulary("ensemble members disagree on vocabulary size".into()));
    }
    let k = dists.len() as f64;
    Ok((0..first.len())
        .map(|j| {
            let base = first[j];
            base + dists[1..].iter().map(|d| (d[j] - base) / k).sum::<f64>()
        })
        .collect())
}

impl<D: StepDecoder> StepDecoder for Ensemble<D> {
    type State = Vec<D::State>;

    fn start(&self) -> Self::State {
        self.members.iter().map(StepDecoder::start).collect()
    }

    fn step(&self, state: &mut Self::State, token: usize) -> Result<Vec<f64>> {
        let dists = self
            .members
            .iter()
            .zip(state.iter_mut())
            .map(|(m, s)| m.step(s, token))
            .collect::<Result<Vec<_>>>()?;
        average_distributions(&dists)
    }
}

/// Errors unless every model shares the vocabulary and fusion mode.
pub fn check_ensemble(models: &[&Transformer]) -> Result<()> {
    let first = models.first().ok_or_else(|| Error::Decode("no models given".into()))?;
    for (i, m) in models.iter().enumerate().skip(1) {
        if m.vocab() != first.vocab() {
            return Err(Error::Vocabulary(format!("ensemble member {i} has a different vocabulary")));
        }
        if m.config().fusion != first.config().fusion {
            return Err(Error::Config(format!(
                "ensemble member {i} uses fusion {:?}, member 0 uses {:?}",
                m.config().fusion,
                first.config().fusion
            )));
        }
    }
    Ok(())
}

/// Per-sentence visual features for decoding.
#[derive(Clone, Debug)]
pub enum VisualSource {
    None,
    PerSentence(Vec<Option<VisualFeature>>),
    /// Every lookup returns the same (training-mean) feature.
    Blind(VisualFeature),
}

impl VisualSource {
    pub fn get(&self, i: usize) -> Option<&VisualFeature> {
        match self {
            VisualSource::None => None,
            VisualSource::PerSentence(v) => v.get(i).and_then(Option::as_ref),
            VisualSource::Blind(f) => Some(f),
        }
    }
}

/// Provider that replaces every feature by the model's training mean.
pub fn blind(model: &Transformer) -> Result<VisualSource> {
    model
        .mean_feature()
        .cloned()
        .map(VisualSource::Blind)
        .ok_or_else(|| Error::Visual("model has no mean visual feature to blind with".into()))
}

/// Beam-decodes one encoded source sentence with every model of `models`
/// averaged after the softmax. Output length is capped by the smallest
/// model `max_len` as well as by `cfg.max_len`.
pub fn translate_ids(models: &[&Transformer], src: &[usize], visual: Option<&VisualFeature>, cfg: &BeamConfig) -> Result<Hypothesis> {
    check_ensemble(models)?;
    let encoded: Vec<EncoderOutput> = models.iter().map(|m| m.encode(src, visual)).collect::<Result<_>>()?;
    let decoders = models.iter().zip(&encoded).map(|(m, e)| m.incremental(e)).collect();
    let limit = models.iter().map(|m| m.config().max_len).min().unwrap_or(cfg.max_len);
    let cfg = BeamConfig {
        max_len: cfg.max_len.min(limit),
        ..cfg.clone()
    };
    beam_search(&Ensemble::new(decoders)?, &cfg)
}

/// Translates every sentence (in parallel). Sources are id sequences as
/// fed to the encoder.
pub fn translate_corpus(
    models: &[&Transformer],
    sources: &[Vec<usize>],
    visual: &VisualSource,
    cfg: &BeamConfig,
) -> Result<Vec<Hypothesis>> {
    check_ensemble(models)?;
    let fusion = models[0].config().fusion;
    if fusion != Fusion::None {
        if let VisualSource::None = visual {
            return Err(Error::Visual(format!("fusion {fusion:?} needs visual features")));
        }
    }
    sources
        .par_iter()
        .enumerate()
        .map(|(i, src)| translate_ids(models, src, visual.get(i), cfg))
        .collect()
}
