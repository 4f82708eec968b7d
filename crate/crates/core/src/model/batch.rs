use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::fusion::VisualFeature;
use crate::vocab::{Vocab, BOS_ID, EOS_ID, PAD_ID};

/// One training pair. `src` is fed to the encoder as is; `tgt` is bare and
/// gets BOS/EOS added when batched.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub src: Vec<usize>,
    pub tgt: Vec<usize>,
    pub visual: Option<VisualFeature>,
}

/// Encoder input ids for a tokenized sentence: vocabulary ids plus EOS.
pub fn source_ids<S: AsRef<str>>(vocab: &Vocab, tokens: &[S]) -> Vec<usize> {
    let mut ids = vocab.encode(tokens);
    ids.push(EOS_ID);
    ids
}

/// Padded, row-major id matrices for a group of examples.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub src_len: usize,
    pub tgt_len: usize,
    /// `[size, src_len]`
    pub src: Vec<usize>,
    /// `[size, tgt_len]`, BOS followed by the target.
    pub tgt_in: Vec<usize>,
    /// `[size, tgt_len]`, the target followed by EOS.
    pub tgt_out: Vec<usize>,
    pub visual: Vec<Option<VisualFeature>>,
}

impl Batch {
    pub fn new(examples: &[&Example]) -> Batch {
        let size = examples.len();
        let src_len = examples.iter().map(|e| e.src.len()).max().unwrap_or(0);
        let tgt_len = examples.iter().map(|e| e.tgt.len() + 1).max().unwrap_or(0);
        let mut src = vec![PAD_ID; size * src_len];
        let mut tgt_in = vec![PAD_ID; size * tgt_len];
        let mut tgt_out = vec![PAD_ID; size * tgt_len];
        for (b, e) in examples.iter().enumerate() {
            src[b * src_len..b * src_len + e.src.len()].copy_from_slice(&e.src);
            let row = b * tgt_len;
            tgt_in[row] = BOS_ID;
            tgt_in[row + 1..row + 1 + e.tgt.len()].copy_from_slice(&e.tgt);
            tgt_out[row..row + e.tgt.len()].copy_from_slice(&e.tgt);
            tgt_out[row + e.tgt.len()] = EOS_ID;
        }
        Batch {
            size,
            src_len,
            tgt_len,
            src,
            tgt_in,
            tgt_out,
            visual: examples.iter().map(|e| e.visual.clone()).collect(),
        }
    }

    pub fn from_pairs(pairs: &[(Vec<usize>, Vec<usize>, Option<VisualFeature>)]) -> Batch {
        let ex: Vec<Example> = pairs
            .iter()
            .map(|(s, t, v)| Example {
                src: s.clone(),
                tgt: t.clone(),
                visual: v.clone(),
            })
            .collect();
        Batch::new(&ex.iter().collect::<Vec<_>>())
    }

    /// Non-pad target tokens.
    pub fn target_tokens(&self) -> usize {
        self.tgt_out.iter().filter(|&&t| t != PAD_ID).count()
    }
}

fn padded_cost(count: usize, src_max: usize, tgt_max: usize) -> usize {
    count * src_max.max(tgt_max)
}

/// Groups examples into batches of at most `batch_tokens` padded tokens.
///
/// Examples are shuffled, cut into shards of 100 batches' worth, sorted by
/// length inside each shard so batches are tightly packed, and the batch
/// order is shuffled again. An example longer than the budget becomes a
/// batch of its own. Deterministic for a given seed.
pub fn make_batches(examples: &[Example], batch_tokens: usize, seed: u64) -> Vec<Batch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut rng);
    let len_of = |i: usize| examples[i].src.len().max(examples[i].tgt.len() + 1);
    let shard = (100 * batch_tokens / 16).max(1);
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for chunk in order.chunks(shard) {
        let mut chunk = chunk.to_vec();
        chunk.sort_by_key(|&i| (len_of(i), i));
        let mut cur: Vec<usize> = Vec::new();
        let (mut smax, mut tmax) = (0, 0);
        for i in chunk {
            let (s, t) = (examples[i].src.len(), examples[i].tgt.len() + 1);
            let cost = padded_cost(cur.len() + 1, smax.max(s), tmax.max(t));
            if !cur.is_empty() && cost > batch_tokens {
                groups.push(std::mem::take(&mut cur));
                smax = 0;
                tmax = 0;
            }
            smax = smax.max(s);
            tmax = tmax.max(t);
            cur.push(i);
        }
        if !cur.is_empty() {
            groups.push(cur);
        }
    }
    groups.shuffle(&mut rng);
    groups
        .iter()
        .map(|g| Batch::new(&g.iter().map(|&i| &examples[i]).collect::<Vec<_>>()))
        .collect()
}
