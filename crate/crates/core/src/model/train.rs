use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion;
use crate::tensor::{AdamConfig, AdamState, Graph};
use crate::vocab::PAD_ID;

use super::{make_batches, token_accuracy, Batch, Dropout, Example, Transformer};

/// Which parameters stay fixed during training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Freeze {
    #[default]
    None,
    /// Only `fusion.*` parameters are updated.
    AllButFusion,
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    /// Optimizer updates to run in this call.
    pub max_steps: u64,
    pub max_epochs: Option<usize>,
    pub seed: u64,
    pub adam: AdamConfig,
    pub freeze: Freeze,
    /// Stop once teacher-forced training accuracy reaches this value.
    /// Checked every `accuracy_every` epochs.
    pub stop_at_accuracy: Option<f64>,
    pub accuracy_every: usize,
    /// Run the dev-set callback every this many epochs (0 disables it).
    pub dev_every: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            max_steps: 1000,
            max_epochs: None,
            seed: 1,
            adam: AdamConfig::default(),
            freeze: Freeze::None,
            stop_at_accuracy: None,
            accuracy_every: 1,
            dev_every: 1,
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub dev_bleu: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Global step count after training (including resumed steps).
    pub step: u64,
    pub epochs: usize,
    pub losses: Vec<f64>,
    pub final_accuracy: Option<f64>,
}

/// Owns the optimizer and dropout state for a model being trained.
pub struct Trainer<'m> {
    model: &'m mut Transformer,
    adam: AdamState,
    dropout: Dropout,
}

impl<'m> Trainer<'m> {
    /// Starts (or resumes, from `start_step`) training. Optimizer moments
    /// always start at zero.
    pub fn new(model: &'m mut Transformer, adam: AdamConfig, freeze: Freeze, seed: u64, start_step: u64) -> Result<Self> {
        match freeze {
            Freeze::None => {}
            Freeze::AllButFusion => model.params_mut().freeze_except(fusion::is_fusion_param),
            Freeze::All => model.params_mut().freeze_except(|_| false),
        }
        let mut state = AdamState::new(adam, model.config().d_model, model.params())?;
        state.step = start_step;
        let dropout = Dropout::train(model.config().dropout, seed ^ 0x9e37_79b9_7f4a_7c15);
        Ok(Trainer {
            model,
            adam: state,
            dropout,
        })
    }

    pub fn model(&self) -> &Transformer {
        self.model
    }

    pub fn step(&self) -> u64 {
        self.adam.step
    }

    /// Forward, backward and one optimizer update. Returns the batch loss.
    pub fn train_batch(&mut self, batch: &Batch) -> Result<f64> {
        let model: &Transformer = self.model;
        let (loss, grads) = {
            let mut g = Graph::new();
            let loss = model.batch_loss(&mut g, batch, &mut self.dropout)?;
            g.backward(loss)?;
            (g.value(loss).item()?, g.take_param_grads())
        };
        if !loss.is_finite() {
            return Err(Error::NonFiniteGradient(format!("loss is {loss} at step {}", self.adam.step + 1)));
        }
        let params = self.model.params_mut();
        params.accumulate(grads);
        self.adam.step(params)?;
        Ok(loss)
    }

    pub fn learning_rate(&self) -> f64 {
        self.adam.learning_rate(self.adam.step.max(1))
    }
}

/// Teacher-forced per-token accuracy over `data` with dropout off.
pub fn accuracy(model: &Transformer, data: &[Example]) -> Result<f64> {
    let (mut hit, mut n) = (0.0, 0usize);
    for chunk in data.chunks(32) {
        let batch = Batch::new(&chunk.iter().collect::<Vec<_>>());
        let mut g = Graph::new();
        let logits = model.forward_batch(&mut g, &batch, &mut Dropout::eval())?;
        let tokens = batch.target_tokens();
        hit += token_accuracy(g.value(logits), &batch.tgt_out, Some(PAD_ID)) * tokens as f64;
        n += tokens;
    }
    if n == 0 {
        return Err(Error::Corpus("no target tokens to score".into()));
    }
    Ok(hit / n as f64)
}

/// Token-batched training over shuffled epochs. `on_record` receives a log
/// record after every update; `dev_bleu` (when given) is evaluated at the
/// end of every `dev_every`-th epoch and reported in that epoch's last record.
pub fn train(
    model: &mut Transformer,
    data: &[Example],
    opts: &TrainOptions,
    start_step: u64,
    mut on_record: impl FnMut(&TrainLogRecord) -> Result<()>,
    mut dev_bleu: Option<&mut dyn FnMut(&Transformer) -> Result<f64>>,
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::Corpus("training corpus is empty".into()));
    }
    if model.config().fusion.needs_visual() && model.mean_feature().is_none() {
        let mean = fusion::mean_feature(data.iter().map(|e| e.visual.as_ref()))?;
        model.set_mean_feature(Some(mean));
    }
    let batch_tokens = model.config().batch_tokens;
    let mut trainer = Trainer::new(model, opts.adam.clone(), opts.freeze, opts.seed, start_step)?;
    let mut report = TrainReport {
        step: start_step,
        epochs: 0,
        losses: Vec::new(),
        final_accuracy: None,
    };
    let mut done = 0u64;
    'epochs: while done < opts.max_steps && opts.max_epochs.map_or(true, |m| report.epochs < m) {
        let epoch_seed = opts.seed.wrapping_mul(1_000_003).wrapping_add(start_step + report.epochs as u64);
        let batches = make_batches(data, batch_tokens, epoch_seed);
        let last = batches.len() - 1;
        report.epochs += 1;
        for (i, batch) in batches.iter().enumerate() {
            let loss = trainer.train_batch(batch)?;
            done += 1;
            report.losses.push(loss);
            let epoch_end = i == last;
            let mut record = TrainLogRecord {
                step: trainer.step(),
                loss,
                lr: trainer.learning_rate(),
                dev_bleu: None,
            };
            if epoch_end && opts.dev_every > 0 && report.epochs % opts.dev_every == 0 {
                if let Some(f) = dev_bleu.as_mut() {
                    record.dev_bleu = Some(f(trainer.model())?);
                }
            }
            on_record(&record)?;
            if done >= opts.max_steps {
                break 'epochs;
            }
        }
        if let Some(target) = opts.stop_at_accuracy {
            if report.epochs % opts.accuracy_every.max(1) == 0 {
                let acc = accuracy(trainer.model(), data)?;
                report.final_accuracy = Some(acc);
                if acc >= target {
                    break;
                }
            }
        }
    }
    report.step = trainer.step();
    Ok(report)
}
