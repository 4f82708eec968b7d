//! Experiment configuration, read from a TOML file.
//!
//! Relative paths are resolved against the directory holding the file.
//! Unknown keys are rejected at every level.

use std::path::{Path, PathBuf};

use mmtlab_core::corpus::{Domain, Lang, LmFilterConfig, Origin};
use mmtlab_core::decode::BeamConfig;
use mmtlab_core::fusion::GateInit;
use mmtlab_core::model::{Freeze, ModelConfig};
use mmtlab_core::tensor::AdamConfig;
use mmtlab_core::Fusion;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root of every random choice made by the commands.
    pub seed: u64,
    /// Where intermediate and final artefacts are written.
    pub work_dir: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub tags: TagConfig,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub bpe: BpeConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub decode: BeamConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train_src: PathBuf,
    pub train_tgt: PathBuf,
    pub dev_src: Option<PathBuf>,
    pub dev_tgt: Option<PathBuf>,
    /// Binary feature file plus a manifest with one sample id per line.
    pub train_features: Option<PathBuf>,
    pub train_manifest: Option<PathBuf>,
    pub dev_features: Option<PathBuf>,
    pub dev_manifest: Option<PathBuf>,
    /// Extra captions per training/dev source line, separated by ` ||| `.
    pub train_captions: Option<PathBuf>,
    pub dev_captions: Option<PathBuf>,
    #[serde(default = "default_origin")]
    pub origin: Origin,
}

fn default_origin() -> Origin {
    Origin::Multi30k
}

/// Source-side prefix tokens.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TagConfig {
    pub target_lang: Option<Lang>,
    /// Domain label; defaults to the one implied by `data.origin` when
    /// `target_lang` is set.
    pub domain: Option<Domain>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMethod {
    #[default]
    None,
    SubsH,
    SubsLm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub method: FilterMethod,
    /// Pairs to keep after scoring.
    pub top_k: Option<usize>,
    /// In-domain target-language text the language model is trained on.
    pub in_domain: Option<PathBuf>,
    /// In-domain source-language text. Its characters join the whitelist.
    pub in_domain_src: Option<PathBuf>,
    pub lm_order: usize,
    pub lm_k: f64,
    pub lm: LmFilterConfig,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            method: FilterMethod::None,
            top_k: None,
            in_domain: None,
            in_domain_src: None,
            lm_order: mmtlab_core::corpus::CharLm::DEFAULT_ORDER,
            lm_k: mmtlab_core::corpus::CharLm::DEFAULT_K,
            lm: LmFilterConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BpeConfig {
    pub merges: usize,
    /// Rescale each language's word counts to the same total.
    pub balanced: bool,
}

impl Default for BpeConfig {
    fn default() -> Self {
        BpeConfig {
            merges: 1000,
            balanced: true,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttachInit {
    #[default]
    Zero,
    Xavier,
}

impl From<AttachInit> for GateInit {
    fn from(a: AttachInit) -> GateInit {
        match a {
            AttachInit::Zero => GateInit::Zero,
            AttachInit::Xavier => GateInit::Xavier,
        }
    }
}

/// Adds a fusion mechanism to a resumed text-only model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttachConfig {
    pub fusion: Fusion,
    #[serde(default)]
    pub init: AttachInit,
    #[serde(default = "default_gate_bias")]
    pub gate_bias: f64,
}

fn default_gate_bias() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// One model per seed; empty means the top-level seed only.
    pub seeds: Vec<u64>,
    pub max_steps: u64,
    pub max_epochs: Option<usize>,
    pub adam: AdamConfig,
    pub freeze: Freeze,
    pub stop_at_accuracy: Option<f64>,
    pub accuracy_every: usize,
    /// Dev BLEU every this many epochs (needs dev data; 0 disables).
    pub dev_every: usize,
    /// Checkpoint to continue from, e.g. for domain tuning.
    pub resume: Option<PathBuf>,
    pub attach: Option<AttachConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seeds: Vec::new(),
            max_steps: 1000,
            max_epochs: None,
            adam: AdamConfig::default(),
            freeze: Freeze::None,
            stop_at_accuracy: None,
            accuracy_every: 1,
            dev_every: 0,
            resume: None,
            attach: None,
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn resolve_opt(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(p) = p {
        resolve(base, p);
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.resolve_paths(base_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.work_dir);
        let d = &mut self.data;
        resolve(base, &mut d.train_src);
        resolve(base, &mut d.train_tgt);
        for p in [
            &mut d.dev_src,
            &mut d.dev_tgt,
            &mut d.train_features,
            &mut d.train_manifest,
            &mut d.dev_features,
            &mut d.dev_manifest,
            &mut d.train_captions,
            &mut d.dev_captions,
            &mut self.filter.in_domain,
            &mut self.filter.in_domain_src,
            &mut self.train.resume,
        ] {
            resolve_opt(base, p);
        }
    }

    /// Seeds of the models `train` produces.
    pub fn seeds(&self) -> Vec<u64> {
        if self.train.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.train.seeds.clone()
        }
    }

    /// Fusion mode of the trained model, after any attachment.
    pub fn effective_fusion(&self) -> Fusion {
        self.train.attach.as_ref().map_or(self.model.fusion, |a| a.fusion)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CliError::Config(m));
        self.model.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.train.adam.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let d = &self.data;
        let mut inputs = vec![&d.train_src, &d.train_tgt];
        inputs.extend(
            [
                &d.dev_src,
                &d.dev_tgt,
                &d.train_features,
                &d.train_manifest,
                &d.dev_features,
                &d.dev_manifest,
                &d.train_captions,
                &d.dev_captions,
                &self.filter.in_domain,
                &self.filter.in_domain_src,
                &self.train.resume,
            ]
            .into_iter()
            .flatten(),
        );
        for p in inputs {
            if !p.is_file() {
                return fail(format!("input file {} does not exist", p.display()));
            }
        }
        if d.dev_src.is_some() != d.dev_tgt.is_some() {
            return fail("dev_src and dev_tgt must be given together".into());
        }
        if d.train_features.is_some() != d.train_manifest.is_some() {
            return fail("train_features and train_manifest must be given together".into());
        }
        if d.dev_features.is_some() != d.dev_manifest.is_some() {
            return fail("dev_features and dev_manifest must be given together".into());
        }
        if d.dev_captions.is_some() && d.dev_src.is_none() {
            return fail("dev_captions given without dev_src".into());
        }
        if self.tags.domain.is_some() && self.tags.target_lang.is_none() {
            return fail("tags.domain needs tags.target_lang".into());
        }
        match self.filter.method {
            FilterMethod::None => {}
            FilterMethod::SubsH | FilterMethod::SubsLm => match self.filter.top_k {
                Some(0) | None => return fail(format!("filter method {:?} needs top_k >= 1", self.filter.method)),
                Some(_) => {}
            },
        }
        if self.filter.method == FilterMethod::SubsLm {
            if self.filter.in_domain.is_none() {
                return fail("filter method subs_lm needs filter.in_domain".into());
            }
            if self.filter.lm_order == 0 || !(self.filter.lm_k > 0.0) {
                return fail("filter.lm_order must be >= 1 and filter.lm_k > 0".into());
            }
        }
        if self.train.max_steps == 0 {
            return fail("train.max_steps must be at least 1".into());
        }
        let seeds = self.seeds();
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != seeds.len() {
            return fail("train.seeds contains duplicates".into());
        }
        if let Some(a) = &self.train.attach {
            if self.train.resume.is_none() {
                return fail("train.attach needs train.resume".into());
            }
            if a.fusion == Fusion::None {
                return fail("train.attach.fusion must not be none".into());
            }
            if !a.gate_bias.is_finite() {
                return fail("train.attach.gate_bias must be finite".into());
            }
        }
        if let Some(acc) = self.train.stop_at_accuracy {
            if !(0.0..=1.0).contains(&acc) {
                return fail(format!("train.stop_at_accuracy {acc} outside [0, 1]"));
            }
        }
        if self.effective_fusion().needs_visual() && d.train_features.is_none() && self.train.freeze != Freeze::All {
            return fail(format!("fusion {:?} needs train_features", self.effective_fusion()));
        }
        if self.decode.width == 0 || self.decode.max_len == 0 {
            return fail("decode.width and decode.max_len must be at least 1".into());
        }
        Ok(())
    }
}
