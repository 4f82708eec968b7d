//! The pipeline stages. Each reads the previous stage's files from the
//! work directory and writes its own, so any stage can be rerun alone.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use mmtlab_core::bpe::{self, BpeModel};
use mmtlab_core::checkpoint::write_atomic;
use mmtlab_core::corpus::{
    self, build_whitelist, preprocess_bytes, select_top_k, subs_h_filter, subs_lm_filter, write_scores, CharLm,
    FilterReport, RawPair, ScoredPair,
};
use mmtlab_core::decode::{self, translate_corpus, BeamConfig, VisualSource};
use mmtlab_core::fusion::FeatureTable;
use mmtlab_core::metrics;
use mmtlab_core::model::{self, source_ids, Example, TrainLogRecord, TrainOptions};
use mmtlab_core::vocab::Vocab;
use mmtlab_core::{Checkpoint, Transformer, VisualFeature};

use crate::config::{ExperimentConfig, FilterMethod};
use crate::error::{CliError, Result};

/// File names inside the work directory.
#[derive(Clone, Debug)]
pub struct WorkDir(pub PathBuf);

impl WorkDir {
    pub fn file(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }
    pub fn prep(&self, split: &str, side: &str) -> PathBuf {
        self.file(&format!("prep.{split}.{side}"))
    }
    pub fn filtered(&self, side: &str) -> PathBuf {
        self.file(&format!("filtered.train.{side}"))
    }
    pub fn bpe_model(&self) -> PathBuf {
        self.file("bpe.model")
    }
    pub fn segmented(&self, split: &str, side: &str) -> PathBuf {
        self.file(&format!("bpe.{split}.{side}"))
    }
    pub fn checkpoint(&self, seed: u64) -> PathBuf {
        self.file(&format!("model.seed{seed}.ckpt"))
    }
    pub fn train_log(&self, seed: u64) -> PathBuf {
        self.file(&format!("train_log.seed{seed}.jsonl"))
    }
    pub fn hypotheses(&self, blind: bool) -> PathBuf {
        self.file(if blind { "hyp.dev.blind.txt" } else { "hyp.dev.txt" })
    }
}

fn work_dir(cfg: &ExperimentConfig) -> Result<WorkDir> {
    std::fs::create_dir_all(&cfg.work_dir).map_err(|e| CliError::io(&cfg.work_dir, e))?;
    Ok(WorkDir(cfg.work_dir.clone()))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

fn raw_lines(bytes: &[u8]) -> Vec<&[u8]> {
    let mut lines: Vec<&[u8]> = bytes.split(|&b| b == b'\n').map(|l| l.strip_suffix(b"\r").unwrap_or(l)).collect();
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        lines.pop();
    }
    lines
}

pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let bytes = read_bytes(path)?;
    raw_lines(&bytes)
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            String::from_utf8(l.to_vec()).map_err(|_| {
                CliError::Core(mmtlab_core::Error::Encoding {
                    line: i + 1,
                    msg: format!("invalid UTF-8 in {}", path.display()),
                })
            })
        })
        .collect()
}

pub fn write_lines<S: AsRef<str>>(path: &Path, lines: &[S]) -> Result<()> {
    let mut text = String::new();
    for l in lines {
        text.push_str(l.as_ref());
        text.push('\n');
    }
    Ok(write_atomic(path, text.as_bytes())?)
}

fn same_length(a: &Path, na: usize, b: &Path, nb: usize) -> Result<()> {
    if na != nb {
        return Err(CliError::Input(format!(
            "{} has {na} lines but {} has {nb}",
            a.display(),
            b.display()
        )));
    }
    Ok(())
}

fn tokens(line: &str) -> Vec<&str> {
    line.split_whitespace().collect()
}

/// Per-line features from a feature file and its manifest.
pub fn load_features(features: &Path, manifest: &Path) -> Result<Vec<Option<VisualFeature>>> {
    let table = FeatureTable::read_from(BufReader::new(File::open(features).map_err(|e| CliError::io(features, e))?))?;
    let m = File::open(manifest).map_err(|e| CliError::io(manifest, e))?;
    Ok(table.align(BufReader::new(m))?)
}

// ---- preprocess --------------------------------------------------------

fn preprocess_file(path: &Path) -> Result<Vec<Vec<String>>> {
    let bytes = read_bytes(path)?;
    raw_lines(&bytes)
        .into_iter()
        .enumerate()
        .map(|(i, l)| preprocess_bytes(l, i + 1).map_err(CliError::from))
        .collect()
}

fn preprocess_sources(cfg: &ExperimentConfig, src: &Path, captions: Option<&Path>) -> Result<Vec<String>> {
    let mut lines = preprocess_file(src)?;
    if let Some(cap_path) = captions {
        let caps = read_lines(cap_path)?;
        same_length(src, lines.len(), cap_path, caps.len())?;
        for (line, cap) in lines.iter_mut().zip(&caps) {
            let extra: Vec<Vec<String>> = cap
                .split("|||")
                .map(corpus::preprocess)
                .filter(|c| !c.is_empty())
                .collect();
            *line = corpus::concat_captions(line, &extra);
        }
    }
    if let Some(lang) = cfg.tags.target_lang {
        let domain = cfg.tags.domain.unwrap_or(cfg.data.origin.domain());
        for line in &mut lines {
            *line = corpus::tag(line, lang, domain);
        }
    }
    Ok(lines.iter().map(|t| t.join(" ")).collect())
}

/// Cleans and tokenizes the raw corpora, adding tags and captions.
pub fn preprocess(cfg: &ExperimentConfig) -> Result<()> {
    let wd = work_dir(cfg)?;
    let d = &cfg.data;
    let src = preprocess_sources(cfg, &d.train_src, d.train_captions.as_deref())?;
    let tgt: Vec<String> = preprocess_file(&d.train_tgt)?.iter().map(|t| t.join(" ")).collect();
    same_length(&d.train_src, src.len(), &d.train_tgt, tgt.len())?;
    if let Some(m) = &d.train_manifest {
        let manifest = read_lines(m)?;
        same_length(&d.train_src, src.len(), m, manifest.len())?;
        write_lines(&wd.prep("train", "manifest"), &manifest)?;
    }
    write_lines(&wd.prep("train", "src"), &src)?;
    write_lines(&wd.prep("train", "tgt"), &tgt)?;
    if let (Some(ds), Some(dt)) = (&d.dev_src, &d.dev_tgt) {
        let src = preprocess_sources(cfg, ds, d.dev_captions.as_deref())?;
        let tgt: Vec<String> = preprocess_file(dt)?.iter().map(|t| t.join(" ")).collect();
        same_length(ds, src.len(), dt, tgt.len())?;
        write_lines(&wd.prep("dev", "src"), &src)?;
        write_lines(&wd.prep("dev", "tgt"), &tgt)?;
    }
    log::info!("preprocessed {} training pairs", src.len());
    Ok(())
}

// ---- filter ------------------------------------------------------------

/// Applies the configured corpus filter. Kept pairs stay in corpus order.
pub fn filter(cfg: &ExperimentConfig) -> Result<FilterReport> {
    let wd = work_dir(cfg)?;
    let (sp, tp) = (wd.prep("train", "src"), wd.prep("train", "tgt"));
    let src = read_lines(&sp)?;
    let tgt = read_lines(&tp)?;
    same_length(&sp, src.len(), &tp, tgt.len())?;
    let mut report = FilterReport {
        input: src.len(),
        ..FilterReport::default()
    };
    let mut pairs = Vec::with_capacity(src.len());
    for (i, (s, t)) in src.iter().zip(&tgt).enumerate() {
        match RawPair::new(i as u64, s.as_str(), t.as_str(), cfg.data.origin) {
            Ok(p) => pairs.push(p),
            Err(_) => report.length += 1,
        }
    }
    let (scored, top_k): (Vec<ScoredPair>, Option<usize>) = match cfg.filter.method {
        FilterMethod::None => (pairs.into_iter().map(|pair| ScoredPair { pair, score: 0.0 }).collect(), None),
        FilterMethod::SubsH => (subs_h_filter(&pairs), cfg.filter.top_k),
        FilterMethod::SubsLm => {
            let in_domain_path = cfg.filter.in_domain.as_ref().expect("validated");
            let in_domain: Vec<String> = preprocess_file(in_domain_path)?.iter().map(|t| t.join(" ")).collect();
            let lm = CharLm::train(&in_domain, cfg.filter.lm_order, cfg.filter.lm_k)?;
            let mut whitelist = build_whitelist(&in_domain);
            if let Some(p) = &cfg.filter.in_domain_src {
                let lines: Vec<String> = preprocess_file(p)?.iter().map(|t| t.join(" ")).collect();
                whitelist.extend(build_whitelist(&lines));
            }
            let (scored, r) = subs_lm_filter(&pairs, &lm, &whitelist, &cfg.filter.lm)?;
            report.length += r.length;
            report.noise = r.noise;
            report.whitelist = r.whitelist;
            report.duplicate = r.duplicate;
            (scored, cfg.filter.top_k)
        }
    };
    let mut scores = Vec::new();
    write_scores(&scored, &mut scores)?;
    let mut kept: Vec<RawPair> = match top_k {
        Some(k) => select_top_k(scored, k)?,
        None => scored.into_iter().map(|s| s.pair).collect(),
    };
    kept.sort_by_key(|p| p.id);
    report.kept = kept.len();

    let manifest_path = wd.prep("train", "manifest");
    if manifest_path.is_file() {
        let manifest = read_lines(&manifest_path)?;
        let chosen: Vec<&String> = kept.iter().map(|p| &manifest[p.id as usize]).collect();
        write_lines(&wd.filtered("manifest"), &chosen)?;
    }
    write_lines(&wd.filtered("src"), &kept.iter().map(|p| p.source.as_str()).collect::<Vec<_>>())?;
    write_lines(&wd.filtered("tgt"), &kept.iter().map(|p| p.target.as_str()).collect::<Vec<_>>())?;
    write_atomic(&wd.file("scores.tsv"), &scores)?;
    write_atomic(&wd.file("filter_report.txt"), format!("{report}kept\t{}\n", report.kept).as_bytes())?;
    log::info!("filter kept {} of {} pairs", report.kept, report.input);
    Ok(report)
}

// ---- subword segmentation ---------------------------------------------

/// Learns the shared merge table from the filtered training corpus.
pub fn bpe_learn(cfg: &ExperimentConfig) -> Result<BpeModel> {
    let wd = work_dir(cfg)?;
    let per_lang = [
        bpe::word_counts(&read_lines(&wd.filtered("src"))?),
        bpe::word_counts(&read_lines(&wd.filtered("tgt"))?),
    ];
    let counts = if cfg.bpe.balanced {
        bpe::balance_counts(&per_lang)?.combined()
    } else {
        let mut all: BTreeMap<String, f64> = BTreeMap::new();
        for (w, c) in per_lang.iter().flatten() {
            *all.entry(w.clone()).or_insert(0.0) += c;
        }
        all
    };
    let model = BpeModel::learn(&counts, cfg.bpe.merges)?;
    write_atomic(&wd.bpe_model(), model.to_text().as_bytes())?;
    log::info!("learned {} merges", model.merges().len());
    Ok(model)
}

pub fn load_bpe(path: &Path) -> Result<BpeModel> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(BpeModel::from_text(&text)?)
}

pub fn segment_file(model: &BpeModel, input: &Path, output: &Path) -> Result<()> {
    let lines: Vec<String> = read_lines(input)?.iter().map(|l| model.apply(&tokens(l)).join(" ")).collect();
    write_lines(output, &lines)
}

/// Segments the training corpus and the dev sources.
pub fn bpe_apply(cfg: &ExperimentConfig) -> Result<()> {
    let wd = work_dir(cfg)?;
    let model = load_bpe(&wd.bpe_model())?;
    segment_file(&model, &wd.filtered("src"), &wd.segmented("train", "src"))?;
    segment_file(&model, &wd.filtered("tgt"), &wd.segmented("train", "tgt"))?;
    if wd.prep("dev", "src").is_file() {
        segment_file(&model, &wd.prep("dev", "src"), &wd.segmented("dev", "src"))?;
    }
    Ok(())
}

/// Rejoins `@@` units into words.
pub fn desegment(line: &str) -> Result<String> {
    Ok(bpe::detokenize(&tokens(line))?.join(" "))
}

// ---- training ----------------------------------------------------------

fn encode_corpus(vocab: &Vocab, src: &[String], tgt: &[String], strict: bool) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    let mut out = Vec::with_capacity(src.len());
    for (i, (s, t)) in src.iter().zip(tgt).enumerate() {
        if strict {
            if let Some(tok) = tokens(s).into_iter().chain(tokens(t)).find(|w| vocab.id(w).is_none()) {
                return Err(mmtlab_core::Error::Vocabulary(format!(
                    "training line {}: token `{tok}` is not in the checkpoint vocabulary",
                    i + 1
                ))
                .into());
            }
        }
        out.push((source_ids(vocab, &tokens(s)), vocab.encode(&tokens(t))));
    }
    Ok(out)
}

fn dev_sources(model: &Transformer, wd: &WorkDir) -> Result<Option<(Vec<Vec<usize>>, Vec<String>)>> {
    let (sp, rp) = (wd.segmented("dev", "src"), wd.prep("dev", "tgt"));
    if !sp.is_file() || !rp.is_file() {
        return Ok(None);
    }
    let src: Vec<Vec<usize>> = read_lines(&sp)?.iter().map(|l| source_ids(model.vocab(), &tokens(l))).collect();
    Ok(Some((src, read_lines(&rp)?)))
}

fn dev_visual(cfg: &ExperimentConfig, fusion_needs: bool, model: &Transformer) -> Result<VisualSource> {
    if !fusion_needs {
        return Ok(VisualSource::None);
    }
    match (&cfg.data.dev_features, &cfg.data.dev_manifest) {
        (Some(f), Some(m)) => Ok(VisualSource::PerSentence(load_features(f, m)?)),
        _ => Ok(decode::blind(model)?),
    }
}

/// Detokenized output lines for decoded id sequences.
pub fn render(model: &Transformer, hyps: &[decode::Hypothesis]) -> Result<Vec<String>> {
    hyps.iter()
        .map(|h| Ok(bpe::detokenize(&model.vocab().decode(&h.tokens))?.join(" ")))
        .collect()
}

/// The segmented training corpus as model inputs. With `strict`, a token
/// missing from `vocab` is an error instead of mapping to `<unk>`.
pub fn training_examples(cfg: &ExperimentConfig, vocab: &Vocab, max_len: usize, strict: bool) -> Result<Vec<Example>> {
    let wd = WorkDir(cfg.work_dir.clone());
    let (sp, tp) = (wd.segmented("train", "src"), wd.segmented("train", "tgt"));
    let src = read_lines(&sp)?;
    let tgt = read_lines(&tp)?;
    same_length(&sp, src.len(), &tp, tgt.len())?;
    if src.is_empty() {
        return Err(mmtlab_core::Error::Corpus("training corpus is empty".into()).into());
    }
    let ids = encode_corpus(vocab, &src, &tgt, strict)?;
    if let Some((i, _)) = ids.iter().enumerate().find(|(_, (s, t))| s.len() > max_len || t.len() + 1 > max_len) {
        return Err(CliError::Input(format!("training line {} is longer than max_len {max_len}", i + 1)));
    }
    let visual: Vec<Option<VisualFeature>> = match &cfg.data.train_features {
        Some(f) => {
            let feats = load_features(f, &wd.filtered("manifest"))?;
            same_length(&sp, src.len(), &wd.filtered("manifest"), feats.len())?;
            feats
        }
        None => vec![None; src.len()],
    };
    Ok(ids
        .into_iter()
        .zip(visual)
        .map(|((src, tgt), visual)| Example { src, tgt, visual })
        .collect())
}

/// Trains one model per configured seed and returns the checkpoint paths.
pub fn train(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let wd = work_dir(cfg)?;
    let resumed = match &cfg.train.resume {
        Some(p) => Some(Checkpoint::load(p)?),
        None => None,
    };
    let vocab = match &resumed {
        Some(ck) => ck.vocab.clone(),
        None => {
            let mut lines = read_lines(&wd.segmented("train", "src"))?;
            lines.extend(read_lines(&wd.segmented("train", "tgt"))?);
            Vocab::build(lines.iter().flat_map(|l| l.split_whitespace()))
        }
    };
    let max_len = resumed.as_ref().map_or(cfg.model.max_len, |ck| ck.config.max_len);
    let examples = training_examples(cfg, &vocab, max_len, resumed.is_some())?;

    let mut paths = Vec::new();
    for seed in cfg.seeds() {
        let (mut m, start) = match &resumed {
            Some(ck) => {
                let mut m = Transformer::from_checkpoint(ck)?;
                if let Some(a) = &cfg.train.attach {
                    m.attach_fusion(a.fusion, a.init.into(), a.gate_bias, seed)?;
                }
                (m, ck.train_step)
            }
            None => (Transformer::new(cfg.model.clone(), vocab.clone(), seed)?, 0),
        };
        let needs_visual = m.config().fusion.needs_visual();
        if needs_visual && cfg.data.train_features.is_none() {
            return Err(mmtlab_core::Error::Visual(format!(
                "fusion {:?} needs train_features",
                m.config().fusion
            ))
            .into());
        }
        let opts = TrainOptions {
            max_steps: cfg.train.max_steps,
            max_epochs: cfg.train.max_epochs,
            seed,
            adam: cfg.train.adam.clone(),
            freeze: cfg.train.freeze,
            stop_at_accuracy: cfg.train.stop_at_accuracy,
            accuracy_every: cfg.train.accuracy_every,
            dev_every: cfg.train.dev_every,
        };
        let log_path = wd.train_log(seed);
        let tmp_log = wd.file(&format!(".train_log.seed{seed}.jsonl.tmp"));
        let mut log_file = BufWriter::new(File::create(&tmp_log).map_err(|e| CliError::io(&tmp_log, e))?);
        let dev = if cfg.train.dev_every > 0 { dev_sources(&m, &wd)? } else { None };
        let beam = cfg.decode.clone();
        let mut dev_fn = |model: &Transformer| -> mmtlab_core::Result<f64> {
            let (src, refs) = dev.as_ref().expect("only installed with dev data");
            let visual = dev_visual(cfg, needs_visual, model).map_err(|e| mmtlab_core::Error::Decode(e.to_string()))?;
            let hyps = translate_corpus(&[model], src, &visual, &beam)?;
            let lines = render(model, &hyps).map_err(|e| mmtlab_core::Error::Decode(e.to_string()))?;
            metrics::bleu(&lines, refs, false)
        };
        let report = model::train(
            &mut m,
            &examples,
            &opts,
            start,
            |r: &TrainLogRecord| {
                serde_json::to_writer(&mut log_file, r)?;
                log_file.write_all(b"\n")?;
                Ok(())
            },
            if dev.is_some() { Some(&mut dev_fn) } else { None },
        )?;
        log_file.flush().map_err(|e| CliError::io(&tmp_log, e))?;
        drop(log_file);
        std::fs::rename(&tmp_log, &log_path).map_err(|e| CliError::io(&log_path, e))?;
        let path = wd.checkpoint(seed);
        m.to_checkpoint(report.step).save(&path)?;
        log::info!(
            "seed {seed}: {} steps, {} epochs, final loss {:.4}{}",
            report.step,
            report.epochs,
            report.losses.last().copied().unwrap_or(f64::NAN),
            report.final_accuracy.map_or(String::new(), |a| format!(", accuracy {a:.4}"))
        );
        paths.push(path);
    }
    Ok(paths)
}

// ---- translation -------------------------------------------------------

#[derive(Clone, Debug, Default)]
pub struct TranslateOptions {
    /// Checkpoints to ensemble; empty means the first configured seed.
    pub models: Vec<PathBuf>,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub features: Option<(PathBuf, PathBuf)>,
    pub blind: bool,
}

/// Translates segmented source lines, one detokenized line per input.
pub fn translate_lines(
    models: &[Transformer],
    lines: &[String],
    visual: &VisualSource,
    beam: &BeamConfig,
) -> Result<Vec<String>> {
    let refs: Vec<&Transformer> = models.iter().collect();
    let vocab = models[0].vocab();
    let src: Vec<Vec<usize>> = lines.iter().map(|l| source_ids(vocab, &tokens(l))).collect();
    let hyps = translate_corpus(&refs, &src, visual, beam)?;
    render(&models[0], &hyps)
}

pub fn translate(cfg: &ExperimentConfig, opts: &TranslateOptions) -> Result<PathBuf> {
    let wd = WorkDir(cfg.work_dir.clone());
    let model_paths = if opts.models.is_empty() {
        vec![wd.checkpoint(cfg.seeds()[0])]
    } else {
        opts.models.clone()
    };
    let input = opts.input.clone().unwrap_or_else(|| wd.segmented("dev", "src"));
    let output = match (&opts.input, &opts.output) {
        (_, Some(o)) => o.clone(),
        (None, None) => wd.hypotheses(opts.blind),
        (Some(_), None) => return Err(CliError::Config("--input needs --output".into())),
    };
    let models: Vec<Transformer> = model_paths
        .iter()
        .map(|p| Transformer::from_checkpoint(&Checkpoint::load(p)?).map_err(CliError::from))
        .collect::<Result<_>>()?;
    let refs: Vec<&Transformer> = models.iter().collect();
    decode::check_ensemble(&refs)?;
    let lines = read_lines(&input)?;
    let fusion = models[0].config().fusion;
    let visual = if !fusion.needs_visual() {
        VisualSource::None
    } else if opts.blind {
        decode::blind(&models[0])?
    } else {
        let (f, m) = match (&opts.features, &opts.input) {
            (Some((f, m)), _) => (f.clone(), m.clone()),
            (None, None) => match (&cfg.data.dev_features, &cfg.data.dev_manifest) {
                (Some(f), Some(m)) => (f.clone(), m.clone()),
                _ => {
                    return Err(mmtlab_core::Error::Visual(format!(
                        "fusion {fusion:?} needs a feature file (or --blind)"
                    ))
                    .into())
                }
            },
            (None, Some(_)) => {
                return Err(mmtlab_core::Error::Visual(format!(
                    "fusion {fusion:?} needs --features and --manifest (or --blind)"
                ))
                .into())
            }
        };
        let feats = load_features(&f, &m)?;
        same_length(&input, lines.len(), &m, feats.len())?;
        VisualSource::PerSentence(feats)
    };
    let out = translate_lines(&models, &lines, &visual, &cfg.decode)?;
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    write_lines(&output, &out)?;
    log::info!("translated {} sentences with {} model(s)", out.len(), models.len());
    Ok(output)
}

// ---- evaluation --------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scores {
    pub bleu: f64,
    pub chrf: f64,
}

pub fn evaluate(hyp: &Path, reference: &Path, smooth: bool) -> Result<Scores> {
    let h = read_lines(hyp)?;
    let r = read_lines(reference)?;
    same_length(hyp, h.len(), reference, r.len())?;
    Ok(Scores {
        bleu: metrics::bleu(&h, &r, smooth)?,
        chrf: metrics::chrf(&h, &r, 1.0)?,
    })
}

impl std::fmt::Display for Scores {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "BLEU = {:.2}", self.bleu)?;
        writeln!(f, "chrF1 = {:.2}", self.chrf)
    }
}

/// preprocess → filter → bpe-learn → bpe-apply → train, then translates
/// the dev set when there is one.
pub fn run_all(cfg: &ExperimentConfig) -> Result<Option<PathBuf>> {
    preprocess(cfg)?;
    filter(cfg)?;
    bpe_learn(cfg)?;
    bpe_apply(cfg)?;
    train(cfg)?;
    if cfg.data.dev_src.is_some() {
        let blind = cfg.effective_fusion().needs_visual() && cfg.data.dev_features.is_none();
        return Ok(Some(translate(
            cfg,
            &TranslateOptions {
                blind,
                ..TranslateOptions::default()
            },
        )?));
    }
    Ok(None)
}
