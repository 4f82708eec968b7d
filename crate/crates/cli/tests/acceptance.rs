//! Acceptance harness. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.
//!
//! Tolerances are fixed here; nothing is read from the environment.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use mmtlab_cli::commands::{self, translate_lines, WorkDir};
use mmtlab_cli::ExperimentConfig;
use mmtlab_core::bpe::{balance_counts, detokenize, word_counts, BpeModel};
use mmtlab_core::corpus::{
    build_whitelist, select_top_k, subs_h_score, subs_lm_filter, CharLm, LmFilterConfig, Origin, RawPair, ScoredPair,
};
use mmtlab_core::decode::{blind, VisualSource};
use mmtlab_core::fusion::GateInit;
use mmtlab_core::metrics::{bleu, chrf};
use mmtlab_core::model::{accuracy, Batch, Dropout};
use mmtlab_core::tensor::grad_check_with;
use mmtlab_core::vocab::EOS_ID;
use mmtlab_core::{Checkpoint, Fusion, ModelConfig, Transformer, VisualFeature, Vocab};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRAD_TOL: f64 = 1e-4;
const GRAD_STEP: f64 = 1e-5;
const GRAD_BUDGET: Duration = Duration::from_secs(5 * 60);
const OVERFIT_ACCURACY: f64 = 0.99;
const OVERFIT_BLEU: f64 = 95.0;
const OVERFIT_STEPS: u64 = 2000;
const OVERFIT_BUDGET: Duration = Duration::from_secs(10 * 60);
const FILTER_SEQUENCES: usize = 10_000;
const BPE_LINES: usize = 10_000;
const BALANCE_TOL: f64 = 1e-6;
const METRIC_TOL: f64 = 1e-4;
const GATE_BIAS: f64 = 20.0;
const DETERMINISM_STEPS: u64 = 200;

type Check = std::result::Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/toy")
}

fn recipe(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("recipes").join(name)
}

fn lines(path: &Path) -> Vec<String> {
    commands::read_lines(path).unwrap()
}

// ---- 1. gradients ------------------------------------------------------

fn gradient_fidelity() -> Check {
    let start = Instant::now();
    let words: Vec<String> = (0..8).map(|i| format!("w{i}")).collect();
    let vocab = Vocab::build(words.iter().map(String::as_str));
    let first = vocab.len() - words.len();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let feature = |rng: &mut ChaCha8Rng| VisualFeature::new((0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let ids = |rng: &mut ChaCha8Rng, n: usize| -> Vec<usize> { (0..n).map(|_| rng.gen_range(first..vocab.len())).collect() };
    let src = |rng: &mut ChaCha8Rng, n: usize| {
        let mut s = ids(rng, n);
        s.push(EOS_ID);
        s
    };
    let pairs = vec![
        (src(&mut rng, 4), ids(&mut rng, 3), Some(feature(&mut rng))),
        (src(&mut rng, 2), ids(&mut rng, 5), Some(feature(&mut rng))),
    ];
    let batch = Batch::from_pairs(&pairs);
    let mut report = Vec::new();
    let mut worst: f64 = 0.0;
    for fusion in [Fusion::None, Fusion::ImgW, Fusion::EncGate, Fusion::DecGate, Fusion::EncDecGate, Fusion::TrgMul] {
        let cfg = ModelConfig {
            n_layers: 2,
            d_model: 16,
            n_heads: 2,
            d_ff: 32,
            dropout: 0.0,
            visual_dim: 8,
            fusion,
            max_len: 16,
            ..ModelConfig::default()
        };
        let mut m = Transformer::new(cfg, vocab.clone(), 7).map_err(|e| e.to_string())?;
        let r = grad_check_with(
            &mut m,
            Transformer::params_mut,
            |g, m| m.batch_loss(g, &batch, &mut Dropout::eval()),
            GRAD_STEP,
            GRAD_TOL,
        )
        .map_err(|e| e.to_string())?;
        worst = worst.max(r.max_rel_error);
        report.push(format!("{fusion:?} {:.1e}", r.max_rel_error));
    }
    let elapsed = start.elapsed();
    ensure(
        worst < GRAD_TOL && elapsed < GRAD_BUDGET,
        format!("max rel error {worst:.2e} < {GRAD_TOL:e} [{}], {:.1}s", report.join(", "), elapsed.as_secs_f64()),
    )
}

// ---- shared training runs ----------------------------------------------

struct Trained {
    _dir: tempfile::TempDir,
    cfg: ExperimentConfig,
    wd: WorkDir,
    checkpoint: PathBuf,
    elapsed: Duration,
}

fn train_recipe(name: &str) -> Result<Trained, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = ExperimentConfig::load(&recipe(name)).map_err(|e| e.line())?;
    cfg.work_dir = dir.path().to_path_buf();
    let start = Instant::now();
    commands::preprocess(&cfg).map_err(|e| e.line())?;
    commands::filter(&cfg).map_err(|e| e.line())?;
    commands::bpe_learn(&cfg).map_err(|e| e.line())?;
    commands::bpe_apply(&cfg).map_err(|e| e.line())?;
    let checkpoint = commands::train(&cfg).map_err(|e| e.line())?.remove(0);
    Ok(Trained {
        wd: WorkDir(cfg.work_dir.clone()),
        _dir: dir,
        cfg,
        checkpoint,
        elapsed: start.elapsed(),
    })
}

fn load_model(path: &Path) -> Transformer {
    Transformer::from_checkpoint(&Checkpoint::load(path).unwrap()).unwrap()
}

fn dev_visual(cfg: &ExperimentConfig) -> VisualSource {
    match (&cfg.data.dev_features, &cfg.data.dev_manifest) {
        (Some(f), Some(m)) => VisualSource::PerSentence(commands::load_features(f, m).unwrap()),
        _ => VisualSource::None,
    }
}

// ---- 2. overfitting ----------------------------------------------------

fn overfit_one(t: &Trained) -> Check {
    let m = load_model(&t.checkpoint);
    let ck = Checkpoint::load(&t.checkpoint).unwrap();
    let examples = commands::training_examples(&t.cfg, m.vocab(), m.config().max_len, true).map_err(|e| e.line())?;
    let acc = accuracy(&m, &examples).map_err(|e| e.to_string())?;
    let visual = match &t.cfg.data.train_features {
        Some(f) => VisualSource::PerSentence(commands::load_features(f, &t.wd.filtered("manifest")).unwrap()),
        None => VisualSource::None,
    };
    let hyps = translate_lines(&[m], &lines(&t.wd.segmented("train", "src")), &visual, &t.cfg.decode).map_err(|e| e.line())?;
    let score = bleu(&hyps, &lines(&t.wd.filtered("tgt")), false).map_err(|e| e.to_string())?;
    let detail = format!(
        "{:?}: accuracy {acc:.4}, train BLEU {score:.2}, {} steps, {:.1}s",
        t.cfg.model.fusion,
        ck.train_step,
        t.elapsed.as_secs_f64()
    );
    ensure(
        acc >= OVERFIT_ACCURACY && score >= OVERFIT_BLEU && ck.train_step <= OVERFIT_STEPS && t.elapsed < OVERFIT_BUDGET,
        detail,
    )
}

fn overfit(text: &Result<Trained, String>, img: &Result<Trained, String>) -> Check {
    let a = overfit_one(text.as_ref().map_err(Clone::clone)?);
    let b = overfit_one(img.as_ref().map_err(Clone::clone)?);
    let detail = [&a, &b].iter().map(|r| r.as_ref().unwrap_or_else(|e| e).clone()).collect::<Vec<_>>().join("; ");
    ensure(a.is_ok() && b.is_ok(), detail)
}

// ---- 3. ensembles ------------------------------------------------------

fn ensemble_identity(text: &Result<Trained, String>) -> Check {
    let t = text.as_ref().map_err(Clone::clone)?;
    let dev = lines(&t.wd.segmented("dev", "src"));
    let m = load_model(&t.checkpoint);
    let single = translate_lines(std::slice::from_ref(&m), &dev, &VisualSource::None, &t.cfg.decode).map_err(|e| e.line())?;
    let copies: Vec<Transformer> = (0..3).map(|_| load_model(&t.checkpoint)).collect();
    let triple = translate_lines(&copies, &dev, &VisualSource::None, &t.cfg.decode).map_err(|e| e.line())?;
    let differing = single.iter().zip(&triple).filter(|(a, b)| a != b).count();
    ensure(
        dev.len() == 100 && single.join("\n").as_bytes() == triple.join("\n").as_bytes(),
        format!("{differing} of {} dev sentences differ", dev.len()),
    )
}

// ---- 4. blinding -------------------------------------------------------

fn blinding(img: &Result<Trained, String>) -> Check {
    let t = img.as_ref().map_err(Clone::clone)?;
    let dev = lines(&t.wd.segmented("dev", "src"));
    let seen = dev_visual(&t.cfg);
    let diff = |m: &Transformer| -> Result<usize, String> {
        let a = translate_lines(std::slice::from_ref(m), &dev, &seen, &t.cfg.decode).map_err(|e| e.line())?;
        let b = translate_lines(std::slice::from_ref(m), &dev, &blind(m).unwrap(), &t.cfg.decode).map_err(|e| e.line())?;
        Ok(a.iter().zip(&b).filter(|(x, y)| x != y).count())
    };
    let trained = load_model(&t.checkpoint);
    let trained_diff = diff(&trained)?;
    let mut zeroed = trained;
    let id = zeroed.params().id("fusion.img_w.w").ok_or("no fusion.img_w.w parameter")?;
    zeroed.params_mut().value_mut(id).data_mut().fill(0.0);
    let zero_diff = diff(&zeroed)?;
    ensure(
        zero_diff == 0,
        format!(
            "zeroed projection: {zero_diff} of {n} differ; trained weights: {trained_diff} of {n} differ",
            n = dev.len()
        ),
    )
}

// ---- 5. filters --------------------------------------------------------

fn recount(src: &[&str], tgt: &[&str]) -> f64 {
    let count = |s: &[&str]| s.iter().filter(|t| matches!(**t, "." | "..." | "?" | "!")).count() as f64;
    let (a, b) = (count(src), count(tgt));
    -(a - b).abs() - (a - 1.0).max(0.0) - (b - 1.0).max(0.0)
}

fn random_line(rng: &mut ChaCha8Rng) -> String {
    let words = ["ein", "hund", "läuft", "der", "mann", ".", "?", "!!", "katze", "x7", "…", "<TO_DE>"];
    (0..rng.gen_range(1..9)).map(|_| *words.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

fn filter_oracles() -> Check {
    let marks = [".", "...", "?", "!", "..", ",", "hi", "ok", "?!", "a"];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut mismatches = 0;
    for _ in 0..FILTER_SEQUENCES {
        let seq = |rng: &mut ChaCha8Rng| -> Vec<&str> { (0..rng.gen_range(0..12)).map(|_| *marks.choose(rng).unwrap()).collect() };
        let (s, t) = (seq(&mut rng), seq(&mut rng));
        if subs_h_score(&s, &t) != recount(&s, &t) {
            mismatches += 1;
        }
    }

    let mut topk_bad = 0;
    for _ in 0..500 {
        let n = rng.gen_range(1..80);
        let all: Vec<ScoredPair> = (0..n)
            .map(|i| ScoredPair {
                pair: RawPair::new(i as u64 * 13 % 211, "a", "b", Origin::Subtitles).unwrap(),
                score: rng.gen_range(-6i32..6) as f64 / 2.0,
            })
            .collect();
        let k = rng.gen_range(1..=n);
        let mut oracle = all.clone();
        oracle.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap().then(a.pair.id.cmp(&b.pair.id)));
        let want: Vec<u64> = oracle[..k].iter().map(|s| s.pair.id).collect();
        let got: Vec<u64> = select_top_k(all, k).unwrap().iter().map(|p| p.id).collect();
        topk_bad += usize::from(got != want);
    }

    let mut idem_bad = 0;
    let mut idem_runs = 0;
    for _ in 0..100 {
        let in_domain: Vec<String> = (0..20).map(|_| random_line(&mut rng)).collect();
        let lm = CharLm::train(&in_domain, 4, 0.01).unwrap();
        let wl = build_whitelist(&in_domain);
        let pairs: Vec<RawPair> = (0..60)
            .map(|i| RawPair::new(i, random_line(&mut rng), random_line(&mut rng), Origin::Subtitles).unwrap())
            .collect();
        let cfg = LmFilterConfig::default();
        if let Ok((first, _)) = subs_lm_filter(&pairs, &lm, &wl, &cfg) {
            idem_runs += 1;
            let kept: Vec<RawPair> = first.iter().map(|s| s.pair.clone()).collect();
            match subs_lm_filter(&kept, &lm, &wl, &cfg) {
                Ok((second, _)) if second == first => {}
                _ => idem_bad += 1,
            }
        }
    }
    ensure(
        mismatches == 0 && topk_bad == 0 && idem_bad == 0 && idem_runs > 0,
        format!(
            "subs_h recount mismatches {mismatches}/{FILTER_SEQUENCES}, top-k mismatches {topk_bad}/500, \
             non-idempotent {idem_bad}/{idem_runs}"
        ),
    )
}

// ---- 6. subword segmentation --------------------------------------------

fn brute_force_bpe(counts: &BTreeMap<String, f64>, target: usize) -> Vec<(String, String)> {
    let mut words: Vec<(Vec<String>, f64)> = Vec::new();
    for (w, &c) in counts {
        let mut pieces: Vec<String> = Vec::new();
        let mut piece = String::new();
        for ch in w.chars() {
            if ch == '-' {
                if !piece.is_empty() {
                    pieces.push(std::mem::take(&mut piece));
                }
                pieces.push("-".into());
            } else {
                piece.push(ch);
            }
        }
        if !piece.is_empty() {
            pieces.push(piece);
        }
        for p in pieces {
            let mut syms: Vec<String> = p.chars().map(String::from).collect();
            let last = syms.pop().unwrap();
            syms.push(last + "</w>");
            words.push((syms, c));
        }
    }
    let mut merges = Vec::new();
    while merges.len() < target {
        let mut freq: BTreeMap<(String, String), f64> = BTreeMap::new();
        for (syms, c) in &words {
            for w in syms.windows(2) {
                *freq.entry((w[0].clone(), w[1].clone())).or_insert(0.0) += c;
            }
        }
        let max = freq.values().copied().fold(f64::NEG_INFINITY, f64::max);
        if freq.is_empty() || max < 2.0 {
            break;
        }
        let best = freq.iter().find(|(_, &f)| f >= max * (1.0 - 1e-9)).map(|(k, _)| k.clone()).unwrap();
        for (syms, _) in words.iter_mut() {
            let mut out = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == best.0 && syms[i + 1] == best.1 {
                    out.push(format!("{}{}", best.0, best.1));
                    i += 2;
                } else {
                    out.push(syms[i].clone());
                    i += 1;
                }
            }
            *syms = out;
        }
        merges.push(best);
    }
    merges
}

fn random_lines(seed: u64, n: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alphabet: Vec<char> = "aabcdeeéiklmnorstuüß'".chars().collect();
    let word = |rng: &mut ChaCha8Rng| -> String {
        let mut w: String = (0..rng.gen_range(1..8)).map(|_| *alphabet.choose(rng).unwrap()).collect();
        if rng.gen_bool(0.15) {
            w.push('-');
            w.extend((0..rng.gen_range(1..5)).map(|_| *alphabet.choose(rng).unwrap()));
        }
        w
    };
    let lexicon: Vec<String> = (0..400).map(|_| word(&mut rng)).collect();
    (0..n)
        .map(|_| (0..rng.gen_range(1..15)).map(|_| lexicon.choose(&mut rng).unwrap().as_str()).collect::<Vec<_>>().join(" "))
        .collect()
}

fn crosses_hyphen(unit: &str) -> bool {
    let bare = unit.strip_suffix("@@").unwrap_or(unit);
    bare.contains('-') && bare != "-"
}

const FIFTY_WORDS: &str = "the man rides a bike down the street while another man walks \
    his dog near the river and the dog barks at the bikes on the street a woman \
    in a red dress watches the dogs and men from the window of her e-mail office \
    the children laugh and play";

fn bpe_checks() -> Check {
    let corpus = random_lines(5, BPE_LINES);
    let model = BpeModel::learn(&word_counts(&corpus[..2000]), 500).map_err(|e| e.to_string())?;
    let mut roundtrip_bad = 0;
    for line in &corpus {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if detokenize(&model.apply(&toks)).ok().as_deref() != Some(toks.iter().map(|t| t.to_string()).collect::<Vec<_>>().as_slice()) {
            roundtrip_bad += 1;
        }
    }

    let hyphen_lines = lines(&data_dir().join("hyphen.en"));
    let hyphen_model = BpeModel::learn(&word_counts(&hyphen_lines), 1000).map_err(|e| e.to_string())?;
    let bad_merges = hyphen_model.merges().iter().filter(|(a, b)| a.contains('-') || b.contains('-')).count();
    let bad_units: usize = hyphen_lines
        .iter()
        .map(|l| hyphen_model.apply(&l.split_whitespace().collect::<Vec<_>>()).iter().filter(|u| crosses_hyphen(u)).count())
        .sum();

    let en = word_counts(&random_lines(1, 600));
    let de = word_counts(&random_lines(2, 45));
    let totals = balance_counts(&[en, de]).map_err(|e| e.to_string())?.totals();
    let imbalance = (totals[0] - totals[1]).abs() / totals[0].max(totals[1]);

    let counts = word_counts(&[FIFTY_WORDS]);
    let oracle_bad = [0, 1, 5, 20, 200]
        .into_iter()
        .filter(|&n| BpeModel::learn(&counts, n).unwrap().merges() != brute_force_bpe(&counts, n).as_slice())
        .count();
    ensure(
        roundtrip_bad == 0 && bad_merges == 0 && bad_units == 0 && imbalance <= BALANCE_TOL && oracle_bad == 0,
        format!(
            "roundtrip failures {roundtrip_bad}/{BPE_LINES}, hyphen-crossing merges {bad_merges} ({} learned) and units {bad_units}, \
             balance rel diff {imbalance:.1e}, oracle mismatches {oracle_bad}/5 (50 words)",
            hyphen_model.merges().len()
        ),
    )
}

// ---- 7. metrics --------------------------------------------------------

const METRIC_PAIRS: [(&str, &str, f64, f64); 5] = [
    ("a man is riding a bicycle down the street .", "a man rides a bicycle down the street .", 58.1430736968, 73.8389212850),
    ("two dogs are playing in the snow .", "two dogs are playing in the deep snow .", 67.5291821813, 82.5314409076),
    ("ein mann fährt ein fahrrad .", "ein mann fährt ein fahrrad auf der straße .", 48.2356079769, 74.0661041396),
    ("The Girl in the RED dress smiles", "the girl in the red dress is smiling", 70.1396726800, 79.4367628256),
    (
        "children play football on the green grass near the lake",
        "children are playing football on green grass near a lake",
        0.0,
        63.0008104258,
    ),
];

fn metric_goldens() -> Check {
    let mut worst: f64 = 0.0;
    for (h, r, b, c) in METRIC_PAIRS {
        worst = worst.max((bleu(&[h], &[r], false).unwrap() - b).abs());
        worst = worst.max((chrf(&[h], &[r], 1.0).unwrap() - c).abs());
    }
    let refs: Vec<&str> = METRIC_PAIRS.iter().map(|p| p.1).collect();
    let (ib, ic) = (bleu(&refs, &refs, false).unwrap(), chrf(&refs, &refs, 1.0).unwrap());
    ensure(
        worst < METRIC_TOL && format!("{ib:.2}") == "100.00" && format!("{ic:.2}") == "100.00",
        format!("max abs deviation {worst:.2e}, identity BLEU {ib:.2} chrF {ic:.2}"),
    )
}

// ---- 8. gate transparency -----------------------------------------------

fn gate_transparency(text: &Result<Trained, String>) -> Check {
    let t = text.as_ref().map_err(Clone::clone)?;
    let dev = lines(&t.wd.segmented("dev", "src"));
    let base = load_model(&t.checkpoint);
    let mut gated = base.clone();
    gated.attach_fusion(Fusion::DecGate, GateInit::Zero, GATE_BIAS, 1).map_err(|e| e.to_string())?;
    gated.freeze_main_network();
    let feats = commands::load_features(&data_dir().join("dev.feat"), &data_dir().join("dev.manifest")).unwrap();
    let before = translate_lines(&[base], &dev, &VisualSource::None, &t.cfg.decode).map_err(|e| e.line())?;
    let after = translate_lines(&[gated], &dev, &VisualSource::PerSentence(feats), &t.cfg.decode).map_err(|e| e.line())?;
    let differing = before.iter().zip(&after).filter(|(a, b)| a != b).count();
    ensure(differing == 0, format!("{differing} of {} dev sentences changed", dev.len()))
}

// ---- 9. determinism -----------------------------------------------------

fn pipeline_config(work: &Path) -> String {
    let d = data_dir();
    let p = |f: &str| d.join(f).display().to_string();
    format!(
        r#"seed = 7
work_dir = "{work}"

[data]
train_src = "{}"
train_tgt = "{}"
dev_src = "{}"
dev_tgt = "{}"
train_features = "{}"
train_manifest = "{}"
dev_features = "{}"
dev_manifest = "{}"

[filter]
method = "subs_h"
top_k = 28

[bpe]
merges = 150

[model]
d_model = 32
n_heads = 4
d_ff = 64
dropout = 0.1
max_len = 64
visual_dim = 8
fusion = "img_w"

[train]
max_steps = {DETERMINISM_STEPS}

[train.adam]
base_lr = 1.0
warmup_steps = 100

[decode]
max_len = 40
"#,
        p("train.en"),
        p("train.de"),
        p("dev.en"),
        p("dev.de"),
        p("train.feat"),
        p("train.manifest"),
        p("dev.feat"),
        p("dev.manifest"),
        work = work.join("work").display(),
    )
}

fn run_pipeline(dir: &Path) -> Result<(Vec<u8>, Vec<u8>), String> {
    let cfg = dir.join("experiment.toml");
    std::fs::write(&cfg, pipeline_config(dir)).map_err(|e| e.to_string())?;
    let out = Command::new(env!("CARGO_BIN_EXE_mmtlab"))
        .args(["run", "--config"])
        .arg(&cfg)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).trim().to_string());
    }
    let read = |f: &str| std::fs::read(dir.join("work").join(f)).map_err(|e| format!("{f}: {e}"));
    Ok((read("model.seed7.ckpt")?, read("hyp.dev.txt")?))
}

fn determinism() -> Check {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let start = Instant::now();
    let (ck1, hyp1) = run_pipeline(a.path())?;
    let (ck2, hyp2) = run_pipeline(b.path())?;
    let step = Checkpoint::read_from(ck1.as_slice()).map_err(|e| e.to_string())?.train_step;
    ensure(
        ck1 == ck2 && hyp1 == hyp2 && step == DETERMINISM_STEPS,
        format!(
            "checkpoints {} ({} bytes, {step} steps), translations {}, {:.1}s for both runs",
            if ck1 == ck2 { "identical" } else { "differ" },
            ck1.len(),
            if hyp1 == hyp2 { "identical" } else { "differ" },
            start.elapsed().as_secs_f64()
        ),
    )
}

// ------------------------------------------------------------------------

fn run(n: usize, name: &str, f: impl FnOnce() -> Check) -> bool {
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    match &result {
        Ok(d) => println!("PASS {n} {name}: {d}"),
        Err(d) => println!("FAIL {n} {name}: {d}"),
    }
    result.is_ok()
}

fn main() -> ExitCode {
    // Quiet the default panic hook; failures are reported on the result lines.
    std::panic::set_hook(Box::new(|_| {}));
    let mut ok = true;
    ok &= run(1, "gradient fidelity", gradient_fidelity);
    let text = train_recipe("toy_text.toml");
    let img = train_recipe("toy_img_w.toml");
    ok &= run(2, "overfit toy corpus", || overfit(&text, &img));
    ok &= run(3, "ensemble identity", || ensemble_identity(&text));
    ok &= run(4, "blinding no-op", || blinding(&img));
    ok &= run(5, "filter oracles", filter_oracles);
    ok &= run(6, "subword segmentation", bpe_checks);
    ok &= run(7, "metric goldens", metric_goldens);
    ok &= run(8, "gate transparency", || gate_transparency(&text));
    ok &= run(9, "pipeline determinism", determinism);
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
