use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mmtlab_cli::commands::{self, TranslateOptions};
use mmtlab_cli::{ExperimentConfig, Result};

/// Multimodal Transformer translation: corpus filtering, subword learning,
/// training, beam/ensemble translation and evaluation.
#[derive(Parser, Debug)]
#[command(name = "mmtlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ConfigArg {
    /// Experiment config (TOML).
    #[arg(long, short)]
    config: PathBuf,
}

#[derive(Args, Debug)]
struct TranslateArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Checkpoint to translate with (default: the first seed's model in the work dir).
    #[arg(long, conflicts_with = "ensemble")]
    model: Option<PathBuf>,
    /// Checkpoints to ensemble.
    #[arg(long, num_args = 1..)]
    ensemble: Vec<PathBuf>,
    /// Segmented source file (default: the dev set in the work dir).
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Feature file for `--input`.
    #[arg(long, requires = "manifest")]
    features: Option<PathBuf>,
    /// One feature id (or `-`) per input line.
    #[arg(long, requires = "features")]
    manifest: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Clean, tokenize and tag the raw corpora.
    Preprocess(ConfigArg),
    /// Filter the preprocessed training corpus.
    Filter(ConfigArg),
    /// Learn the shared subword merge table.
    BpeLearn(ConfigArg),
    /// Segment the corpora, or a single file with --model/--input/--output.
    BpeApply {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, requires_all = ["input", "output"])]
        model: Option<PathBuf>,
        #[arg(long, requires = "model")]
        input: Option<PathBuf>,
        #[arg(long, requires = "model")]
        output: Option<PathBuf>,
    },
    /// Train one model per configured seed.
    Train(ConfigArg),
    /// Beam-translate with one model or an ensemble.
    Translate(TranslateArgs),
    /// Translate with every visual feature replaced by the training mean.
    BlindTranslate(TranslateArgs),
    /// Corpus BLEU and chrF1 of a hypothesis file.
    Eval {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Add-one smoothing for BLEU.
        #[arg(long)]
        smooth: bool,
    },
    /// Every stage from preprocess to dev translation.
    Run(ConfigArg),
}

fn load(c: &ConfigArg) -> Result<ExperimentConfig> {
    ExperimentConfig::load(&c.config)
}

fn translate(args: &TranslateArgs, blind: bool) -> Result<()> {
    let cfg = load(&args.config)?;
    let opts = TranslateOptions {
        models: if args.ensemble.is_empty() {
            args.model.iter().cloned().collect()
        } else {
            args.ensemble.clone()
        },
        input: args.input.clone(),
        output: args.output.clone(),
        features: args.features.clone().zip(args.manifest.clone()),
        blind,
    };
    let out = commands::translate(&cfg, &opts)?;
    println!("{}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preprocess(c) => commands::preprocess(&load(&c)?),
        Command::Filter(c) => {
            let report = commands::filter(&load(&c)?)?;
            print!("{report}");
            println!("kept\t{}", report.kept);
            Ok(())
        }
        Command::BpeLearn(c) => commands::bpe_learn(&load(&c)?).map(|_| ()),
        Command::BpeApply {
            config,
            model: Some(model),
            input: Some(input),
            output: Some(output),
        } => {
            load(&config)?;
            commands::segment_file(&commands::load_bpe(&model)?, &input, &output)
        }
        Command::BpeApply { config, .. } => commands::bpe_apply(&load(&config)?),
        Command::Train(c) => {
            for p in commands::train(&load(&c)?)? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Translate(a) => translate(&a, false),
        Command::BlindTranslate(a) => translate(&a, true),
        Command::Eval { hyp, reference, smooth } => {
            print!("{}", commands::evaluate(&hyp, &reference, smooth)?);
            Ok(())
        }
        Command::Run(c) => {
            let cfg = load(&c)?;
            if let Some(hyp) = commands::run_all(&cfg)? {
                println!("{}", hyp.display());
                if cfg.data.dev_tgt.is_some() {
                    let wd = commands::WorkDir(cfg.work_dir.clone());
                    print!("{}", commands::evaluate(&hyp, &wd.prep("dev", "tgt"), false)?);
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::FAILURE
        }
    }
}
