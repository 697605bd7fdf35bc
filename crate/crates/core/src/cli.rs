//! `polysent` command line: one subcommand per pipeline stage. Every stage
//! writes a `run-manifest.json` extending the chain found next to its inputs.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, TrainSection};
use crate::corpus::{label_samples, load_corpus, CorpusFormat, LabeledSample};
use crate::ensemble::{ensemble_predict, EnsembleConfig};
use crate::error::{Error, Result};
use crate::io;
use crate::manifest::StageRecorder;
use crate::model::{load_model, ModelConfig, ModelHandle};
use crate::preprocess::{normalize_text, preprocess_corpus};
use crate::report::{build_report, read_predictions, write_report};
use crate::split::{stratified_split, DatasetSplit, SplitSpec, StratumCount};
use crate::train::{train, write_run_config, RunDir};

#[derive(Debug, Parser)]
#[command(name = "polysent", version, about = "Multilingual tweet sentiment pipeline")]
pub struct Cli {
    /// Pipeline configuration (JSON or TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the split seed (split) or the training seed (train).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Partition {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CheckpointChoice {
    Best,
    Last,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a tweet table (CSV or JSONL) into a labeled corpus.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        format: Option<CorpusFormat>,
    },
    /// Normalize corpus text. `--input -` streams JSONL from stdin to stdout.
    Preprocess {
        #[arg(long, default_value = "-")]
        input: PathBuf,
    },
    /// Stratified train/val/test split.
    Split {
        #[arg(long)]
        input: PathBuf,
    },
    /// Fine-tune the configured model on a split.
    Train {
        /// `split-manifest.json` written by `split`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        name: Option<String>,
    },
    /// Predict one partition with a trained run.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
        /// `split-manifest.json` or a corpus JSONL.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Partition,
        #[arg(long, value_enum, default_value = "best")]
        checkpoint: CheckpointChoice,
    },
    /// Majority-vote predictions from several trained runs.
    EnsembleEval {
        #[arg(long)]
        data: PathBuf,
        /// Member run directory; repeatable. Defaults to the config's members.
        #[arg(long = "member")]
        members: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: Partition,
        #[arg(long, value_enum, default_value = "best")]
        checkpoint: CheckpointChoice,
    },
    /// Metrics, confusion matrices and charts from a predictions file.
    Report {
        #[arg(long)]
        predictions: PathBuf,
    },
}

impl std::str::FromStr for Partition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        <Self as ValueEnum>::from_str(s, true).map_err(Error::InvalidConfig)
    }
}

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const REJECTS_FILE: &str = "rejects.jsonl";
pub const CLEAN_FILE: &str = "corpus.clean.jsonl";
pub const DROPPED_FILE: &str = "dropped.jsonl";
pub const SPLIT_MANIFEST: &str = "split-manifest.json";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";

/// Written by `split`; `train` and `evaluate` read it back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub ratios: [f64; 3],
    /// Partition name → file name relative to this manifest.
    pub files: BTreeMap<String, String>,
    pub counts: BTreeMap<String, usize>,
    pub strata: Vec<StratumCount>,
}

impl SplitManifest {
    pub fn load_split(path: &Path) -> Result<DatasetSplit> {
        let manifest: SplitManifest = io::read_json(path)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let part = |name: &str| -> Result<Vec<LabeledSample>> {
            let file = manifest
                .files
                .get(name)
                .ok_or_else(|| Error::Malformed(format!("{}: no `{name}` file", path.display())))?;
            io::read_jsonl(&dir.join(file))
        };
        Ok(DatasetSplit { train: part("train")?, val: part("val")?, test: part("test")? })
    }
}

/// `config.json` of a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainSection,
    pub data: String,
    pub best_epoch: Option<usize>,
}

fn load_partition(data: &Path, partition: Partition) -> Result<Vec<LabeledSample>> {
    if data.extension().and_then(|e| e.to_str()) == Some("json") {
        let split = SplitManifest::load_split(data)?;
        Ok(match partition {
            Partition::Train => split.train,
            Partition::Val => split.val,
            Partition::Test => split.test,
        })
    } else {
        io::read_jsonl(data)
    }
}

fn load_run(run: &Path, checkpoint: CheckpointChoice) -> Result<ModelHandle> {
    let dir = RunDir::new(run);
    let cfg: RunConfig = io::read_json(&dir.config())?;
    let weights = match checkpoint {
        CheckpointChoice::Best => dir.best(),
        CheckpointChoice::Last => dir.last(),
    };
    ModelHandle::load_saved(&weights, &cfg.model)
}

/// Parse arguments, run, and map the outcome to an exit code
/// (0 success, 1 internal error, 2 bad input).
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let mut config = PipelineConfig::load_or_default(cli.config.as_deref())?;
    let config_hash = Some(config.hash());
    let out = cli.out.as_path();
    match &cli.command {
        Command::Ingest { input, format } => {
            let format = format
                .or(config.ingest.format)
                .unwrap_or_else(|| CorpusFormat::from_path(input));
            let mut stage = StageRecorder::start("ingest", &[input], config_hash, None)?;
            let loaded = load_corpus(input, format)?;
            let corpus = label_samples(loaded.samples)?;
            let corpus_path = out.join(CORPUS_FILE);
            io::write_jsonl(&corpus_path, &corpus)?;
            let rejects_path = out.join(REJECTS_FILE);
            io::write_jsonl(&rejects_path, &loaded.rejects)?;
            for r in &loaded.rejects {
                log::warn!("row {} rejected: {}", r.row, r.reason);
            }
            eprintln!("ingested {} rows, rejected {}", corpus.len(), loaded.rejects.len());
            stage.output(&corpus_path);
            stage.output(&rejects_path);
            stage.finish(out)?;
        }
        Command::Preprocess { input } if input.as_os_str() == "-" => {
            stream_preprocess(std::io::stdin().lock(), std::io::stdout().lock())?;
        }
        Command::Preprocess { input } => {
            let mut stage = StageRecorder::start("preprocess", &[input], config_hash, None)?;
            let corpus: Vec<LabeledSample> = io::read_jsonl(input)?;
            let (kept, dropped) = preprocess_corpus(corpus);
            let clean_path = out.join(CLEAN_FILE);
            io::write_jsonl(&clean_path, &kept)?;
            let dropped_path = out.join(DROPPED_FILE);
            let dropped: Vec<_> = dropped.into_iter().map(|id| serde_json::json!({ "id": id })).collect();
            io::write_jsonl(&dropped_path, &dropped)?;
            eprintln!("kept {}, dropped {}", kept.len(), dropped.len());
            stage.output(&clean_path);
            stage.output(&dropped_path);
            stage.finish(out)?;
        }
        Command::Split { input } => {
            if let Some(seed) = cli.seed {
                config.split.seed = seed;
            }
            let spec: SplitSpec = config.split;
            let mut stage = StageRecorder::start("split", &[input], config_hash, Some(spec.seed))?;
            let corpus: Vec<LabeledSample> = io::read_jsonl(input)?;
            let split = stratified_split(corpus, &spec)?;
            let mut files = BTreeMap::new();
            let mut counts = BTreeMap::new();
            for (name, part) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
                let file = format!("{name}.jsonl");
                let path = out.join(&file);
                io::write_jsonl(&path, part)?;
                stage.output(&path);
                files.insert(name.to_string(), file);
                counts.insert(name.to_string(), part.len());
            }
            let manifest = SplitManifest {
                seed: spec.seed,
                ratios: spec.ratios,
                files,
                counts,
                strata: split.stratum_counts(),
            };
            let path = out.join(SPLIT_MANIFEST);
            io::write_json(&path, &manifest)?;
            stage.output(&path);
            stage.finish(out)?;
        }
        Command::Train { data, name } => {
            if let Some(seed) = cli.seed {
                config.train.params.seed = seed;
            }
            if let Some(name) = name {
                config.train.name = name.clone();
            }
            let run_dir = RunDir::new(out.join("runs").join(&config.train.name));
            let mut stage = StageRecorder::start("train", &[data], config_hash, Some(config.train.params.seed))?;
            let split = SplitManifest::load_split(data)?;
            let handle = load_model(&config.model)?;
            let mut run_cfg = RunConfig {
                model: config.model.clone(),
                train: config.train.clone(),
                data: data.display().to_string(),
                best_epoch: None,
            };
            write_run_config(&run_dir, &run_cfg)?;
            let outcome = train(handle, &split, &config.train.params, Some(&run_dir))?;
            if outcome.epochs.is_empty() {
                outcome.handle.save(&run_dir.best())?;
                outcome.handle.save(&run_dir.last())?;
            }
            run_cfg.best_epoch = outcome.best_epoch;
            write_run_config(&run_dir, &run_cfg)?;
            for m in &outcome.epochs {
                eprintln!(
                    "epoch {}: loss {:.4} acc {:.4} macro-F1 {:.4}",
                    m.epoch, m.mean_train_loss, m.accuracy, m.macro_f1
                );
            }
            for p in [run_dir.config(), run_dir.metrics(), run_dir.best(), run_dir.last()] {
                stage.output(&p);
            }
            stage.finish(&run_dir.root)?;
        }
        Command::Evaluate { run, data, split, checkpoint } => {
            let mut stage = StageRecorder::start("evaluate", &[run.as_path(), data.as_path()], config_hash, None)?;
            let samples = load_partition(data, *split)?;
            if samples.is_empty() {
                return Err(Error::EmptyDataset);
            }
            let handle = load_run(run, *checkpoint)?;
            let records = handle.predict_samples(&samples, config.eval.batch_size)?;
            let path = out.join(PREDICTIONS_FILE);
            io::write_jsonl(&path, &records)?;
            stage.output(&path);
            stage.finish(out)?;
        }
        Command::EnsembleEval { data, members, split, checkpoint } => {
            let members = if members.is_empty() { config.ensemble.members.clone() } else { members.clone() };
            let mut inputs: Vec<&Path> = members.iter().map(PathBuf::as_path).collect();
            inputs.push(data);
            let mut stage = StageRecorder::start("ensemble-eval", &inputs, config_hash, None)?;
            if members.len() < 2 {
                return Err(Error::TooFewMembers(members.len()));
            }
            let samples = load_partition(data, *split)?;
            if samples.is_empty() {
                return Err(Error::EmptyDataset);
            }
            let handles = members
                .iter()
                .map(|m| {
                    load_run(m, *checkpoint).map_err(|e| Error::MemberFailure {
                        member: m.display().to_string(),
                        source: Box::new(e),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let cfg = EnsembleConfig {
                members: handles.iter().map(|h| h.config.clone()).collect(),
                tie_break: config.ensemble.tie_break,
            };
            let records = ensemble_predict(&handles, &samples, &cfg, config.eval.batch_size)?;
            let path = out.join(PREDICTIONS_FILE);
            io::write_jsonl(&path, &records)?;
            stage.output(&path);
            stage.finish(out)?;
        }
        Command::Report { predictions } => {
            let mut stage = StageRecorder::start("report", &[predictions], config_hash, None)?;
            let rows = read_predictions(predictions)?;
            let bundle = build_report(&rows)?;
            for path in write_report(&bundle, out)? {
                stage.output(&path);
            }
            eprintln!(
                "accuracy {:.4}, macro-F1 {:.4} over {} predictions",
                bundle.report.accuracy,
                bundle.report.macro_avg.f1,
                rows.len()
            );
            stage.finish(out)?;
        }
    }
    Ok(())
}

/// Line-by-line normalization; lines that clean to nothing are skipped.
pub fn stream_preprocess<R: BufRead, W: Write>(input: R, mut output: W) -> Result<()> {
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<stdin>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut sample: LabeledSample = serde_json::from_str(&line)
            .map_err(|e| Error::Malformed(format!("line {}: {e}", i + 1)))?;
        sample.text_clean = normalize_text(&sample.text);
        if sample.text_clean.is_empty() {
            log::info!("dropped {}", sample.id);
            continue;
        }
        serde_json::to_writer(&mut output, &sample)?;
        output.write_all(b"\n").map_err(|e| Error::io("<stdout>", e))?;
    }
    output.flush().map_err(|e| Error::io("<stdout>", e))
}
