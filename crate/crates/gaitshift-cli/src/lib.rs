//! The `gaitshift` command-line tool.
//!
//! Every verb resolves its configuration (preset, then `--config`, then
//! flags), writes the resolved snapshot to `config.toml` in the output
//! directory, and marks success by writing `run.json` last. A directory that
//! already holds `run.json` is refused unless `--force` is given. When a
//! verb fails, whatever it had written is moved under `failed/`.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use gaitshift::data::{load_dataset, Dataset, Split};
use gaitshift::discovery::{render_round_dump, Strategy};
use gaitshift::encoder::{Checkpoint, EncoderParams};
use gaitshift::pipeline::{
    adapt_target, evaluate_dataset, generate_benchmark, load_benchmark, pretrain_source,
    run_ablation, ExperimentConfig, Method, Preset, RunLog,
};
use gaitshift::GaitError;

/// Written last; its presence marks a completed run.
pub const RUN_FILE: &str = "run.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const FAILED_DIR: &str = "failed";

#[derive(Debug, Parser)]
#[command(
    name = "gaitshift",
    version,
    about = "Cross-domain gait recognition experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every verb.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML file overlaid on the preset.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory, created if absent.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Seed of the verb's own randomness (data seed for gen-data, training
    /// seed otherwise; a single-seed list for ablate).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Anchor selection order: high, low or random.
    #[arg(long)]
    pub strategy: Option<Strategy>,
    /// Base preset: full or desk (default desk, or the config file's).
    #[arg(long)]
    pub preset: Option<Preset>,
    /// Replace a completed run in the output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic source and target domains.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Supervised triplet pretraining on a labeled domain's train split.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Domain directory holding manifest.json.
        #[arg(long, value_name = "DIR")]
        source: PathBuf,
    },
    /// Unsupervised adaptation on a domain's train split.
    Adapt {
        #[command(flatten)]
        common: Common,
        /// Domain directory; only its train split is used, without labels.
        #[arg(long, value_name = "DIR")]
        target: PathBuf,
        /// Pretrained checkpoint to start from.
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
    },
    /// Rank-1 evaluation of a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Domain directory holding manifest.json.
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Checkpoint to evaluate.
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Which split to evaluate.
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Direct transfer against each selection strategy over several seeds.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Benchmark from gen-data; generated into the output directory
        /// when absent.
        #[arg(long, value_name = "DIR")]
        bench: Option<PathBuf>,
        /// Comma-separated training seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
}

impl Command {
    pub fn verb(&self) -> &'static str {
        match self {
            Command::GenData { .. } => "gen-data",
            Command::Pretrain { .. } => "pretrain",
            Command::Adapt { .. } => "adapt",
            Command::Eval { .. } => "eval",
            Command::Ablate { .. } => "ablate",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::GenData { common }
            | Command::Pretrain { common, .. }
            | Command::Adapt { common, .. }
            | Command::Eval { common, .. }
            | Command::Ablate { common, .. } => common,
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Gait(#[from] GaitError),
    #[error("{} holds a completed run; pass --force to replace it", .0.display())]
    Exists(PathBuf),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Gait(e) => e.code(),
            CliError::Exists(_) => "E_EXISTS",
            CliError::Usage(_) => "E_USAGE",
        }
    }

    /// `error: CODE message` on one line.
    pub fn line(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("error: {} {}", self.code(), msg.trim())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, source: io::Error) -> CliError {
    CliError::Gait(GaitError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Contents of `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub verb: String,
    pub inputs: BTreeMap<String, String>,
    /// Paths relative to the output directory, `run.json` excluded.
    pub outputs: Vec<String>,
}

/// The output directory of one invocation and everything written to it.
struct RunDir {
    root: PathBuf,
    written: Vec<String>,
}

impl RunDir {
    fn open(root: &Path, force: bool) -> CliResult<Self> {
        let marker = root.join(RUN_FILE);
        if marker.exists() {
            if !force {
                return Err(CliError::Exists(root.to_path_buf()));
            }
            // only remove what the previous run recorded as its own
            let text = fs::read_to_string(&marker).map_err(|e| io_err(&marker, e))?;
            let old: RunRecord = serde_json::from_str(&text).map_err(|e| GaitError::Format {
                what: marker.display().to_string(),
                reason: e.to_string(),
            })?;
            fs::remove_file(&marker).map_err(|e| io_err(&marker, e))?;
            let inside = |rel: &str| {
                Path::new(rel)
                    .components()
                    .all(|c| matches!(c, std::path::Component::Normal(_)))
            };
            for rel in old.outputs.iter().filter(|r| inside(r)) {
                remove_path(&root.join(rel))?;
            }
        }
        fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    /// Registers `rel` as an output and returns its full path.
    fn claim(&mut self, rel: &str) -> CliResult<PathBuf> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        if !self.written.iter().any(|w| w == rel) {
            self.written.push(rel.to_string());
        }
        Ok(path)
    }

    fn write(&mut self, rel: &str, contents: &str) -> CliResult<()> {
        let path = self.claim(rel)?;
        fs::write(&path, contents).map_err(|e| io_err(&path, e))
    }

    fn finish(self, verb: &str, inputs: BTreeMap<String, String>) -> CliResult<()> {
        let record = RunRecord {
            verb: verb.to_string(),
            inputs,
            outputs: self.written,
        };
        let path = self.root.join(RUN_FILE);
        let text = serde_json::to_string_pretty(&record).expect("run record serializes") + "\n";
        fs::write(&path, text).map_err(|e| io_err(&path, e))
    }

    /// Moves this run's outputs under `failed/`, replacing an earlier one.
    fn quarantine(self) -> CliResult<PathBuf> {
        let failed = self.root.join(FAILED_DIR);
        remove_path(&failed)?;
        for rel in &self.written {
            let from = self.root.join(rel);
            if !from.exists() {
                continue;
            }
            let to = failed.join(rel);
            if let Some(parent) = to.parent() {
                fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
            }
            fs::rename(&from, &to).map_err(|e| io_err(&from, e))?;
        }
        Ok(failed)
    }
}

fn remove_path(path: &Path) -> CliResult<()> {
    let result = if path.is_dir() {
        fs::remove_dir_all(path)
    } else if path.exists() {
        fs::remove_file(path)
    } else {
        Ok(())
    };
    result.map_err(|e| io_err(path, e))
}

/// Preset, then config file, then flags.
pub fn resolve_config(common: &Common) -> CliResult<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            ExperimentConfig::from_toml(&text, common.preset)?
        }
        None => ExperimentConfig::preset(common.preset.unwrap_or(Preset::Desk)),
    };
    if let Some(strategy) = common.strategy {
        cfg.train.strategy = strategy;
    }
    Ok(cfg)
}

fn read_checkpoint(path: &Path) -> CliResult<EncoderParams> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(Checkpoint::from_json(&text)?.into_params()?)
}

fn checkpoint_json(params: &EncoderParams) -> String {
    Checkpoint::from_params(params).to_json()
}

fn path_input(name: &str, path: &Path) -> (String, String) {
    (name.to_string(), path.display().to_string())
}

fn select_split(data: &Dataset, split: SplitArg) -> Dataset {
    match split {
        SplitArg::Train => data.split(Split::Train),
        SplitArg::Test => data.split(Split::Test),
        SplitArg::All => data.clone(),
    }
}

fn write_log(dir: &mut RunDir, log: &RunLog) -> CliResult<()> {
    dir.write("runlog.csv", &log.to_csv())?;
    dir.write("timing.csv", &log.timing_csv())?;
    dir.write("summary.json", &log.summary_json())
}

/// Runs one verb to completion, or quarantines its partial outputs.
pub fn run(command: &Command) -> CliResult<()> {
    let common = command.common();
    let mut cfg = resolve_config(common)?;
    match command {
        Command::GenData { .. } => {
            if let Some(seed) = common.seed {
                cfg.data.seed = seed;
            }
        }
        Command::Ablate { seeds, .. } => {
            if let Some(seeds) = seeds {
                cfg.ablation.seeds = seeds.clone();
            } else if let Some(seed) = common.seed {
                cfg.ablation.seeds = vec![seed];
            }
        }
        _ => {
            if let Some(seed) = common.seed {
                cfg.train.seed = seed;
            }
        }
    }
    cfg.validate()?;

    let mut dir = RunDir::open(&common.out, common.force)?;
    match execute(command, &cfg, &mut dir) {
        Ok(inputs) => {
            dir.finish(command.verb(), inputs)?;
            info!("{} complete: {}", command.verb(), common.out.display());
            Ok(())
        }
        Err(err) => {
            match dir.quarantine() {
                Ok(failed) => log::warn!("partial outputs moved to {}", failed.display()),
                Err(q) => log::warn!("could not quarantine partial outputs: {q}"),
            }
            Err(err)
        }
    }
}

fn execute(
    command: &Command,
    cfg: &ExperimentConfig,
    dir: &mut RunDir,
) -> CliResult<BTreeMap<String, String>> {
    dir.write(CONFIG_FILE, &cfg.to_toml())?;
    match command {
        Command::GenData { .. } => {
            dir.claim("source")?;
            dir.claim("target")?;
            generate_benchmark(&cfg.data, &dir.root)?;
            Ok(BTreeMap::new())
        }
        Command::Pretrain { source, .. } => {
            let data = load_dataset(source)?;
            let train = data.split(Split::Train);
            let (params, mut log) =
                pretrain_source(&train.sequences, &train.label_indices(), &cfg.train)?;
            let test = data.split(Split::Test);
            if !test.is_empty() {
                let summary = evaluate_dataset(&params, &test, cfg.eval.convention)?;
                log.metrics
                    .insert("test_rank1".into(), summary.rank1.overall.accuracy);
                log.metrics.insert(
                    "test_rank1_excl".into(),
                    summary.rank1_excl.overall.accuracy,
                );
            }
            dir.write(CHECKPOINT_FILE, &checkpoint_json(&params))?;
            write_log(dir, &log)?;
            Ok(BTreeMap::from([path_input("source", source)]))
        }
        Command::Adapt {
            target, checkpoint, ..
        } => {
            let pretrained = read_checkpoint(checkpoint)?;
            if *pretrained.shape() != cfg.train.encoder {
                return Err(CliError::Usage(format!(
                    "checkpoint encoder {:?} differs from the configured {:?}",
                    pretrained.shape(),
                    cfg.train.encoder
                )));
            }
            let data = load_dataset(target)?.split(Split::Train);
            let adapted = adapt_target(&data.sequences, pretrained, &cfg.train)?;
            let ids = data.sample_ids();
            for (r, round) in adapted.rounds.iter().enumerate() {
                let dump = render_round_dump(&ids, &round.schedule, &round.neighborhoods);
                dir.write(&format!("rounds/round-{:02}.csv", r + 1), &dump)?;
            }
            dir.write(CHECKPOINT_FILE, &checkpoint_json(&adapted.params))?;
            write_log(dir, &adapted.log)?;
            Ok(BTreeMap::from([
                path_input("target", target),
                path_input("checkpoint", checkpoint),
            ]))
        }
        Command::Eval {
            data,
            checkpoint,
            split,
            ..
        } => {
            let params = read_checkpoint(checkpoint)?;
            let set = select_split(&load_dataset(data)?, *split);
            let summary = evaluate_dataset(&params, &set, cfg.eval.convention)?;
            info!(
                "rank-1 {:.4} (excluding identical views {:.4})",
                summary.rank1.overall.accuracy, summary.rank1_excl.overall.accuracy
            );
            let text = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
            dir.write("summary.json", &text)?;
            Ok(BTreeMap::from([
                path_input("data", data),
                path_input("checkpoint", checkpoint),
            ]))
        }
        Command::Ablate { bench, .. } => {
            let root = match bench {
                Some(path) => path.clone(),
                None => {
                    dir.claim("data")?;
                    let root = dir.root.join("data");
                    generate_benchmark(&cfg.data, &root)?;
                    root
                }
            };
            let report = run_ablation(&load_benchmark(&root)?, cfg)?;
            dir.write("comparison.csv", &report.comparison_csv())?;
            dir.write("runs.csv", &report.runs_csv())?;
            let means: Vec<(String, f64)> = Method::ALL
                .iter()
                .map(|&m| (m.name().to_string(), report.mean_rank1(m)))
                .collect();
            let doc = serde_json::json!({ "mean_rank1": means, "runs": report.runs });
            dir.write(
                "summary.json",
                &(serde_json::to_string_pretty(&doc).expect("serializes") + "\n"),
            )?;
            Ok(bench.iter().map(|b| path_input("bench", b)).collect())
        }
    }
}
