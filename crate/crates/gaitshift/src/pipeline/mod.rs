//! The two training stages, the learning-rate schedule, and the strategy
//! ablation that compares direct transfer against each selection order.

mod config;
mod runlog;
mod train;

pub use config::{
    lr_at, AblationConfig, DataConfig, EvalConfig, ExperimentConfig, Preset, TrainConfig,
};
pub use runlog::{EpochRecord, RunLog, Stage};
pub use train::{adapt_target, initial_params, pretrain_source, Adaptation, RoundReport};

use std::fmt::{self, Write as _};
use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use crate::data::{generate_domain, load_dataset, Dataset, Split};
use crate::discovery::Strategy;
use crate::encoder::{encode_batch, Condition, EncoderParams};
use crate::error::Result;
use crate::eval::{evaluate, make_protocol, Convention, EvalSummary, Rank1};

/// One row of the ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Pretrained encoder applied to the target without adaptation.
    Direct,
    Adapted(Strategy),
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Direct,
        Method::Adapted(Strategy::Random),
        Method::Adapted(Strategy::Low),
        Method::Adapted(Strategy::High),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Direct => "direct",
            Method::Adapted(Strategy::Random) => "random-entropy",
            Method::Adapted(Strategy::Low) => "low-entropy",
            Method::Adapted(Strategy::High) => "high-entropy",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Subdirectories of a benchmark root.
pub const SOURCE_DIR: &str = "source";
pub const TARGET_DIR: &str = "target";

/// Writes the source and target domains under `root`. The target is drawn
/// from seed `data.seed + 1` so its identities differ from the source's.
pub fn generate_benchmark(data: &DataConfig, root: &Path) -> Result<()> {
    generate_domain(&data.source, data.seed, &root.join(SOURCE_DIR))?;
    generate_domain(
        &data.target,
        data.seed.wrapping_add(1),
        &root.join(TARGET_DIR),
    )?;
    Ok(())
}

/// The four splits an experiment uses.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub source_train: Dataset,
    pub source_test: Dataset,
    pub target_train: Dataset,
    pub target_test: Dataset,
}

pub fn load_benchmark(root: &Path) -> Result<Benchmark> {
    let source = load_dataset(&root.join(SOURCE_DIR))?;
    let target = load_dataset(&root.join(TARGET_DIR))?;
    Ok(Benchmark {
        source_train: source.split(Split::Train),
        source_test: source.split(Split::Test),
        target_train: target.split(Split::Train),
        target_test: target.split(Split::Test),
    })
}

/// Encodes `test` and scores it under `convention`.
pub fn evaluate_dataset(
    params: &EncoderParams,
    test: &Dataset,
    convention: Convention,
) -> Result<EvalSummary> {
    let embeddings = encode_batch(&test.sequences, params)?;
    let protocol = make_protocol(&test.manifest.records, convention)?;
    evaluate(&embeddings, &test.manifest.records, &protocol)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRun {
    pub method: Method,
    pub seed: u64,
    pub summary: EvalSummary,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub runs: Vec<MethodRun>,
}

fn mean_spread(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn condition_accuracy(r: &Rank1, cond: Option<Condition>) -> f64 {
    match cond {
        None => r.overall.accuracy,
        Some(c) => r.per_condition.get(&c).map_or(0.0, |s| s.accuracy),
    }
}

impl AblationReport {
    pub fn runs_of(&self, method: Method) -> impl Iterator<Item = &MethodRun> {
        self.runs.iter().filter(move |r| r.method == method)
    }

    /// Mean overall rank-1 of a method across seeds.
    pub fn mean_rank1(&self, method: Method) -> f64 {
        let v: Vec<f64> = self
            .runs_of(method)
            .map(|r| r.summary.rank1.overall.accuracy)
            .collect();
        mean_spread(&v).0
    }

    fn conditions(&self) -> Vec<Condition> {
        let mut c: Vec<Condition> = self
            .runs
            .iter()
            .flat_map(|r| r.summary.rank1.per_condition.keys().copied())
            .collect();
        c.sort_unstable();
        c.dedup();
        c
    }

    /// One row per method: mean and sample standard deviation across seeds
    /// of rank-1 and rank-1 excluding identical views, overall and per
    /// condition, in percent.
    pub fn comparison_csv(&self) -> String {
        let mut columns: Vec<(String, Option<Condition>)> = vec![("all".into(), None)];
        columns.extend(
            self.conditions()
                .into_iter()
                .map(|c| (c.tag().to_string(), Some(c))),
        );
        let mut out = String::from("method,seeds");
        for (name, _) in &columns {
            for metric in ["rank1", "rank1_excl"] {
                write!(out, ",{name}_{metric}_mean,{name}_{metric}_spread").unwrap();
            }
        }
        out.push('\n');
        for method in Method::ALL {
            let runs: Vec<&MethodRun> = self.runs_of(method).collect();
            if runs.is_empty() {
                continue;
            }
            write!(out, "{},{}", method.name(), runs.len()).unwrap();
            for (_, cond) in &columns {
                for excl in [false, true] {
                    let v: Vec<f64> = runs
                        .iter()
                        .map(|r| {
                            let r1 = if excl {
                                &r.summary.rank1_excl
                            } else {
                                &r.summary.rank1
                            };
                            100.0 * condition_accuracy(r1, *cond)
                        })
                        .collect();
                    let (m, s) = mean_spread(&v);
                    write!(out, ",{m:.2},{s:.2}").unwrap();
                }
            }
            out.push('\n');
        }
        out
    }

    /// Every (method, seed) result.
    pub fn runs_csv(&self) -> String {
        let conds = self.conditions();
        let mut out = String::from("method,seed,rank1,rank1_excl");
        for c in &conds {
            write!(out, ",{c}_rank1,{c}_rank1_excl").unwrap();
        }
        out.push('\n');
        for r in &self.runs {
            write!(
                out,
                "{},{},{:.4},{:.4}",
                r.method,
                r.seed,
                r.summary.rank1.overall.accuracy,
                r.summary.rank1_excl.overall.accuracy
            )
            .unwrap();
            for c in &conds {
                write!(
                    out,
                    ",{:.4},{:.4}",
                    condition_accuracy(&r.summary.rank1, Some(*c)),
                    condition_accuracy(&r.summary.rank1_excl, Some(*c))
                )
                .unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Pretrains once per seed, then scores direct transfer and adaptation with
/// each selection strategy on the target test split.
pub fn run_ablation(bench: &Benchmark, cfg: &ExperimentConfig) -> Result<AblationReport> {
    cfg.validate()?;
    let (source_train, target_train, target_test) =
        (&bench.source_train, &bench.target_train, &bench.target_test);
    let labels = source_train.label_indices();
    let mut report = AblationReport::default();
    for &seed in &cfg.ablation.seeds {
        let train = TrainConfig {
            seed,
            ..cfg.train.clone()
        };
        let (pretrained, _) = pretrain_source(&source_train.sequences, &labels, &train)?;
        for method in Method::ALL {
            let params = match method {
                Method::Direct => pretrained.clone(),
                Method::Adapted(strategy) => {
                    let cfg = TrainConfig {
                        strategy,
                        ..train.clone()
                    };
                    adapt_target(&target_train.sequences, pretrained.clone(), &cfg)?.params
                }
            };
            let summary = evaluate_dataset(&params, target_test, cfg.eval.convention)?;
            info!(
                "seed {seed} {method}: rank-1 {:.3} (excl {:.3})",
                summary.rank1.overall.accuracy, summary.rank1_excl.overall.accuracy
            );
            report.runs.push(MethodRun {
                method,
                seed,
                summary,
            });
        }
    }
    Ok(report)
}
