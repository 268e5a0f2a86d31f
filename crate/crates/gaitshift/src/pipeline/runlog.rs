use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrain,
    Adapt,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Adapt => "adapt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: Stage,
    /// 0 for pretraining.
    pub round: usize,
    /// Epoch on the learning-rate schedule; continuous across rounds.
    pub epoch: usize,
    /// Mean loss over the epoch's batches.
    pub loss: f64,
    pub lr: f64,
    pub steps: usize,
    pub wall_secs: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub epochs: Vec<EpochRecord>,
    pub metrics: BTreeMap<String, f64>,
}

impl RunLog {
    pub fn total_steps(&self) -> usize {
        self.epochs.iter().map(|e| e.steps).sum()
    }

    /// Deterministic table; wall times live in [`RunLog::timing_csv`].
    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage,round,epoch,loss,lr,steps\n");
        for e in &self.epochs {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                e.stage.name(),
                e.round,
                e.epoch,
                e.loss,
                e.lr,
                e.steps
            )
            .expect("writing to a String");
        }
        out
    }

    pub fn timing_csv(&self) -> String {
        let mut out = String::from("stage,round,epoch,wall_secs\n");
        for e in &self.epochs {
            writeln!(
                out,
                "{},{},{},{:.6}",
                e.stage.name(),
                e.round,
                e.epoch,
                e.wall_secs
            )
            .expect("writing to a String");
        }
        out
    }

    pub fn summary_json(&self) -> String {
        let last = self.epochs.last();
        let doc = serde_json::json!({
            "epochs": self.epochs.len(),
            "total_steps": self.total_steps(),
            "first_loss": self.epochs.first().map(|e| e.loss),
            "final_loss": last.map(|e| e.loss),
            "final_lr": last.map(|e| e.lr),
            "metrics": self.metrics,
        });
        serde_json::to_string_pretty(&doc).expect("summary serializes") + "\n"
    }
}
