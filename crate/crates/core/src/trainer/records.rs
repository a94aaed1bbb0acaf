use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Finetune,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Finetune => "finetune",
        }
    }
}

/// Per-epoch means of the batch losses plus the equilibrium scores. Losses
/// that a configuration never computes are left empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    /// 1-based, counted across both phases.
    pub epoch: usize,
    pub phase: Phase,
    pub neg_elbo: f64,
    pub gen_loss: Option<f64>,
    pub disc_loss: Option<f64>,
    pub cluster_loss: Option<f64>,
    pub alpha_loss: f64,
    pub joint_loss: Option<f64>,
    pub discriminator_score: Option<f64>,
    pub generator_score: Option<f64>,
    pub wall_time_s: f64,
}

impl TrainLogRecord {
    /// Equality on everything except wall time.
    pub fn same_values(&self, other: &Self) -> bool {
        Self {
            wall_time_s: 0.0,
            ..self.clone()
        } == Self {
            wall_time_s: 0.0,
            ..other.clone()
        }
    }
}

/// Window means of the equilibrium scores over the final epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSummary {
    pub window: usize,
    pub epochs: usize,
    pub mean_disc: f64,
    pub mean_gen: f64,
    /// Largest distance of either window mean from 0.5.
    pub max_abs_deviation: f64,
    pub tolerance: f64,
    pub converged: bool,
}

impl EquilibriumSummary {
    /// Uses the last `window` records that carry scores (fewer if the log
    /// is shorter).
    pub fn from_records(records: &[TrainLogRecord], window: usize, tolerance: f64) -> Result<Self> {
        let scored: Vec<(f64, f64)> = records
            .iter()
            .filter_map(|r| Some((r.discriminator_score?, r.generator_score?)))
            .collect();
        if scored.is_empty() || window == 0 {
            return Err(Error::EmptyDataset("no scored epochs in the training log".into()));
        }
        let tail = &scored[scored.len().saturating_sub(window)..];
        let n = tail.len() as f64;
        let mean_disc = tail.iter().map(|s| s.0).sum::<f64>() / n;
        let mean_gen = tail.iter().map(|s| s.1).sum::<f64>() / n;
        let max_abs_deviation = (mean_disc - 0.5).abs().max((mean_gen - 0.5).abs());
        Ok(Self {
            window,
            epochs: tail.len(),
            mean_disc,
            mean_gen,
            max_abs_deviation,
            tolerance,
            converged: max_abs_deviation <= tolerance,
        })
    }
}

pub fn write_log(path: &Path, records: &[TrainLogRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_log(path: &Path) -> Result<Vec<TrainLogRecord>> {
    if !path.is_file() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "training log not found"),
        ));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
