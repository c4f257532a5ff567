use std::fmt;
use std::str::FromStr;

use fedbs::federated::Strategy;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::experiment::{accuracy_table, prepare_subjects, run_grid};

/// Setting varied by a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    /// Participation weight P (clients per round = ⌊P·K⌋).
    Participation,
    LocalEpochs,
    /// Evaluation batch size; training is shared across values.
    TestBatch,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Participation => "participation",
            SweepParam::LocalEpochs => "local-epochs",
            SweepParam::TestBatch => "test-batch",
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        [SweepParam::Participation, SweepParam::LocalEpochs, SweepParam::TestBatch]
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| CliError::Config(format!("unknown sweep parameter `{s}` (participation, local-epochs, test-batch)")))
    }
}

/// Mean LOSO accuracy of one strategy at one sweep value.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub strategy: Strategy,
    pub mean_accuracy: f64,
}

fn as_count(param: SweepParam, v: f64) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(CliError::Config(format!("{param} value {v} must be a positive integer")))
    }
}

fn rows(cfg: &ExperimentConfig, table: &fedbs::eval::AccuracyTable, value: f64) -> Vec<SweepRow> {
    cfg.strategies
        .iter()
        .map(|&strategy| SweepRow { value, strategy, mean_accuracy: table.mean(strategy.name()).unwrap_or(f64::NAN) })
        .collect()
}

pub fn run_sweep(cfg: &ExperimentConfig, param: SweepParam, values: &[f64]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(CliError::Config("sweep needs at least one value".into()));
    }
    let subjects = prepare_subjects(cfg)?;
    let mut out = Vec::new();
    match param {
        SweepParam::TestBatch => {
            let batches = values.iter().map(|&v| as_count(param, v)).collect::<Result<Vec<_>>>()?;
            let cells = run_grid(cfg, &subjects, &batches)?;
            for (i, &v) in values.iter().enumerate() {
                out.extend(rows(cfg, &accuracy_table(&cells, i)?, v));
            }
        }
        SweepParam::Participation | SweepParam::LocalEpochs => {
            for &v in values {
                let mut c = cfg.clone();
                if param == SweepParam::Participation {
                    c.federated.participation = v;
                } else {
                    c.federated.local_epochs = as_count(param, v)?;
                }
                let cells = run_grid(&c, &subjects, &[c.federated.test_batch_size])?;
                out.extend(rows(&c, &accuracy_table(&cells, 0)?, v));
            }
        }
    }
    Ok(out)
}

pub fn sweep_csv(param: SweepParam, rows: &[SweepRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Core(e.into());
    w.write_record(["parameter", "value", "strategy", "mean_accuracy"]).map_err(err)?;
    for r in rows {
        w.write_record([param.name(), &r.value.to_string(), r.strategy.name(), &format!("{:?}", r.mean_accuracy)])
            .map_err(err)?;
    }
    w.into_inner().map_err(|e| CliError::Config(e.to_string()))
}
