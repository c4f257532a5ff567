use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use fedbs::data::{generate_synthetic, loso_split, read_csv, read_trials, TrialSet};
use fedbs::eval::{evaluate, write_comparisons_csv, AccuracyTable};
use fedbs::federated::{run_centralized, run_federated, FederatedConfig, RoundRecord, RunOutput, Strategy};
use fedbs::nn::BackboneSpec;
use fedbs::preprocess::align_each;
use fedbs::Scalar;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, Precision};
use crate::error::{CliError, Result};

/// Subjects as configured, before alignment.
pub fn load_subjects(cfg: &ExperimentConfig) -> Result<Vec<TrialSet>> {
    let Some(path) = &cfg.data.path else {
        return Ok(generate_synthetic(&cfg.data.synthetic)?);
    };
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| CliError::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "eegt"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(CliError::Config(format!("{}: no .eegt files", path.display())));
        }
        files.iter().map(|f| read_trials(f).map_err(CliError::from)).collect()
    } else {
        Ok(read_csv(path, cfg.data.classes)?)
    }
}

/// Loaded subjects, each aligned with its own reference when enabled.
pub fn prepare_subjects(cfg: &ExperimentConfig) -> Result<Vec<Arc<TrialSet>>> {
    let mut subjects = load_subjects(cfg)?;
    if subjects.len() < 2 {
        return Err(CliError::Config("leave-one-subject-out needs at least 2 subjects".into()));
    }
    if cfg.apply_ea {
        subjects = align_each(&subjects)?;
    }
    Ok(subjects.into_iter().map(Arc::new).collect())
}

/// One (seed, held-out subject, strategy) run.
#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub seed: u64,
    pub test_subject: u32,
    pub strategy: Strategy,
    pub records: Vec<RoundRecord>,
    /// Final-model accuracy at each requested test batch size.
    pub accuracies: Vec<f64>,
}

fn backbone(cfg: &ExperimentConfig, subjects: &[Arc<TrialSet>]) -> Result<BackboneSpec> {
    let first = &subjects[0];
    let spec = cfg.backbone.spec(first.channels(), first.samples(), first.classes());
    spec.validate()?;
    Ok(spec)
}

fn train<S: Scalar>(
    spec: &BackboneSpec,
    strategy: Strategy,
    fed: &FederatedConfig,
    train: &[Arc<TrialSet>],
    test: &Arc<TrialSet>,
) -> fedbs::Result<RunOutput<S>> {
    if strategy.is_federated() {
        run_federated(spec, strategy, fed, train, Arc::clone(test))
    } else {
        let pooled = Arc::new(TrialSet::pool(train, u32::MAX)?);
        run_centralized(spec, fed, pooled, test)
    }
}

fn run_cell<S: Scalar>(
    cfg: &ExperimentConfig,
    subjects: &[Arc<TrialSet>],
    spec: &BackboneSpec,
    (seed, test_index, strategy): (u64, usize, Strategy),
    test_batches: &[usize],
) -> Result<CellResult> {
    let (clients, test) = loso_split(subjects, test_index)?;
    let fed = FederatedConfig { seed, ..cfg.federated.clone() };
    let out = train::<S>(spec, strategy, &fed, &clients, &test)?;
    let accuracies = test_batches
        .iter()
        .map(|&b| Ok(evaluate(&out.model, &out.params, &test, b)?.value()))
        .collect::<Result<Vec<_>>>()?;
    Ok(CellResult { seed, test_subject: test.subject_id(), strategy, records: out.records, accuracies })
}

/// Runs every seed × held-out subject × strategy cell in parallel. Results
/// come back in grid order regardless of scheduling.
pub fn run_grid(
    cfg: &ExperimentConfig,
    subjects: &[Arc<TrialSet>],
    test_batches: &[usize],
) -> Result<Vec<CellResult>> {
    cfg.validate()?;
    let spec = backbone(cfg, subjects)?;
    let cells: Vec<(u64, usize, Strategy)> = cfg
        .seeds
        .iter()
        .flat_map(|&seed| (0..subjects.len()).flat_map(move |k| cfg.strategies.iter().map(move |&s| (seed, k, s))))
        .collect();
    cells
        .into_par_iter()
        .map(|cell| match cfg.precision {
            Precision::F32 => run_cell::<f32>(cfg, subjects, &spec, cell, test_batches),
            Precision::F64 => run_cell::<f64>(cfg, subjects, &spec, cell, test_batches),
        })
        .collect()
}

/// Final accuracies of a grid, using the accuracy at `test_batches[index]`.
pub fn accuracy_table(cells: &[CellResult], index: usize) -> Result<AccuracyTable> {
    let mut table = AccuracyTable::new();
    for c in cells {
        table.insert(c.strategy.name(), c.test_subject, c.seed, c.accuracies[index])?;
    }
    Ok(table)
}

pub struct ExperimentOutput {
    pub table: AccuracyTable,
    pub cells: Vec<CellResult>,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let subjects = prepare_subjects(cfg)?;
    let cells = run_grid(cfg, &subjects, &[cfg.federated.test_batch_size])?;
    Ok(ExperimentOutput { table: accuracy_table(&cells, 0)?, cells })
}

#[derive(Serialize)]
struct RoundLine<'a> {
    strategy: &'a str,
    seed: u64,
    test_subject: u32,
    round: usize,
    selected: &'a [usize],
    m: usize,
    client_losses: &'a [f64],
    mean_train_loss: f64,
    test_accuracy: Option<f64>,
}

/// Writes `bytes` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let io = |e| CliError::io(path, e);
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

/// JSON lines, one per round of every cell, without wall-clock times.
pub fn rounds_jsonl(cells: &[CellResult]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for c in cells {
        for r in &c.records {
            let line = RoundLine {
                strategy: c.strategy.name(),
                seed: c.seed,
                test_subject: c.test_subject,
                round: r.round,
                selected: &r.selected,
                m: r.m,
                client_losses: &r.client_losses,
                mean_train_loss: r.mean_train_loss,
                test_accuracy: r.test_accuracy,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.push(b'\n');
        }
    }
    Ok(out)
}

/// Paired tests of `reference` against every other approach in the table,
/// BH-adjusted. Only the header is written when there is nothing to compare.
pub fn stats_csv(table: &AccuracyTable, reference: &str, model: &str) -> Result<Vec<u8>> {
    let others: Vec<&str> = table.approaches().filter(|a| *a != reference).collect();
    let comparisons = if others.is_empty() || table.approaches().all(|a| a != reference) {
        Vec::new()
    } else {
        match table.compare(reference, &others) {
            Err(fedbs::Error::Degenerate(m)) => {
                eprintln!("note: statistics skipped: {m}");
                Vec::new()
            }
            other => other?,
        }
    };
    let mut out = Vec::new();
    write_comparisons_csv(model, &comparisons, &mut out)?;
    Ok(out)
}

/// The BN/SAM ingredient matrix with mean accuracies, when every ablation
/// strategy was run.
pub fn ablation_csv(table: &AccuracyTable) -> Result<Option<Vec<u8>>> {
    let means: Option<Vec<f64>> = Strategy::ABLATION.iter().map(|s| table.mean(s.name())).collect();
    let Some(means) = means else { return Ok(None) };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["strategy", "local_bn", "sam", "mean_accuracy"]).map_err(fedbs::Error::from)?;
    for (s, m) in Strategy::ABLATION.iter().zip(means) {
        w.write_record([s.name(), &s.local_bn().to_string(), &s.uses_sam().to_string(), &format!("{m:?}")])
            .map_err(fedbs::Error::from)?;
    }
    Ok(Some(w.into_inner().map_err(|e| CliError::Config(e.to_string()))?))
}

fn model_name(cfg: &ExperimentConfig) -> String {
    serde_json::to_value(cfg.backbone.kind).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

/// Reference approach of the statistics report.
pub fn reference_strategy(cfg: &ExperimentConfig) -> Strategy {
    if cfg.strategies.contains(&Strategy::FedBs) {
        Strategy::FedBs
    } else {
        cfg.strategies[0]
    }
}

/// Writes `rounds.jsonl`, `accuracy.csv`, `stats.csv` and, for ablation
/// grids, `ablation.csv` into `dir`. Returns the written paths.
pub fn write_outputs(cfg: &ExperimentConfig, out: &ExperimentOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut accuracy = Vec::new();
    out.table.write_csv(&mut accuracy)?;
    let mut files = vec![
        ("rounds.jsonl", rounds_jsonl(&out.cells)?),
        ("accuracy.csv", accuracy),
        ("stats.csv", stats_csv(&out.table, reference_strategy(cfg).name(), &model_name(cfg))?),
    ];
    if let Some(bytes) = ablation_csv(&out.table)? {
        files.push(("ablation.csv", bytes));
    }
    let mut written = Vec::new();
    for (name, bytes) in files {
        let path = dir.join(name);
        write_atomic(&path, &bytes)?;
        written.push(path);
    }
    Ok(written)
}
