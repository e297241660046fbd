//! The four subcommands. Each writes its files into an output directory and
//! returns a JSON summary for standard output.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use grasspca_core::data::{partition, pool, synth_generate, ClientDataset, Dataset};
use grasspca_core::detection::{evaluate, fit_normalizer, score_dataset_with, Normalizer, ThresholdMode};
use grasspca_core::federation::{run_training_with, Clock, NoClock, RoundRecord};
use grasspca_core::Basis;
use serde_json::{json, Value};

use crate::config::{DataSource, ExperimentConfig, ThresholdChoice};
use crate::csvio::{self, LoadSummary};
use crate::error::{CliError, FieldIssue, ValidationError};
use crate::exec::{RayonExecutor, WallClock};

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Worker threads for the per-client solves; 0 means one per core.
    pub threads: usize,
    /// Record elapsed seconds in the history. Off by default so that
    /// histories are byte-identical across runs.
    pub wall_time: bool,
}

/// Training clients and (optionally) the labeled test set, normalized with
/// statistics of the pooled training data.
pub struct Prepared {
    pub clients: Vec<ClientDataset>,
    pub test: Option<Dataset>,
    pub normalizer: Option<Normalizer>,
    pub feature_names: Vec<String>,
    pub loads: Vec<LoadSummary>,
}

fn load_train(path: &Path, label_column: Option<&str>) -> Result<(Dataset, LoadSummary), CliError> {
    // A label column in the training file is optional; when present only the
    // normal rows are kept.
    let label = label_column.filter(|l| csvio::read_header(path).is_ok_and(|h| h.iter().any(|c| c == l)));
    let (ds, mut summary) = csvio::load_csv(path, label)?;
    let Some(labels) = &ds.labels else {
        return Ok((ds, summary));
    };
    let normal: Vec<usize> = (0..ds.len()).filter(|&j| labels[j] == 0).collect();
    if normal.is_empty() {
        return Err(CliError::EmptyAfterFiltering(path.to_path_buf()));
    }
    let mut kept = ds.select(&normal);
    kept.labels = None;
    summary.rows_dropped += ds.len() - normal.len();
    summary.rows_kept = normal.len();
    Ok((kept, summary))
}

fn load_test(path: &Path, label_column: Option<&str>, names: &[String]) -> Result<(Dataset, LoadSummary), CliError> {
    let Some(label) = label_column else {
        return Err(ValidationError {
            issues: vec![FieldIssue {
                field: "label_column".into(),
                reason: "is required to evaluate".into(),
            }],
        }
        .into());
    };
    let (ds, summary) = csvio::load_csv(path, Some(label))?;
    if ds.feature_names != names {
        return Err(CliError::header(
            path,
            "feature columns differ from the training file".into(),
        ));
    }
    Ok((ds, summary))
}

fn normalize_clients(clients: &mut [ClientDataset], n: &Normalizer) -> Result<(), CliError> {
    for c in clients {
        c.features = n.apply(&c.features)?;
    }
    Ok(())
}

/// Loads or generates the data described by `cfg`.
pub fn prepare(cfg: &ExperimentConfig, with_test: bool) -> Result<Prepared, CliError> {
    match &cfg.data {
        DataSource::Files {
            train,
            test,
            label_column,
        } => {
            let (mut ds, train_summary) = load_train(train, label_column.as_deref())?;
            let mut loads = vec![train_summary];
            let normalizer = if cfg.normalize {
                let n = fit_normalizer(&ds.features)?;
                ds.features = n.apply(&ds.features)?;
                Some(n)
            } else {
                None
            };
            let test = match (with_test, test) {
                (false, _) => None,
                (true, None) => {
                    return Err(ValidationError {
                        issues: vec![FieldIssue {
                            field: "test".into(),
                            reason: "is required to evaluate".into(),
                        }],
                    }
                    .into())
                }
                (true, Some(path)) => {
                    let (mut t, s) = load_test(path, label_column.as_deref(), &ds.feature_names)?;
                    if let Some(n) = &normalizer {
                        t.features = n.apply(&t.features)?;
                    }
                    loads.push(s);
                    Some(t)
                }
            };
            let clients = partition(&ds, &cfg.partition, cfg.hyperparams.seed)?;
            Ok(Prepared {
                clients,
                test,
                normalizer,
                feature_names: ds.feature_names,
                loads,
            })
        }
        DataSource::Synthetic(s) => {
            let data = synth_generate(s)?;
            let mut clients = data.clients;
            let mut test = data.test;
            let normalizer = if cfg.normalize {
                let n = fit_normalizer(&pool(&clients)?)?;
                normalize_clients(&mut clients, &n)?;
                test.features = n.apply(&test.features)?;
                Some(n)
            } else {
                None
            };
            Ok(Prepared {
                clients,
                feature_names: test.feature_names.clone(),
                test: with_test.then_some(test),
                normalizer,
                loads: Vec::new(),
            })
        }
    }
}

fn out_dir(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Load summaries go to standard error so that standard output carries only
/// the command's result.
pub fn log_loads(loads: &[LoadSummary]) {
    for l in loads {
        eprintln!("{}", json!({ "load": l }));
    }
}

fn file_list(out: &Path, names: &[&str]) -> Vec<String> {
    names.iter().map(|n| out.join(n).display().to_string()).collect()
}

/// Writes one CSV per client (in the layout `load_csv` reads) and
/// `partition.json`.
pub fn cmd_partition(cfg: &ExperimentConfig, out: &Path) -> Result<Value, CliError> {
    let prepared = prepare(cfg, false)?;
    log_loads(&prepared.loads);
    out_dir(out)?;
    let mut files = Vec::new();
    let mut sizes = Vec::new();
    for c in &prepared.clients {
        let ds = Dataset::new(c.features.clone(), None, prepared.feature_names.clone())?;
        let path = out.join(format!("client_{:03}.csv", c.id));
        csvio::save_csv(&path, &ds, "label")?;
        files.push(path.display().to_string());
        sizes.push(c.len());
    }
    let summary = json!({
        "n_clients": prepared.clients.len(),
        "strategy": cfg.partition.strategy,
        "group_feature": cfg.partition.group_feature,
        "seed": cfg.hyperparams.seed,
        "normalized": prepared.normalizer.is_some(),
        "sizes": sizes,
        "files": files,
    });
    write_text(&out.join("partition.json"), &serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

fn history_jsonl(history: &[RoundRecord]) -> Result<String, CliError> {
    let mut text = String::new();
    for r in history {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    Ok(text)
}

/// Trains the consensus basis and writes `basis.csv`, `history.jsonl` and
/// `manifest.json`. The manifest is itself a valid config reproducing the run.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path, opts: RunOptions) -> Result<Value, CliError> {
    let clock = WallClock::start();
    let prepared = prepare(cfg, false)?;
    log_loads(&prepared.loads);
    let exec = RayonExecutor::new(opts.threads)?;
    let run = if opts.wall_time {
        run_training_with(&prepared.clients, &cfg.hyperparams, &exec, &clock)?
    } else {
        run_training_with(&prepared.clients, &cfg.hyperparams, &exec, &NoClock)?
    };
    out_dir(out)?;
    let basis_path = out.join("basis.csv");
    csvio::write_matrix(&basis_path, run.basis.matrix())?;
    if csvio::read_matrix(&basis_path)? != *run.basis.matrix() {
        return Err(CliError::io(
            &basis_path,
            std::io::Error::other("basis did not read back identically"),
        ));
    }
    write_text(&out.join("history.jsonl"), &history_jsonl(&run.history)?)?;

    let last = run.history.last();
    let mut manifest = cfg.to_json();
    manifest["run"] = json!({
        "seed": cfg.hyperparams.seed,
        "clients": prepared.clients.len(),
        "rounds": run.history.len(),
        "wall_time_seconds": clock.now(),
        "outputs": file_list(out, &["basis.csv", "history.jsonl"]),
    });
    write_text(&out.join("manifest.json"), &serde_json::to_string_pretty(&manifest)?)?;
    Ok(json!({
        "basis": basis_path.display().to_string(),
        "rounds": run.history.len(),
        "final": last,
    }))
}

fn threshold_mode(cfg: &ExperimentConfig) -> ThresholdMode {
    match cfg.threshold {
        ThresholdChoice::Youden => ThresholdMode::Youden,
        ThresholdChoice::Fixed(t) => ThresholdMode::Fixed(t),
        ThresholdChoice::Holdout(fraction) => ThresholdMode::Holdout {
            fraction,
            seed: cfg.hyperparams.seed,
        },
    }
}

/// Scores the test set against `basis_path` and writes `report.json`,
/// `roc.csv` and `pr.csv`. Returns the report and the printable table row.
pub fn cmd_evaluate(
    cfg: &ExperimentConfig,
    basis_path: &Path,
    out: &Path,
    opts: RunOptions,
) -> Result<(Value, String), CliError> {
    let basis = Basis::new(csvio::read_matrix(basis_path)?)?;
    let prepared = prepare(cfg, true)?;
    log_loads(&prepared.loads);
    let test = prepared.test.expect("prepare(with_test) returns a test set");
    if test.dim() != basis.matrix().rows() {
        return Err(CliError::header(
            basis_path,
            format!(
                "basis has {} rows, test data has {} features",
                basis.matrix().rows(),
                test.dim()
            ),
        ));
    }
    let labels = test.labels.as_deref().unwrap_or_default();
    let exec = RayonExecutor::new(opts.threads)?;
    let scores = score_dataset_with(&basis, &test.features, &exec)?;
    let report = evaluate(&scores, labels, threshold_mode(cfg))?;

    out_dir(out)?;
    csvio::write_pairs(
        &out.join("roc.csv"),
        ("fpr", "tpr"),
        report.roc.iter().map(|p| (p.fpr, p.tpr)),
    )?;
    csvio::write_pairs(
        &out.join("pr.csv"),
        ("recall", "precision"),
        report.pr.iter().map(|p| (p.recall, p.precision)),
    )?;
    let row = format!(
        "{} | AUC-ROC {:.4} | AP {:.4}",
        report.metrics.table_row(),
        report.auc_roc,
        report.average_precision
    );
    let mut value = serde_json::to_value(&report)?;
    value["threshold_mode"] = cfg.to_json()["threshold"].clone();
    write_text(&out.join("report.json"), &serde_json::to_string_pretty(&value)?)?;
    Ok((value, row))
}

/// Parses a JSON Lines history; every line must be a round record.
pub fn read_history(path: &Path) -> Result<Vec<RoundRecord>, CliError> {
    let file = fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::MissingFile(path.to_path_buf()),
        _ => CliError::io(path, e),
    })?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        let record: RoundRecord = serde_json::from_str(&line).map_err(|e| CliError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            detail: e.to_string(),
        })?;
        records.push(record);
    }
    if records.is_empty() {
        return Err(CliError::Parse {
            path: path.to_path_buf(),
            line: 1,
            detail: "history is empty".into(),
        });
    }
    Ok(records)
}

/// Largest rise of the Lagrangian from one round to the next, counted only
/// between rounds after the second. Returns `(round, increase)`.
pub fn largest_increase(history: &[RoundRecord]) -> Option<(usize, f64)> {
    history
        .windows(2)
        .filter(|w| w[0].round >= 2)
        .map(|w| (w[1].round, w[1].lagrangian - w[0].lagrangian))
        .fold(None, |best, cur| match best {
            Some((_, b)) if b >= cur.1 => best,
            _ => Some(cur),
        })
}

/// Writes `rounds.csv`; with `assert_monotone` also checks that the
/// Lagrangian never rises by more than the tolerance after round 2.
pub fn cmd_report(history_path: &Path, out: &Path, assert_monotone: Option<f64>) -> Result<Value, CliError> {
    let history = read_history(history_path)?;
    out_dir(out)?;
    let path: PathBuf = out.join("rounds.csv");
    let mut w = std::io::BufWriter::new(fs::File::create(&path).map_err(|e| CliError::io(&path, e))?);
    let io = |e| CliError::io(&path, e);
    writeln!(w, "round,lagrangian,consensus_residual,stationarity_gap,wall_time").map_err(io)?;
    for r in &history {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.round,
            csvio::format_value(r.lagrangian),
            csvio::format_value(r.consensus_residual),
            csvio::format_value(r.stationarity_gap),
            csvio::format_value(r.wall_time)
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)?;
    let increase = largest_increase(&history);
    if let (Some(tol), Some((round, inc))) = (assert_monotone, increase) {
        if inc > tol {
            return Err(CliError::NotMonotone {
                round,
                increase: inc,
                tolerance: tol,
            });
        }
    }
    Ok(json!({
        "rows": history.len(),
        "csv": path.display().to_string(),
        "largest_increase": increase.map(|(round, v)| json!({ "round": round, "increase": v })),
    }))
}
