use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use msl_core::head::Head;
use msl_core::model::Model;
use msl_core::stream::{generate_synthetic, load_features_table, split_tasks, DomainPool};
use msl_core::trainer::{run_experiment_with_models, ExperimentReport, Method, NoopObserver, TrainConfig};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{DataSource, ExperimentConfig};
use crate::error::CliError;

pub const REPORT_SCHEMA: &str = "msl-report/1";
pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cell {
    pub method: Method,
    pub held_out: usize,
    pub seed: u64,
}

impl Cell {
    pub fn name(&self) -> String {
        format!("{}_heldout{}_seed{}", self.method, self.held_out, self.seed)
    }
}

#[derive(Serialize)]
struct SeedProvenance {
    /// Seeds the generator; absent for feature tables.
    data_seed: Option<u64>,
    task_split_seed: u64,
    training_seed: u64,
}

#[derive(Serialize)]
struct Timing {
    started_unix_ms: u128,
    wall_clock_seconds: f64,
}

#[derive(Serialize)]
struct CellReport<'a> {
    schema: &'static str,
    method: Method,
    held_out_domain: usize,
    seed: u64,
    seeds: SeedProvenance,
    data: &'a DataSource,
    num_tasks: usize,
    timing: Timing,
    report: &'a ExperimentReport,
}

pub enum Outcome {
    Done { unseen_accuracy: f64 },
    Failed(String),
}

pub struct RunSummary {
    pub cells: Vec<(Cell, Outcome)>,
    pub table: String,
}

impl RunSummary {
    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|(_, o)| matches!(o, Outcome::Failed(_))).count()
    }
}

/// Source pools per seed; feature tables are loaded once.
enum Pools {
    Table(DomainPool),
    Synthetic(Vec<(u64, DomainPool)>),
}

impl Pools {
    fn get(&self, seed: u64) -> &DomainPool {
        match self {
            Pools::Table(p) => p,
            Pools::Synthetic(v) => &v.iter().find(|(s, _)| *s == seed).expect("pool per seed").1,
        }
    }
}

fn load_pools(cfg: &ExperimentConfig) -> Result<Pools, CliError> {
    match &cfg.data {
        DataSource::Features(path) => load_features_table(path).map(Pools::Table).map_err(CliError::Data),
        DataSource::Synthetic(s) => cfg
            .seeds
            .iter()
            .map(|&seed| Ok((seed, generate_synthetic(&s.with_seed(seed)).map_err(CliError::invalid)?)))
            .collect::<Result<Vec<_>, _>>()
            .map(Pools::Synthetic),
    }
}

/// Expands the grid and checks every cell can be set up.
fn plan(cfg: &ExperimentConfig, pools: &Pools) -> Result<Vec<Cell>, CliError> {
    let mut cells = Vec::new();
    for &seed in &cfg.seeds {
        let pool = pools.get(seed);
        split_tasks(pool.num_classes, cfg.tasks, seed).map_err(CliError::invalid)?;
        let held: Vec<usize> = match &cfg.held_out {
            Some(h) => h.clone(),
            None => (0..pool.num_domains()).collect(),
        };
        for &k in &held {
            pool.leave_one_out(k).map_err(CliError::invalid)?;
        }
        for &method in &cfg.methods {
            for &held_out in &held {
                cells.push(Cell { method, held_out, seed });
            }
        }
    }
    Ok(cells)
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

/// Runs the whole grid. Config and data problems are reported before any
/// file is written.
pub fn run(cfg: &ExperimentConfig) -> Result<RunSummary, CliError> {
    let pools = load_pools(cfg)?;
    let cells = plan(cfg, &pools)?;
    let reports = cfg.out.join("reports");
    let heads = cfg.out.join("heads");
    create_dir(&reports)?;
    create_dir(&heads)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {} workers: {e}", cfg.jobs)))?;
    let outcomes: Vec<Outcome> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let failed_marker = reports.join(format!("{}.FAILED.txt", cell.name()));
                let _ = std::fs::remove_file(&failed_marker);
                match run_cell(cfg, &pools, *cell, &reports, &heads) {
                    Ok(acc) => {
                        eprintln!("done    {} unseen accuracy {acc:.4}", cell.name());
                        Outcome::Done { unseen_accuracy: acc }
                    }
                    Err(msg) => {
                        eprintln!("FAILED  {}: {msg}", cell.name());
                        let _ = std::fs::write(&failed_marker, format!("{msg}\n"));
                        Outcome::Failed(msg)
                    }
                }
            })
            .collect()
    });
    let cells: Vec<(Cell, Outcome)> = cells.into_iter().zip(outcomes).collect();
    let table = summary_table(&cfg.methods, &cells);
    write(&cfg.out.join(SUMMARY_FILE), &table)?;
    Ok(RunSummary { cells, table })
}

fn run_cell(cfg: &ExperimentConfig, pools: &Pools, cell: Cell, reports: &Path, heads: &Path) -> Result<f64, String> {
    let started_unix_ms = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis());
    let start = Instant::now();
    let pool = pools.get(cell.seed);
    let data = pool.leave_one_out(cell.held_out).map_err(|e| e.to_string())?;
    let tasks = split_tasks(pool.num_classes, cfg.tasks, cell.seed).map_err(|e| e.to_string())?;
    let train: TrainConfig = cfg.cell_config(cell.method, cell.seed);
    let (report, models) =
        run_experiment_with_models(&data, &tasks, &train, &mut NoopObserver).map_err(|e| e.to_string())?;
    report.verify().map_err(|e| format!("report failed self-check: {e}"))?;
    let body = CellReport {
        schema: REPORT_SCHEMA,
        method: cell.method,
        held_out_domain: cell.held_out,
        seed: cell.seed,
        seeds: SeedProvenance {
            data_seed: matches!(cfg.data, DataSource::Synthetic(_)).then_some(cell.seed),
            task_split_seed: cell.seed,
            training_seed: train.seed,
        },
        data: &cfg.data,
        num_tasks: cfg.tasks,
        timing: Timing {
            started_unix_ms,
            wall_clock_seconds: start.elapsed().as_secs_f64(),
        },
        report: &report,
    };
    let json = serde_json::to_string_pretty(&body).map_err(|e| e.to_string())?;
    write(&reports.join(format!("{}.json", cell.name())), &json).map_err(|e| e.to_string())?;
    save_heads(&models, &heads.join(cell.name())).map_err(|e| e.to_string())?;
    Ok(report.unseen_accuracy)
}

/// One text file per repetition for metric heads; linear heads are not saved.
fn save_heads(models: &[Model], stem: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut paths = Vec::new();
    for (rep, model) in models.iter().enumerate() {
        if let Head::Mahalanobis(head) = &model.head {
            let path = PathBuf::from(format!("{}_rep{rep}.txt", stem.display()));
            head.save(&path).map_err(CliError::Data)?;
            paths.push(path);
        }
    }
    Ok(paths)
}

/// Rows are methods, columns held-out domains, cells the unseen-domain
/// accuracy averaged over seeds. Cells with a failed seed read `FAILED`.
pub fn summary_table(methods: &[Method], cells: &[(Cell, Outcome)]) -> String {
    let mut domains: Vec<usize> = cells.iter().map(|(c, _)| c.held_out).collect();
    domains.sort_unstable();
    domains.dedup();
    let mut out = String::from("method");
    for d in &domains {
        write!(out, ",heldout_{d}").unwrap();
    }
    out.push('\n');
    for &m in methods {
        out.push_str(m.name());
        for &d in &domains {
            let group: Vec<&Outcome> = cells
                .iter()
                .filter(|(c, _)| c.method == m && c.held_out == d)
                .map(|(_, o)| o)
                .collect();
            let accs: Option<Vec<f64>> = group
                .iter()
                .map(|o| match o {
                    Outcome::Done { unseen_accuracy } => Some(*unseen_accuracy),
                    Outcome::Failed(_) => None,
                })
                .collect();
            match accs {
                Some(v) if !v.is_empty() => write!(out, ",{:.6}", v.iter().sum::<f64>() / v.len() as f64).unwrap(),
                Some(_) => out.push(','),
                None => out.push_str(",FAILED"),
            }
        }
        out.push('\n');
    }
    out
}
