//! Runs the (model x polarity x scan time x seed) grid and writes the CSV
//! tables and tracked images.
//!
//! `mse.csv`: `model,polarity,scan_time_s,seed,mse,aborted,completed_lines`.
//! `aborted` is the line where the lock was lost, empty for complete scans;
//! `mse` covers the completed lines and is `NaN` when there are none.
//!
//! `timing.csv`: `model,polarity,scan_time_s,seed,line,compute_s,budget_s,fraction,locked`,
//! one row per image line. `compute_s` and `fraction` are wall-clock
//! measurements; every other column is a pure function of the config.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::config::ExperimentConfig;
use crate::control::{compute_budget_report, run_scan_detailed, BudgetReport, ModelKind};
use crate::error::Result;
use crate::grid::{mse_rows, Polarity, ScanResult};
use crate::matrix_io;
use crate::plant::Phantom;

pub const MSE_HEADER: &str = "model,polarity,scan_time_s,seed,mse,aborted,completed_lines";
pub const TIMING_HEADER: &str = "model,polarity,scan_time_s,seed,line,compute_s,budget_s,fraction,locked";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub model: ModelKind,
    pub polarity: Polarity,
    pub scan_time: f64,
    pub seed: u64,
}

impl Cell {
    fn stem(&self) -> String {
        format!("{}_{}_{}_{}", self.model.as_str(), self.polarity.as_str(), self.scan_time, self.seed)
    }
}

#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub cell: Cell,
    pub mse: f64,
    pub result: ScanResult,
    pub budget: BudgetReport,
}

/// Cells in output order: model, polarity, scan time, seed.
pub fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut out = Vec::with_capacity(cfg.cell_count());
    for &model in &cfg.models {
        for &polarity in &cfg.polarities {
            for &scan_time in &cfg.scan_times {
                for &seed in &cfg.seeds {
                    out.push(Cell { model, polarity, scan_time, seed });
                }
            }
        }
    }
    out
}

pub fn run_cell(cfg: &ExperimentConfig, phantom: &Phantom, cell: Cell) -> Result<CellOutcome> {
    let scan = cfg.scan_config(cell.model, cell.scan_time, cell.polarity);
    let outcome = run_scan_detailed(phantom, &scan, cell.seed)?;
    let result = outcome.result;
    let rows = result.completed_lines();
    let mse = if rows == 0 { f64::NAN } else { mse_rows(&result.image, phantom.map(cell.polarity), rows)? };
    let budget = compute_budget_report(&result, &scan, &phantom.grid);
    Ok(CellOutcome { cell, mse, result, budget })
}

/// Runs every cell on up to `jobs` threads; results come back in
/// [`cells`] order regardless of completion order.
pub fn run_grid(
    cfg: &ExperimentConfig,
    phantom: &Phantom,
    jobs: usize,
    on_done: impl Fn(&CellOutcome) + Sync,
) -> Result<Vec<CellOutcome>> {
    let cells = cells(cfg);
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<CellOutcome>>>> = Mutex::new(vec![None; cells.len()]);
    let workers = jobs.clamp(1, cells.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&cell) = cells.get(i) else { break };
                let out = run_cell(cfg, phantom, cell);
                if let Ok(o) = &out {
                    on_done(o);
                }
                slots.lock().expect("no worker panicked")[i] = Some(out);
            });
        }
    });
    slots.into_inner().expect("no worker panicked").into_iter().map(|o| o.expect("every cell ran")).collect()
}

pub fn mse_csv(outcomes: &[CellOutcome]) -> String {
    let mut s = format!("{MSE_HEADER}\n");
    for o in outcomes {
        let c = &o.cell;
        let aborted = o.result.aborted.map(|j| j.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{:.9e},{},{}",
            c.model.as_str(),
            c.polarity.as_str(),
            c.scan_time,
            c.seed,
            o.mse,
            aborted,
            o.result.completed_lines()
        );
    }
    s
}

pub fn timing_csv(outcomes: &[CellOutcome]) -> String {
    let mut s = format!("{TIMING_HEADER}\n");
    for o in outcomes {
        let c = &o.cell;
        for r in &o.budget.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{:.6},{:.6},{:.6},{}",
                c.model.as_str(),
                c.polarity.as_str(),
                c.scan_time,
                c.seed,
                r.line,
                r.compute_s,
                r.budget_s,
                r.fraction,
                r.locked
            );
        }
    }
    s
}

/// Files written by [`write_outputs`].
#[derive(Debug, Clone)]
pub struct Written {
    pub mse: PathBuf,
    pub timing: PathBuf,
    pub images: Vec<PathBuf>,
}

pub fn write_outputs(dir: &Path, outcomes: &[CellOutcome], images: bool) -> Result<Written> {
    std::fs::create_dir_all(dir)?;
    let mse = dir.join("mse.csv");
    let timing = dir.join("timing.csv");
    matrix_io::write_atomic(&mse, mse_csv(outcomes).as_bytes())?;
    matrix_io::write_atomic(&timing, timing_csv(outcomes).as_bytes())?;
    let mut paths = Vec::new();
    if images {
        let img_dir = dir.join("images");
        std::fs::create_dir_all(&img_dir)?;
        for o in outcomes {
            let c = &o.cell;
            let path = img_dir.join(format!("{}.txt", c.stem()));
            let header = vec![
                ("model".to_string(), c.model.as_str().to_string()),
                ("polarity".to_string(), c.polarity.as_str().to_string()),
                ("scan_time_s".to_string(), c.scan_time.to_string()),
                ("seed".to_string(), c.seed.to_string()),
                ("aborted".to_string(), o.result.aborted.map(|j| j.to_string()).unwrap_or_else(|| "none".into())),
            ];
            matrix_io::save(&path, &o.result.image, &header)?;
            paths.push(path);
        }
    }
    Ok(Written { mse, timing, images: paths })
}
