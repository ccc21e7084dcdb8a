//! Grid sweeps over slicing mode × slice size × seed.

use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::report::{ensure_dir, write_csv, write_json, write_text};
use super::svg::{line_chart, Series};
use super::train::{train_on, Dataset};
use crate::error::{Error, Result};
use crate::slicing::SliceMode;

pub const SWEEP_RUNS_CSV: &str = "sweep_runs.csv";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_JSON: &str = "sweep.json";
pub const SWEEP_SVG: &str = "f1_vs_slice_size.svg";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub modes: Vec<SliceMode>,
    pub sizes: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() || self.sizes.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("sweep needs at least one mode, size and seed".into()));
        }
        if self.sizes.contains(&0) {
            return Err(Error::Config("sweep slice sizes must be positive".into()));
        }
        Ok(())
    }

    /// Cells in output order: mode, then size, then seed.
    pub fn cells(&self) -> Vec<(SliceMode, usize, u64)> {
        let mut out = Vec::with_capacity(self.modes.len() * self.sizes.len() * self.seeds.len());
        for &m in &self.modes {
            for &s in &self.sizes {
                for &seed in &self.seeds {
                    out.push((m, s, seed));
                }
            }
        }
        out
    }
}

/// One trained cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub mode: SliceMode,
    pub slice_size: usize,
    pub seed: u64,
    pub best_epoch: usize,
    pub dev_f1: f64,
    pub dev_em: f64,
    pub dev_f1_early: f64,
    pub seconds: f64,
}

/// Runs of one (mode, size) pair averaged over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub mode: SliceMode,
    pub slice_size: usize,
    pub runs: usize,
    pub mean_f1: f64,
    pub min_f1: f64,
    pub max_f1: f64,
    pub mean_em: f64,
    pub mean_f1_early: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub runs: Vec<SweepRun>,
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    pub fn cell(&self, mode: SliceMode, slice_size: usize) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.mode == mode && c.slice_size == slice_size)
    }
}

pub fn cell_config(base: &RunConfig, mode: SliceMode, slice_size: usize, seed: u64) -> RunConfig {
    let mut cfg = base.clone();
    cfg.slicing.mode = mode;
    cfg.slicing.slice_size = slice_size;
    cfg.train.seed = seed;
    cfg
}

/// Groups runs by (mode, size) in first-seen order.
pub fn aggregate(runs: &[SweepRun]) -> Vec<SweepCell> {
    let mut keys: Vec<(SliceMode, usize)> = Vec::new();
    for r in runs {
        if !keys.contains(&(r.mode, r.slice_size)) {
            keys.push((r.mode, r.slice_size));
        }
    }
    keys.into_iter()
        .map(|(mode, slice_size)| {
            let rs: Vec<&SweepRun> = runs.iter().filter(|r| r.mode == mode && r.slice_size == slice_size).collect();
            let n = rs.len() as f64;
            let f1 = rs.iter().map(|r| r.dev_f1);
            SweepCell {
                mode,
                slice_size,
                runs: rs.len(),
                mean_f1: f1.clone().sum::<f64>() / n,
                min_f1: f1.clone().fold(f64::INFINITY, f64::min),
                max_f1: f1.fold(f64::NEG_INFINITY, f64::max),
                mean_em: rs.iter().map(|r| r.dev_em).sum::<f64>() / n,
                mean_f1_early: rs.iter().map(|r| r.dev_f1_early).sum::<f64>() / n,
            }
        })
        .collect()
}

/// Writes per-run and per-cell CSVs, the JSON result and the F1 chart.
pub fn write_sweep(dir: &Path, result: &SweepResult) -> Result<()> {
    ensure_dir(dir)?;
    write_csv(&dir.join(SWEEP_RUNS_CSV), &result.runs)?;
    write_csv(&dir.join(SWEEP_CSV), &result.cells)?;
    write_json(&dir.join(SWEEP_JSON), result)?;
    let mut series: Vec<Series> = Vec::new();
    for c in &result.cells {
        let name = c.mode.name();
        match series.iter_mut().find(|s| s.name == name) {
            Some(s) => s.points.push((c.slice_size as f64, c.mean_f1)),
            None => series.push(Series {
                name: name.to_string(),
                points: vec![(c.slice_size as f64, c.mean_f1)],
            }),
        }
    }
    write_text(
        &dir.join(SWEEP_SVG),
        &line_chart("Dev F1 by slice size", "slice size", "text F1", &series, true),
    )
}

fn run_cell(base: &RunConfig, data: &Dataset, mode: SliceMode, size: usize, seed: u64) -> Result<SweepRun> {
    let cfg = cell_config(base, mode, size, seed);
    let t = Instant::now();
    let out = train_on(&cfg, data)?;
    let best = out
        .history
        .iter()
        .find(|h| h.epoch == out.best_epoch)
        .cloned()
        .ok_or_else(|| Error::invalid("sweep", "training ran no epochs"))?;
    Ok(SweepRun {
        mode,
        slice_size: size,
        seed,
        best_epoch: out.best_epoch,
        dev_f1: best.dev_f1,
        dev_em: best.dev_em,
        dev_f1_early: best.dev_f1_early,
        seconds: t.elapsed().as_secs_f64(),
    })
}

/// Trains and evaluates every cell on `data`. With `out`, results are
/// rewritten after each finished cell, so a failure leaves the completed
/// cells on disk. `jobs > 1` trains cells on that many threads; each cell
/// is deterministic on its own, so the results do not depend on `jobs`.
pub fn run_sweep(
    base: &RunConfig,
    spec: &SweepSpec,
    data: &Dataset,
    out: Option<&Path>,
    jobs: usize,
) -> Result<SweepResult> {
    spec.validate()?;
    let cells = spec.cells();
    for &(mode, size, seed) in &cells {
        cell_config(base, mode, size, seed).validate()?;
    }
    let done: Mutex<Vec<Option<SweepRun>>> = Mutex::new(vec![None; cells.len()]);
    let failure: Mutex<Option<Error>> = Mutex::new(None);
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);

    let publish = |done: &[Option<SweepRun>]| -> Result<()> {
        match out {
            Some(dir) => {
                let runs: Vec<SweepRun> = done.iter().flatten().cloned().collect();
                let cells = aggregate(&runs);
                write_sweep(dir, &SweepResult { runs, cells })
            }
            None => Ok(()),
        }
    };

    let worker = || {
        while !stop.load(Ordering::SeqCst) {
            let i = next.fetch_add(1, Ordering::SeqCst);
            let Some(&(mode, size, seed)) = cells.get(i) else { break };
            info!("sweep cell {}/{}: {mode} slice {size} seed {seed}", i + 1, cells.len());
            let result = run_cell(base, data, mode, size, seed).and_then(|run| {
                info!("{mode} slice {size} seed {seed}: dev F1 {:.4} in {:.1}s", run.dev_f1, run.seconds);
                let mut d = done.lock().expect("sweep lock");
                d[i] = Some(run);
                publish(&d)
            });
            if let Err(e) = result {
                stop.store(true, Ordering::SeqCst);
                let completed = done.lock().expect("sweep lock").iter().flatten().count();
                failure.lock().expect("sweep lock").get_or_insert(Error::Sweep {
                    cell: format!("{mode}/{size}/seed {seed}"),
                    completed,
                    source: Box::new(e),
                });
            }
        }
    };
    if jobs <= 1 {
        worker();
    } else {
        std::thread::scope(|s| {
            for _ in 0..jobs.min(cells.len()) {
                s.spawn(worker);
            }
        });
    }
    if let Some(e) = failure.into_inner().expect("sweep lock") {
        return Err(e);
    }
    let runs: Vec<SweepRun> = done
        .into_inner()
        .expect("sweep lock")
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect();
    let cells = aggregate(&runs);
    Ok(SweepResult { runs, cells })
}
