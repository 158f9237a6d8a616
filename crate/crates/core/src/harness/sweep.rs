use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::harness::data::BlobDataset;
use crate::harness::net::TinyNet;
use crate::harness::train::{train_student, write_reports_csv, Mode, TrainConfig, TrainReport};

/// One training run of a sweep.
#[derive(Clone, Debug)]
pub struct SweepRun {
    pub mode: Mode,
    pub seed: u64,
    pub result: std::result::Result<TrainReport, Error>,
}

/// Final-accuracy statistics for one mode over the successful seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeSummary {
    pub mode: Mode,
    pub runs: usize,
    pub failures: usize,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug)]
pub struct SweepSummary {
    pub runs: Vec<SweepRun>,
    pub modes: Vec<ModeSummary>,
}

impl SweepSummary {
    pub fn mode(&self, mode: Mode) -> Option<&ModeSummary> {
        self.modes.iter().find(|m| m.mode == mode)
    }

    pub fn reports(&self, mode: Mode) -> Vec<&TrainReport> {
        self.runs
            .iter()
            .filter(|r| r.mode == mode)
            .filter_map(|r| r.result.as_ref().ok())
            .collect()
    }

    /// Summary CSV: `mode,runs,failures,median_acc,min_acc,max_acc`.
    pub fn write_summary_csv<W: std::io::Write>(
        &self,
        out: W,
    ) -> std::result::Result<(), csv::Error> {
        use crate::io::format_value as f;
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "mode",
            "runs",
            "failures",
            "median_acc",
            "min_acc",
            "max_acc",
        ])?;
        for m in &self.modes {
            w.write_record([
                m.mode.to_string(),
                m.runs.to_string(),
                m.failures.to_string(),
                f(m.median),
                f(m.min),
                f(m.max),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Per-epoch CSV of every successful run, in sweep order.
    pub fn write_runs_csv<W: std::io::Write>(&self, out: W) -> std::result::Result<(), csv::Error> {
        let reports: Vec<TrainReport> = self
            .runs
            .iter()
            .filter_map(|r| r.result.as_ref().ok().cloned())
            .collect();
        write_reports_csv(&reports, out)
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    })
}

/// Trains one student per `(mode, seed)`. Runs execute in parallel; each is
/// deterministic, so the summary does not depend on scheduling. A failing
/// run is recorded and does not abort the others.
pub fn run_seed_sweep(
    teacher: &TinyNet,
    data: &BlobDataset,
    base: &TrainConfig,
    modes: &[Mode],
    seeds: &[u64],
) -> Result<SweepSummary> {
    if seeds.is_empty() || modes.is_empty() {
        return Err(Error::InvalidArgument(
            "sweep needs at least one mode and one seed".into(),
        ));
    }
    base.validate()?;
    let jobs: Vec<(Mode, u64)> = modes
        .iter()
        .flat_map(|&m| seeds.iter().map(move |&s| (m, s)))
        .collect();
    let runs: Vec<SweepRun> = jobs
        .par_iter()
        .map(|&(mode, seed)| {
            let cfg = TrainConfig {
                mode,
                seed,
                ..base.clone()
            };
            SweepRun {
                mode,
                seed,
                result: train_student(teacher, data, &cfg),
            }
        })
        .collect();

    let mut summaries = Vec::new();
    for &mode in modes {
        if summaries.iter().any(|s: &ModeSummary| s.mode == mode) {
            continue;
        }
        let acc: Vec<f64> = runs
            .iter()
            .filter(|r| r.mode == mode)
            .filter_map(|r| r.result.as_ref().ok().map(|t| t.final_accuracy))
            .collect();
        let total = runs.iter().filter(|r| r.mode == mode).count();
        summaries.push(ModeSummary {
            mode,
            runs: acc.len(),
            failures: total - acc.len(),
            median: median(&acc).unwrap_or(f64::NAN),
            min: acc.iter().copied().fold(f64::INFINITY, f64::min),
            max: acc.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        });
    }
    Ok(SweepSummary {
        runs,
        modes: summaries,
    })
}
