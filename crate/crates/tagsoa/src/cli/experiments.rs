//! Runs seeded trials and reports them as CSV.

use std::collections::BTreeMap;

use rayon::prelude::*;
use tagsoa_core::pipeline::ErrorStats;
use tagsoa_core::RuntimeError;

use super::config::{ClockChoice, Demo, ExperimentConfig};
use crate::apps::brake::{run_reactor_pipeline, ReactorConfig};
use crate::apps::counter::counter_demo;
use crate::apps::naive::{run_naive_pipeline, NaiveConfig};
use crate::apps::Mode;
use crate::federation::Pacing;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{0}")]
    Unsupported(String),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
}

/// CSV rows of all trials plus a summary line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Report {
    pub header: String,
    pub rows: Vec<String>,
    pub summary: String,
    /// False if a reactor-mode trial reported errors.
    pub success: bool,
}

impl Report {
    pub fn csv(&self) -> String {
        let mut out = self.header.clone();
        out.push('\n');
        for row in &self.rows {
            out.push_str(row);
            out.push('\n');
        }
        out
    }
}

pub fn trial_seed(cfg: &ExperimentConfig, trial: u32) -> u64 {
    cfg.seed.wrapping_add(u64::from(trial))
}

pub fn reactor_config(cfg: &ExperimentConfig, seed: u64) -> ReactorConfig {
    ReactorConfig {
        period: cfg.period,
        deadlines: cfg.deadlines,
        max_latency: cfg.max_latency,
        max_skew: cfg.max_skew,
        latency: cfg.latency(),
        workers: cfg.workers,
        pacing: match cfg.clock {
            ClockChoice::Simulated => Pacing::Simulated,
            ClockChoice::Real => Pacing::RealTime,
        },
        ..ReactorConfig::new(cfg.frames, seed)
    }
}

pub fn naive_config(cfg: &ExperimentConfig, seed: u64) -> NaiveConfig {
    NaiveConfig {
        period: cfg.period,
        latency: cfg.latency(),
        ..NaiveConfig::new(cfg.frames, seed)
    }
}

/// Min, mean and max of the error rates exactly as printed in the rows.
pub fn summarize_rates(rows: &[String]) -> (f64, f64, f64) {
    let rates: Vec<f64> = rows
        .iter()
        .map(|r| {
            r.rsplit(',')
                .next()
                .and_then(|v| v.parse().ok())
                .expect("rows end with the error rate")
        })
        .collect();
    let min = rates.iter().copied().fold(f64::INFINITY, f64::min);
    let max = rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    (min, mean, max)
}

fn brake(cfg: &ExperimentConfig) -> Result<Report, RunError> {
    if cfg.mode == Mode::Naive && cfg.clock == ClockChoice::Real {
        return Err(RunError::Unsupported(
            "the naive pipeline runs on the simulated clock only".into(),
        ));
    }
    let results: Vec<Result<(ErrorStats, bool), RuntimeError>> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let seed = trial_seed(cfg, t);
            match cfg.mode {
                Mode::Naive => Ok((run_naive_pipeline(&naive_config(cfg, seed)).stats, true)),
                Mode::Reactor => {
                    let out = run_reactor_pipeline(&reactor_config(cfg, seed))?;
                    let clean = out.is_clean();
                    Ok((out.stats, clean))
                }
            }
        })
        .collect();
    let mut rows = Vec::new();
    let mut success = true;
    for (t, result) in (0..cfg.trials).zip(results) {
        let (stats, clean) = result?;
        success &= clean;
        rows.push(stats.csv_row(t, trial_seed(cfg, t)));
    }
    let (min, mean, max) = summarize_rates(&rows);
    Ok(Report {
        header: ErrorStats::CSV_HEADER.into(),
        summary: format!(
            "summary: {} {} trials, error_rate min={min:.6} mean={mean:.6} max={max:.6}",
            cfg.mode, cfg.trials
        ),
        rows,
        success,
    })
}

fn counter(cfg: &ExperimentConfig) -> Result<Report, RunError> {
    if cfg.clock == ClockChoice::Real {
        return Err(RunError::Unsupported(
            "the counter demo runs on the simulated clock only".into(),
        ));
    }
    let values: Vec<i64> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| counter_demo(cfg.mode, trial_seed(cfg, t)))
        .collect();
    let mut histogram = BTreeMap::new();
    for &v in &values {
        *histogram.entry(v).or_insert(0u32) += 1;
    }
    let counts: Vec<String> = histogram.iter().map(|(v, n)| format!("{v}:{n}")).collect();
    Ok(Report {
        header: "trial,seed,value".into(),
        rows: (0..cfg.trials)
            .zip(&values)
            .map(|(t, v)| format!("{t},{},{v}", trial_seed(cfg, t)))
            .collect(),
        summary: format!(
            "summary: {} {} trials, values {}",
            cfg.mode,
            cfg.trials,
            counts.join(" ")
        ),
        success: cfg.mode == Mode::Naive || values.iter().all(|&v| v == 3),
    })
}

pub fn run_experiments(cfg: &ExperimentConfig) -> Result<Report, RunError> {
    match cfg.demo {
        Demo::Brake => brake(cfg),
        Demo::Counter => counter(cfg),
    }
}

/// Trace of one reactor-mode brake run with `cfg.seed`: the records of all
/// platforms in platform order, and their digest.
pub fn trace_run(cfg: &ExperimentConfig) -> Result<(String, String), RunError> {
    if cfg.demo != Demo::Brake || cfg.mode != Mode::Reactor {
        return Err(RunError::Unsupported(
            "traces are available for the brake demo in reactor mode".into(),
        ));
    }
    let mut rc = reactor_config(cfg, cfg.seed);
    rc.keep_traces = true;
    let out = run_reactor_pipeline(&rc)?;
    let mut text = String::new();
    for (_, records) in &out.traces {
        for r in records {
            text.push_str(&r.to_string());
            text.push('\n');
        }
    }
    Ok((text, out.digest.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(pairs: &[(&str, &str)]) -> ExperimentConfig {
        ExperimentConfig::resolve(None, pairs.iter().copied()).unwrap()
    }

    #[test]
    fn reactor_trials_are_clean() {
        let c = cfg(&[("trials", "3"), ("frames", "100")]);
        let report = run_experiments(&c).unwrap();
        assert_eq!(report.rows.len(), 3);
        assert!(report.success);
        assert!(report.rows.iter().all(|r| r.ends_with(",0.000000")));
        assert_eq!(report.rows[1], "1,1,100,0,0,0,0,0,0.000000");
    }

    #[test]
    fn summary_matches_rows() {
        let c = cfg(&[
            ("mode", "naive"),
            ("trials", "6"),
            ("frames", "300"),
            ("seed", "4"),
        ]);
        let report = run_experiments(&c).unwrap();
        let (min, mean, max) = summarize_rates(&report.rows);
        assert!(report
            .summary
            .ends_with(&format!("min={min:.6} mean={mean:.6} max={max:.6}")));
        assert!(report.success);
        assert_eq!(report, run_experiments(&c).unwrap());
    }

    #[test]
    fn counter_reactor_prints_three() {
        let c = cfg(&[("demo", "counter"), ("trials", "20")]);
        let report = run_experiments(&c).unwrap();
        assert!(report.success);
        assert!(report.summary.ends_with("values 3:20"));
    }

    #[test]
    fn trace_digest_is_reproducible() {
        let c = cfg(&[("frames", "20")]);
        let (a, da) = trace_run(&c).unwrap();
        let (b, db) = trace_run(&c).unwrap();
        assert_eq!((a, da), (b, db));
        assert!(trace_run(&cfg(&[("mode", "naive")])).is_err());
    }
}
