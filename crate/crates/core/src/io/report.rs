use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::format::write_with_header;
use crate::error::{Error, Result};

/// A metric that was either measured or does not apply to the run (for
/// example a volatility error on market data with no reference surface).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Metric {
    Value(f64),
    NotApplicable,
}

impl Metric {
    pub fn value(&self) -> Option<f64> {
        match self {
            Metric::Value(v) => Some(*v),
            Metric::NotApplicable => None,
        }
    }
}

/// Outcome of one calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub lambda: f64,
    pub seed: u64,
    pub iterations: usize,
    pub stopped_early: bool,
    pub price_rmse: Option<Metric>,
    pub vol_rmse: Option<Metric>,
    pub reprice_rmse: Option<Metric>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    /// Sample standard deviation; zero for a single run.
    pub std: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Option<Spread> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Spread { mean, std })
    }
}

/// Results grouped by regularization weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub config_hash: String,
    pub data_hash: String,
    pub optimizer: String,
    pub runs: Vec<RunResult>,
}

impl CalibrationReport {
    /// Distinct weights in first-seen order.
    pub fn lambdas(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for r in &self.runs {
            if !out.iter().any(|l| l.to_bits() == r.lambda.to_bits()) {
                out.push(r.lambda);
            }
        }
        out
    }

    pub fn runs_for(&self, lambda: f64) -> impl Iterator<Item = &RunResult> {
        self.runs.iter().filter(move |r| r.lambda.to_bits() == lambda.to_bits())
    }

    fn check_complete(&self) -> Result<()> {
        if self.runs.is_empty() {
            return Err(Error::SchemaViolation("report has no runs".into()));
        }
        for r in &self.runs {
            for (name, m) in [("price_rmse", r.price_rmse), ("vol_rmse", r.vol_rmse), ("reprice_rmse", r.reprice_rmse)] {
                match m {
                    None => {
                        return Err(Error::SchemaViolation(format!(
                            "run lambda={} seed={} is missing {name}",
                            r.lambda, r.seed
                        )))
                    }
                    Some(Metric::Value(v)) if !v.is_finite() => {
                        return Err(Error::SchemaViolation(format!(
                            "run lambda={} seed={} has non-finite {name}",
                            r.lambda, r.seed
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Mean and spread of one metric over the runs at `lambda`; `None` when
    /// the metric does not apply.
    pub fn spread(&self, lambda: f64, pick: impl Fn(&RunResult) -> Option<Metric>) -> Option<Spread> {
        let values: Vec<f64> = self.runs_for(lambda).filter_map(|r| pick(r).and_then(|m| m.value())).collect();
        Spread::of(&values)
    }
}

fn fmt_spread(s: Option<Spread>) -> String {
    match s {
        Some(s) => format!("{:?},{:?}", s.mean, s.std),
        None => "na,na".into(),
    }
}

fn fmt_metric(m: Option<Metric>) -> String {
    match m.and_then(|m| m.value()) {
        Some(v) => format!("{v:?}"),
        None => "na".into(),
    }
}

pub fn runs_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}_runs.csv"))
}

/// Writes the aggregate CSV (one row per weight) to `path` and the per-run
/// CSV next to it. Refuses to write when any run lacks a metric.
pub fn write_report(report: &CalibrationReport, path: &Path) -> Result<()> {
    report.check_complete()?;
    let mut body = String::from(
        "lambda,runs,seeds,price_rmse_mean,price_rmse_std,vol_rmse_mean,vol_rmse_std,reprice_rmse_mean,reprice_rmse_std,config_hash,data_hash,optimizer\n",
    );
    for lambda in report.lambdas() {
        let runs: Vec<&RunResult> = report.runs_for(lambda).collect();
        let seeds: Vec<String> = runs.iter().map(|r| r.seed.to_string()).collect();
        writeln!(
            body,
            "{lambda:?},{},{},{},{},{},{},{},{}",
            runs.len(),
            seeds.join(";"),
            fmt_spread(report.spread(lambda, |r| r.price_rmse)),
            fmt_spread(report.spread(lambda, |r| r.vol_rmse)),
            fmt_spread(report.spread(lambda, |r| r.reprice_rmse)),
            report.config_hash,
            report.data_hash,
            report.optimizer,
        )
        .expect("string write");
    }
    write_with_header(path, &body)?;

    let mut runs = String::from("lambda,seed,iterations,stopped_early,price_rmse,vol_rmse,reprice_rmse\n");
    for r in &report.runs {
        writeln!(
            runs,
            "{:?},{},{},{},{},{},{}",
            r.lambda,
            r.seed,
            r.iterations,
            r.stopped_early,
            fmt_metric(r.price_rmse),
            fmt_metric(r.vol_rmse),
            fmt_metric(r.reprice_rmse)
        )
        .expect("string write");
    }
    write_with_header(&runs_path(path), &runs)
}
