//! End-to-end runs: synthetic generation, calibration with evaluation, and
//! ablation over the Dupire weight.

use std::path::{Path, PathBuf};

use crate::dupire::{scale_quotes, MarketFrame, OptionQuote};
use crate::error::{Error, Result};
use crate::io::{
    quotes_hash, write_report, write_trace, CalibrationReport, ExperimentConfig, Metric, Reference, RunResult,
};
use crate::mc::{
    generate_synthetic_dataset, local_vol_rmse, model_prices, reference_prices, reprice_rmse, rmse, ExactField,
    RepriceReport, SimConfig, StrikeMaturityGrid, SyntheticDataset,
};
use crate::net::{PriceSurfaceModel, VolSurfaceModel};
use crate::optim::{BETA1, BETA2, EPSILON};
use crate::trainer::{checkpoint_save, Checkpoint, TrainConfig, TrainTrace, Trainer};

/// Frame used to generate synthetic quotes: strikes are normalized by the
/// top of the configured strike range.
pub fn generation_frame(cfg: &ExperimentConfig) -> Result<MarketFrame> {
    let m = &cfg.market;
    MarketFrame::new(
        m.spot,
        m.rate,
        m.k_max.unwrap_or(cfg.grid.strike_range[1]),
        m.t_max.unwrap_or(cfg.grid.maturity_range[1]),
        m.kind,
    )
}

/// Monte Carlo quotes on the configured grid under the exact test volatility.
pub fn generate(cfg: &ExperimentConfig) -> Result<(SyntheticDataset, MarketFrame)> {
    cfg.validate()?;
    let frame = generation_frame(cfg)?;
    let grid = cfg.grid.quote_grid()?;
    let dataset = generate_synthetic_dataset(&grid, &ExactField::new(frame), &frame, &cfg.sim)?;
    Ok((dataset, frame))
}

/// Reference data shared by every run that is evaluated against it.
pub struct Evaluation {
    pub grid: StrikeMaturityGrid,
    pub reference: Reference,
    pub reference_prices: Option<Vec<f64>>,
    pub reprice_sim: SimConfig,
}

impl Evaluation {
    pub fn prepare(cfg: &ExperimentConfig, frame: &MarketFrame) -> Result<Self> {
        let grid = cfg.grid.grid_of(cfg.eval.maturities, cfg.eval.strikes)?;
        let reprice_sim = SimConfig {
            n_paths: cfg.eval.paths,
            seed: cfg.eval.seed,
            horizon: cfg.sim.horizon.max(frame.t_max),
            record_increments: false,
            ..cfg.sim
        };
        let reference_prices = match cfg.eval.reference {
            Reference::Exact => Some(reference_prices(&grid, &ExactField::new(*frame), frame, &reprice_sim)?),
            Reference::None => None,
        };
        Ok(Evaluation {
            grid,
            reference: cfg.eval.reference,
            reference_prices,
            reprice_sim,
        })
    }

    pub fn price_rmse(&self, price: &PriceSurfaceModel) -> Result<Metric> {
        match &self.reference_prices {
            Some(reference) => Ok(Metric::Value(rmse(&model_prices(price, &self.grid), reference)?)),
            None => Ok(Metric::NotApplicable),
        }
    }

    pub fn vol_rmse(&self, vol: &VolSurfaceModel) -> Result<Metric> {
        match self.reference {
            Reference::Exact => Ok(Metric::Value(local_vol_rmse(vol, &self.grid)?)),
            Reference::None => Ok(Metric::NotApplicable),
        }
    }

    pub fn reprice(&self, vol: &VolSurfaceModel, quotes: &[OptionQuote]) -> Result<RepriceReport> {
        reprice_rmse(vol, quotes, &vol.frame, &self.reprice_sim)
    }
}

pub struct RunOutcome {
    pub result: RunResult,
    pub checkpoint: Checkpoint,
    pub trace: TrainTrace,
}

/// Where a run writes its checkpoint and trace.
pub fn run_dir(out_dir: &Path, lambda: f64, seed: u64) -> PathBuf {
    out_dir.join(format!("lambda-{lambda}-seed-{seed}"))
}

/// Trains once and scores the result. With `out_dir`, the run's checkpoint
/// and trace go to [`run_dir`].
pub fn calibrate_once(
    quotes: &[OptionQuote],
    frame: &MarketFrame,
    train: &TrainConfig,
    eval: &Evaluation,
    out_dir: Option<&Path>,
    progress_every: usize,
) -> Result<RunOutcome> {
    let scaled = scale_quotes(quotes, frame)?;
    let mut trainer = Trainer::new(&scaled, *frame, train.clone())?;
    trainer.log_progress_every(progress_every);
    let dir = out_dir.map(|d| run_dir(d, train.lambda_dup, train.seed));
    let ckpt_path = dir.as_ref().map(|d| d.join("checkpoint.json"));
    let run = trainer.run(ckpt_path.as_deref());
    if let (Err(Error::DivergedTraining { .. }), Some(path)) = (&run, &ckpt_path) {
        // keep the rolled-back state for inspection
        checkpoint_save(path, &trainer.checkpoint())?;
    }
    run?;
    let checkpoint = trainer.checkpoint();
    let (price, vol, trace) = trainer.into_parts();
    if let Some(d) = &dir {
        write_trace(&d.join("trace.csv"), &trace)?;
    }
    let reprice = eval.reprice(&vol, quotes)?;
    let result = RunResult {
        lambda: train.lambda_dup,
        seed: train.seed,
        iterations: checkpoint.state.iter,
        stopped_early: trace.stopped_early,
        price_rmse: Some(eval.price_rmse(&price)?),
        vol_rmse: Some(eval.vol_rmse(&vol)?),
        reprice_rmse: Some(Metric::Value(reprice.rmse)),
    };
    log::info!(
        "lambda {} seed {}: {} iterations, price rmse {:?}, vol rmse {:?}, reprice rmse {:.4}",
        train.lambda_dup,
        train.seed,
        result.iterations,
        result.price_rmse.and_then(|m| m.value()),
        result.vol_rmse.and_then(|m| m.value()),
        reprice.rmse
    );
    Ok(RunOutcome {
        result,
        checkpoint,
        trace,
    })
}

pub fn optimizer_label() -> String {
    format!("adam(beta1={BETA1},beta2={BETA2},eps={EPSILON})")
}

/// Calibrates every `(lambda, repeat)` pair; repeat `i` uses training seed
/// `train.seed + i`. Writes `report.csv` under `out_dir` when given.
pub fn run_ablation(
    quotes: &[OptionQuote],
    frame: &MarketFrame,
    cfg: &ExperimentConfig,
    lambdas: &[f64],
    repeats: usize,
    out_dir: Option<&Path>,
    progress_every: usize,
) -> Result<CalibrationReport> {
    if lambdas.is_empty() {
        return Err(Error::InvalidConfig("at least one lambda is required".into()));
    }
    if repeats == 0 {
        return Err(Error::InvalidConfig("repeats must be positive".into()));
    }
    let eval = Evaluation::prepare(cfg, frame)?;
    let mut runs = Vec::with_capacity(lambdas.len() * repeats);
    for &lambda in lambdas {
        for i in 0..repeats {
            let train = TrainConfig {
                lambda_dup: lambda,
                seed: cfg.train.seed.wrapping_add(i as u64),
                ..cfg.train.clone()
            };
            runs.push(calibrate_once(quotes, frame, &train, &eval, out_dir, progress_every)?.result);
        }
    }
    let report = CalibrationReport {
        config_hash: cfg.fingerprint()?,
        data_hash: quotes_hash(quotes),
        optimizer: optimizer_label(),
        runs,
    };
    if let Some(dir) = out_dir {
        write_report(&report, &dir.join("report.csv"))?;
    }
    Ok(report)
}
