//! The alternating optimization loop: one collocation draw per iteration, an
//! Adam step on the price network against the total loss and an Adam step on
//! the volatility network against the Dupire loss.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dupire::{MarketFrame, ScaledQuote};
use crate::error::{Error, Result};
use crate::io::format::{read_json, write_json};
use crate::losses::{evaluate_with_gradients, CollocationSampler, FitData, LossBreakdown, LossLambdas};
use crate::net::{init_params, NetConfig, NetParams, PriceSurfaceModel, VolSurfaceModel};
use crate::optim::{optimizer_step, AdamState};

const VOL_SEED_OFFSET: u64 = 0x5eed_0000_0001;
const DEFAULT_SNAPSHOT_EVERY: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub m1: usize,
    pub m2: usize,
    pub lambda_ini: f64,
    pub lambda_arb: f64,
    pub lambda_dup: f64,
    pub max_iters: usize,
    pub lr0: f64,
    pub lr_decay: f64,
    pub lr_interval: usize,
    pub seed: u64,
    /// Iterations between checkpoint writes and in-memory rollback
    /// snapshots; 0 writes no checkpoints.
    pub checkpoint_every: usize,
    pub net: NetConfig,
    pub early_stop: bool,
    pub early_stop_window: usize,
    pub early_stop_tol: f64,
    /// Reverse-pass chunk size for the domain points; `None` is one batch.
    pub eval_chunk: Option<usize>,
    /// Skip the volatility update entirely when `lambda_dup == 0`.
    pub freeze_vol_when_unregularized: bool,
    /// Record every n-th iteration in the trace.
    pub trace_stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            m1: 128,
            m2: 128 * 128,
            lambda_ini: 1.0,
            lambda_arb: 1.0,
            lambda_dup: 1.0,
            max_iters: 30_000,
            lr0: 1e-3,
            lr_decay: 1.1,
            lr_interval: 2000,
            seed: 0,
            checkpoint_every: 0,
            net: NetConfig::default(),
            early_stop: true,
            early_stop_window: 2000,
            early_stop_tol: 1e-8,
            eval_chunk: None,
            freeze_vol_when_unregularized: false,
            trace_stride: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.m1 == 0 || self.m2 == 0 {
            return bad(format!("m1 and m2 must be positive, got {} and {}", self.m1, self.m2));
        }
        self.lambdas().validate()?;
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        if !(self.lr_decay.is_finite() && self.lr_decay > 0.0) {
            return bad(format!("lr_decay must be positive, got {}", self.lr_decay));
        }
        if self.lr_interval == 0 {
            return bad("lr_interval must be positive".into());
        }
        if self.early_stop && self.early_stop_window == 0 {
            return bad("early_stop_window must be positive".into());
        }
        if self.trace_stride == 0 {
            return bad("trace_stride must be positive".into());
        }
        if self.eval_chunk == Some(0) {
            return bad("eval_chunk must be positive".into());
        }
        self.net.validate()
    }

    pub fn lambdas(&self) -> LossLambdas {
        LossLambdas {
            ini: self.lambda_ini,
            arb: self.lambda_arb,
            dup: self.lambda_dup,
        }
    }

    /// SHA-256 over every field that shapes the optimization trajectory.
    /// The iteration budget, checkpoint cadence and trace stride are left
    /// out so a run can be resumed with a larger budget.
    pub fn fingerprint(&self) -> String {
        let canonical = TrainConfig {
            max_iters: 0,
            checkpoint_every: 0,
            trace_stride: 1,
            ..self.clone()
        };
        let json = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    fn snapshot_every(&self) -> usize {
        if self.checkpoint_every > 0 {
            self.checkpoint_every
        } else {
            DEFAULT_SNAPSHOT_EVERY
        }
    }

    fn vol_frozen(&self) -> bool {
        self.freeze_vol_when_unregularized && self.lambda_dup == 0.0
    }
}

/// `lr0 / lr_decay^floor(iter / lr_interval)`.
pub fn lr_at(iter: usize, config: &TrainConfig) -> f64 {
    let drops = (iter / config.lr_interval.max(1)) as i32;
    config.lr0 / config.lr_decay.powi(drops)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
    pub stopped_early: bool,
    pub rollbacks: usize,
}

impl TrainTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// CSV body with columns `iter,lr,fit,ini,arb,dup,total`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,lr,fit,ini,arb,dup,total\n");
        for r in &self.records {
            let l = r.loss;
            out.push_str(&format!(
                "{},{:e},{:e},{:e},{:e},{:e},{:e}\n",
                r.iter, r.lr, l.fit, l.ini, l.arb, l.dup, l.total
            ));
        }
        out
    }
}

/// Everything needed to continue training bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub price: NetParams,
    pub vol: NetParams,
    pub price_opt: AdamState,
    pub vol_opt: AdamState,
    pub sampler: CollocationSampler,
    pub iter: usize,
    pub lr_scale: f64,
    pub rolled_back: bool,
    pub window_sum: f64,
    pub window_count: usize,
    pub previous_window_mean: Option<f64>,
    pub stopped_early: bool,
}

impl TrainState {
    fn restore_layouts(&mut self) -> Result<()> {
        self.price.restore_layout()?;
        self.vol.restore_layout()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config_hash: String,
    pub config: TrainConfig,
    pub frame: MarketFrame,
    pub state: TrainState,
}

impl Checkpoint {
    pub fn price_model(&self) -> PriceSurfaceModel {
        PriceSurfaceModel::new(self.state.price.clone(), self.frame)
    }

    pub fn vol_model(&self) -> VolSurfaceModel {
        VolSurfaceModel::new(self.state.vol.clone(), self.frame)
    }
}

pub fn checkpoint_save(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    write_json(path, checkpoint)
}

pub fn checkpoint_load(path: &Path) -> Result<Checkpoint> {
    let mut cp: Checkpoint = read_json(path, "checkpoint")?;
    cp.config.validate().map_err(|e| Error::VersionMismatch(e.to_string()))?;
    if cp.config.fingerprint() != cp.config_hash {
        return Err(Error::VersionMismatch("checkpoint config hash does not match its config".into()));
    }
    if cp.state.price.config != cp.config.net || cp.state.vol.config != cp.config.net {
        return Err(Error::VersionMismatch("checkpoint network shape differs from its config".into()));
    }
    cp.state.restore_layouts()?;
    Ok(cp)
}

/// How a call to [`Trainer::run`] ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Budget,
    EarlyStop,
}

pub struct Trainer {
    config: TrainConfig,
    frame: MarketFrame,
    fit: FitData,
    state: TrainState,
    snapshot: Option<(TrainState, usize)>,
    trace: TrainTrace,
    progress_every: usize,
}

impl Trainer {
    pub fn new(quotes: &[ScaledQuote], frame: MarketFrame, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        frame.validate()?;
        let price = init_params(&config.net, config.seed)?;
        let vol = init_params(&config.net, config.seed.wrapping_add(VOL_SEED_OFFSET))?;
        let state = TrainState {
            price_opt: AdamState::new(price.len()),
            vol_opt: AdamState::new(vol.len()),
            price,
            vol,
            sampler: CollocationSampler::new(config.m1, config.m2, config.seed)?,
            iter: 0,
            lr_scale: 1.0,
            rolled_back: false,
            window_sum: 0.0,
            window_count: 0,
            previous_window_mean: None,
            stopped_early: false,
        };
        Self::with_state(quotes, frame, config, state)
    }

    /// Continues from a checkpoint. `config` may differ from the stored one
    /// only in the fields excluded from [`TrainConfig::fingerprint`].
    pub fn resume(quotes: &[ScaledQuote], checkpoint: Checkpoint, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if config.net != checkpoint.config.net {
            return Err(Error::VersionMismatch(format!(
                "checkpoint network {:?} differs from requested {:?}",
                checkpoint.config.net, config.net
            )));
        }
        if config.fingerprint() != checkpoint.config_hash {
            return Err(Error::ConfigMismatch("training configuration differs from the checkpoint".into()));
        }
        Self::with_state(quotes, checkpoint.frame, config, checkpoint.state)
    }

    fn with_state(quotes: &[ScaledQuote], frame: MarketFrame, config: TrainConfig, mut state: TrainState) -> Result<Self> {
        state.restore_layouts()?;
        let fit = FitData::new(quotes)?;
        let mut trainer = Trainer {
            config,
            frame,
            fit,
            state,
            snapshot: None,
            trace: TrainTrace::default(),
            progress_every: 0,
        };
        trainer.take_snapshot();
        Ok(trainer)
    }

    /// Log progress at `info` level every `every` iterations (0 disables).
    pub fn log_progress_every(&mut self, every: usize) {
        self.progress_every = every;
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn trace(&self) -> &TrainTrace {
        &self.trace
    }

    pub fn iteration(&self) -> usize {
        self.state.iter
    }

    pub fn price_model(&self) -> PriceSurfaceModel {
        PriceSurfaceModel::new(self.state.price.clone(), self.frame)
    }

    pub fn vol_model(&self) -> VolSurfaceModel {
        VolSurfaceModel::new(self.state.vol.clone(), self.frame)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config_hash: self.config.fingerprint(),
            config: self.config.clone(),
            frame: self.frame,
            state: self.state.clone(),
        }
    }

    /// Current losses without updating anything or advancing the sampler.
    pub fn current_loss(&self) -> Result<LossBreakdown> {
        let mut sampler = self.state.sampler.clone();
        let batch = sampler.next_batch();
        let price = self.price_model();
        let vol = self.vol_model();
        let g = evaluate_with_gradients(&price, &vol, &self.fit, &batch, &self.config.lambdas(), self.config.eval_chunk)?;
        Ok(g.breakdown)
    }

    fn take_snapshot(&mut self) {
        self.snapshot = Some((self.state.clone(), self.trace.records.len()));
    }

    fn rollback(&mut self, reason: String) -> Result<()> {
        let failed_at = self.state.iter;
        if self.state.rolled_back {
            if let Some((snap, len)) = self.snapshot.clone() {
                self.state = snap;
                self.trace.records.truncate(len);
            }
            return Err(Error::DivergedTraining {
                iteration: failed_at,
                reason,
            });
        }
        let (snap, len) = self.snapshot.clone().expect("snapshot taken at construction");
        log::warn!(
            "non-finite state at iteration {failed_at} ({reason}); rolling back to iteration {} and halving the learning rate",
            snap.iter
        );
        self.state = snap;
        self.trace.records.truncate(len);
        self.state.rolled_back = true;
        self.state.lr_scale *= 0.5;
        self.trace.rollbacks += 1;
        self.take_snapshot();
        Ok(())
    }

    /// One iteration. Returns the losses evaluated before the update.
    pub fn step(&mut self) -> Result<LossBreakdown> {
        let started = Instant::now();
        let iter = self.state.iter;
        let lr = lr_at(iter, &self.config) * self.state.lr_scale;
        let batch = self.state.sampler.next_batch();
        let price = PriceSurfaceModel::new(self.state.price.clone(), self.frame);
        let vol = VolSurfaceModel::new(self.state.vol.clone(), self.frame);
        let grads = evaluate_with_gradients(&price, &vol, &self.fit, &batch, &self.config.lambdas(), self.config.eval_chunk)?;
        let loss = grads.breakdown;
        if !loss.is_finite() {
            self.rollback(format!("loss {loss:?}"))?;
            return Ok(loss);
        }
        if !grads.price_grad.iter().chain(&grads.vol_grad).all(|g| g.is_finite()) {
            self.rollback("non-finite gradient".into())?;
            return Ok(loss);
        }
        optimizer_step(&mut self.state.price, &grads.price_grad, &mut self.state.price_opt, lr);
        if !self.config.vol_frozen() {
            optimizer_step(&mut self.state.vol, &grads.vol_grad, &mut self.state.vol_opt, lr);
        }
        if !(self.state.price.is_finite() && self.state.vol.is_finite()) {
            self.rollback("non-finite parameters".into())?;
            return Ok(loss);
        }
        self.state.iter += 1;
        if iter.is_multiple_of(self.config.trace_stride) {
            self.trace.records.push(TraceRecord {
                iter,
                lr,
                loss,
                seconds: started.elapsed().as_secs_f64(),
            });
        }
        if self.config.early_stop {
            self.update_early_stop(loss.total);
        }
        if self.progress_every > 0 && iter.is_multiple_of(self.progress_every) {
            log::info!(
                "iter {iter} lr {lr:.3e} total {:.4e} fit {:.4e} ini {:.4e} arb {:.4e} dup {:.4e}",
                loss.total,
                loss.fit,
                loss.ini,
                loss.arb,
                loss.dup
            );
        }
        if self.state.iter.is_multiple_of(self.config.snapshot_every()) {
            self.take_snapshot();
        }
        Ok(loss)
    }

    fn update_early_stop(&mut self, total: f64) {
        let s = &mut self.state;
        s.window_sum += total;
        s.window_count += 1;
        if s.window_count < self.config.early_stop_window {
            return;
        }
        let mean = s.window_sum / s.window_count as f64;
        if let Some(prev) = s.previous_window_mean {
            let improvement = (prev - mean) / prev.abs().max(f64::MIN_POSITIVE);
            if improvement < self.config.early_stop_tol {
                s.stopped_early = true;
            }
        }
        s.previous_window_mean = Some(mean);
        s.window_sum = 0.0;
        s.window_count = 0;
    }

    /// Iterates until `max_iters` or early stop, writing a checkpoint to
    /// `checkpoint_path` every `checkpoint_every` iterations and at the end.
    pub fn run(&mut self, checkpoint_path: Option<&Path>) -> Result<StopReason> {
        let reason = loop {
            if self.state.stopped_early {
                break StopReason::EarlyStop;
            }
            if self.state.iter >= self.config.max_iters {
                break StopReason::Budget;
            }
            self.step()?;
            if let Some(path) = checkpoint_path {
                if self.config.checkpoint_every > 0 && self.state.iter.is_multiple_of(self.config.checkpoint_every) {
                    checkpoint_save(path, &self.checkpoint())?;
                }
            }
        };
        self.trace.stopped_early = self.state.stopped_early;
        if let Some(path) = checkpoint_path {
            checkpoint_save(path, &self.checkpoint())?;
        }
        Ok(reason)
    }

    pub fn into_parts(self) -> (PriceSurfaceModel, VolSurfaceModel, TrainTrace) {
        let price = PriceSurfaceModel::new(self.state.price, self.frame);
        let vol = VolSurfaceModel::new(self.state.vol, self.frame);
        (price, vol, self.trace)
    }
}

pub fn train(
    quotes: &[ScaledQuote],
    frame: MarketFrame,
    config: TrainConfig,
) -> Result<(PriceSurfaceModel, VolSurfaceModel, TrainTrace)> {
    let mut trainer = Trainer::new(quotes, frame, config)?;
    trainer.run(None)?;
    Ok(trainer.into_parts())
}
