use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::field::VolatilityField;
use crate::dupire::{MarketFrame, OptionKind};
use crate::error::{Error, Result};

/// Monitoring times closer than this to a uniform step are snapped onto it.
pub const TIME_SNAP: f64 = 1e-9;
const PATHS_PER_TASK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Euler step on `log S`; prices stay positive.
    #[default]
    LogEuler,
    /// Euler step on `S`; paths that reach zero are absorbed there.
    Euler,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::LogEuler => "log-euler",
            Scheme::Euler => "euler",
        })
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "log-euler" | "logeuler" => Ok(Scheme::LogEuler),
            "euler" => Ok(Scheme::Euler),
            other => Err(Error::InvalidConfig(format!("unknown scheme {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_paths: usize,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub scheme: Scheme,
    /// Keep the standard normal draws so they can be replayed.
    pub record_increments: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_paths: 100_000,
            dt: 0.01,
            horizon: 1.5,
            seed: 0,
            scheme: Scheme::LogEuler,
            record_increments: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon.is_finite() && self.horizon >= self.dt) {
            return Err(Error::InvalidConfig(format!("horizon {} must be at least dt {}", self.horizon, self.dt)));
        }
        if self.n_paths == 0 {
            return Err(Error::InvalidConfig("n_paths must be positive".into()));
        }
        Ok(())
    }

    /// Simulation times: multiples of `dt` up to the horizon, the horizon
    /// itself and every monitoring time, sorted and deduplicated.
    pub fn time_grid(&self, monitoring: &[f64]) -> Result<Vec<f64>> {
        self.validate()?;
        let steps = (self.horizon / self.dt + TIME_SNAP).floor() as usize;
        let mut grid: Vec<f64> = (0..=steps).map(|i| i as f64 * self.dt).collect();
        grid.push(self.horizon);
        for &t in monitoring {
            if !(t.is_finite() && t >= 0.0 && t <= self.horizon + TIME_SNAP) {
                return Err(Error::MaturityOutOfRange(t));
            }
            grid.push(t.min(self.horizon));
        }
        grid.sort_by(f64::total_cmp);
        let mut out: Vec<f64> = Vec::with_capacity(grid.len());
        for t in grid {
            match out.last() {
                Some(&last) if t - last <= TIME_SNAP => {}
                _ => out.push(t),
            }
        }
        Ok(out)
    }
}

/// Simulated prices at the monitoring times, stored path-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub times: Vec<f64>,
    pub n_paths: usize,
    pub prices: Vec<f64>,
    /// Standard normal draws, path-major over the simulation steps.
    pub increments: Option<Vec<f64>>,
    pub steps: usize,
}

impl PathEnsemble {
    pub fn path(&self, i: usize) -> &[f64] {
        let m = self.times.len();
        &self.prices[i * m..(i + 1) * m]
    }

    /// Index of the monitoring time nearest to `maturity`.
    pub fn monitor_index(&self, maturity: f64) -> Result<usize> {
        let last = *self.times.last().expect("non-empty grid");
        if !(maturity.is_finite() && maturity >= 0.0 && maturity <= last + TIME_SNAP) {
            return Err(Error::MaturityOutOfRange(maturity));
        }
        let idx = self.times.partition_point(|&t| t < maturity);
        let best = match idx {
            0 => 0,
            i if i == self.times.len() => i - 1,
            i => {
                if maturity - self.times[i - 1] <= self.times[i] - maturity {
                    i - 1
                } else {
                    i
                }
            }
        };
        Ok(best)
    }

    pub fn terminal(&self, index: usize) -> Vec<f64> {
        let m = self.times.len();
        (0..self.n_paths).map(|p| self.prices[p * m + index]).collect()
    }
}

fn advance(scheme: Scheme, s: f64, sigma: f64, rate: f64, h: f64, z: f64) -> f64 {
    match scheme {
        Scheme::LogEuler => s * ((rate - 0.5 * sigma * sigma) * h + sigma * h.sqrt() * z).exp(),
        Scheme::Euler => {
            if s <= 0.0 {
                0.0
            } else {
                (s + rate * s * h + sigma * s * h.sqrt() * z).max(0.0)
            }
        }
    }
}

struct PathOut {
    monitored: Vec<f64>,
    draws: Vec<f64>,
}

fn run_path<V: VolatilityField + ?Sized>(
    vol: &V,
    frame: &MarketFrame,
    sim: &SimConfig,
    grid: &[f64],
    monitor_steps: &[usize],
    path: usize,
    replay: Option<&[f64]>,
) -> Result<PathOut> {
    let steps = grid.len() - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
    rng.set_stream(path as u64);
    let mut monitored = Vec::with_capacity(monitor_steps.len());
    let mut draws = Vec::with_capacity(if sim.record_increments { steps } else { 0 });
    let mut next = 0;
    let mut s = frame.spot;
    for step in 0..=steps {
        while next < monitor_steps.len() && monitor_steps[next] == step {
            monitored.push(s);
            next += 1;
        }
        if step == steps {
            break;
        }
        let t = grid[step];
        let sigma = vol.sigma(s, t);
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::VolFieldFailure {
                spot: s,
                time: t,
                value: sigma,
            });
        }
        let z: f64 = match replay {
            Some(r) => r[step],
            None => StandardNormal.sample(&mut rng),
        };
        if sim.record_increments {
            draws.push(z);
        }
        s = advance(sim.scheme, s, sigma, frame.rate, grid[step + 1] - t, z);
    }
    Ok(PathOut { monitored, draws })
}

fn simulate_inner<V: VolatilityField + ?Sized>(
    vol: &V,
    frame: &MarketFrame,
    sim: &SimConfig,
    monitoring: &[f64],
    replay: Option<&PathEnsemble>,
) -> Result<PathEnsemble> {
    frame.validate()?;
    let grid = sim.time_grid(monitoring)?;
    let steps = grid.len() - 1;
    let mut times: Vec<f64> = monitoring.iter().map(|&t| t.min(sim.horizon)).collect();
    times.sort_by(f64::total_cmp);
    times.dedup_by(|a, b| (*a - *b).abs() <= TIME_SNAP);
    if times.is_empty() {
        times.push(*grid.last().expect("grid"));
    }
    let monitor_steps: Vec<usize> = times
        .iter()
        .map(|&t| grid.iter().position(|&g| (g - t).abs() <= TIME_SNAP).expect("monitoring time in grid"))
        .collect();
    let times: Vec<f64> = monitor_steps.iter().map(|&i| grid[i]).collect();
    let replay_draws = match replay {
        Some(r) => {
            let draws = r
                .increments
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("replay ensemble has no recorded increments".into()))?;
            if r.steps != steps || r.n_paths != sim.n_paths {
                return Err(Error::InvalidConfig(format!(
                    "replay ensemble has {} paths x {} steps, simulation needs {} x {steps}",
                    r.n_paths, r.steps, sim.n_paths
                )));
            }
            Some(draws.as_slice())
        }
        None => None,
    };

    let chunks: Vec<Result<Vec<PathOut>>> = (0..sim.n_paths)
        .collect::<Vec<_>>()
        .par_chunks(PATHS_PER_TASK)
        .map(|ids| {
            ids.iter()
                .map(|&p| {
                    let rp = replay_draws.map(|d| &d[p * steps..(p + 1) * steps]);
                    run_path(vol, frame, sim, &grid, &monitor_steps, p, rp)
                })
                .collect()
        })
        .collect();
    let mut prices = Vec::with_capacity(sim.n_paths * times.len());
    let mut increments = sim.record_increments.then(|| Vec::with_capacity(sim.n_paths * steps));
    for chunk in chunks {
        for out in chunk? {
            prices.extend_from_slice(&out.monitored);
            if let Some(inc) = increments.as_mut() {
                inc.extend_from_slice(&out.draws);
            }
        }
    }
    Ok(PathEnsemble {
        times,
        n_paths: sim.n_paths,
        prices,
        increments,
        steps,
    })
}

/// Simulates `dS = r S dt + sigma(S, t) S dB` from the frame's spot and
/// records each path at the requested monitoring times (the horizon if
/// none are given). Path `i` draws from ChaCha8 stream `i` of `sim.seed`,
/// so results do not depend on the thread count.
pub fn simulate_paths<V: VolatilityField + ?Sized>(
    vol: &V,
    frame: &MarketFrame,
    sim: &SimConfig,
    monitoring: &[f64],
) -> Result<PathEnsemble> {
    simulate_inner(vol, frame, sim, monitoring, None)
}

/// Re-runs the Brownian draws recorded in `recorded` against another field.
pub fn replay_paths<V: VolatilityField + ?Sized>(
    vol: &V,
    frame: &MarketFrame,
    sim: &SimConfig,
    monitoring: &[f64],
    recorded: &PathEnsemble,
) -> Result<PathEnsemble> {
    simulate_inner(vol, frame, sim, monitoring, Some(recorded))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McPrice {
    pub price: f64,
    pub std_error: f64,
    /// Monitoring time actually used minus the requested maturity.
    pub maturity_offset: f64,
}

fn payoff(kind: OptionKind, s: f64, strike: f64) -> f64 {
    match kind {
        OptionKind::Call => (s - strike).max(0.0),
        OptionKind::Put => (strike - s).max(0.0),
    }
}

/// Discounted mean payoff and its standard error.
pub fn mc_price(paths: &PathEnsemble, strike: f64, maturity: f64, frame: &MarketFrame) -> Result<McPrice> {
    mc_price_kind(paths, strike, maturity, frame.rate, frame.kind)
}

pub fn mc_price_kind(paths: &PathEnsemble, strike: f64, maturity: f64, rate: f64, kind: OptionKind) -> Result<McPrice> {
    let idx = paths.monitor_index(maturity)?;
    let t = paths.times[idx];
    let disc = (-rate * t).exp();
    let m = paths.times.len();
    let n = paths.n_paths as f64;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for p in 0..paths.n_paths {
        let x = payoff(kind, paths.prices[p * m + idx], strike);
        sum += x;
        sum_sq += x * x;
    }
    let mean = sum / n;
    let var = if paths.n_paths > 1 {
        ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(McPrice {
        price: disc * mean,
        std_error: disc * (var / n).sqrt(),
        maturity_offset: t - maturity,
    })
}

/// Prices many strikes at one maturity from sorted terminal values and
/// prefix sums.
pub fn mc_price_strip(paths: &PathEnsemble, strikes: &[f64], maturity: f64, frame: &MarketFrame) -> Result<Vec<McPrice>> {
    let idx = paths.monitor_index(maturity)?;
    let t = paths.times[idx];
    let disc = (-frame.rate * t).exp();
    let mut terminal = paths.terminal(idx);
    terminal.sort_by(f64::total_cmp);
    let n = terminal.len();
    let mut pre = vec![0.0; n + 1];
    let mut pre_sq = vec![0.0; n + 1];
    for (i, &s) in terminal.iter().enumerate() {
        pre[i + 1] = pre[i] + s;
        pre_sq[i + 1] = pre_sq[i] + s * s;
    }
    let nf = n as f64;
    Ok(strikes
        .iter()
        .map(|&k| {
            let split = terminal.partition_point(|&s| s <= k);
            let (count, s1, s2) = match frame.kind {
                OptionKind::Call => ((n - split) as f64, pre[n] - pre[split], pre_sq[n] - pre_sq[split]),
                OptionKind::Put => (split as f64, pre[split], pre_sq[split]),
            };
            // payoff sums: sum (S - K) and sum (S - K)^2 over the exercised paths
            let sum = match frame.kind {
                OptionKind::Call => s1 - count * k,
                OptionKind::Put => count * k - s1,
            };
            let sum_sq = (s2 - 2.0 * k * s1 + count * k * k).max(0.0);
            let mean = sum / nf;
            let var = if n > 1 { ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0) } else { 0.0 };
            McPrice {
                price: disc * mean,
                std_error: disc * (var / nf).sqrt(),
                maturity_offset: t - maturity,
            }
        })
        .collect())
}
