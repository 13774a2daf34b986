use std::sync::atomic::{AtomicU64, Ordering};

use crate::dupire::MarketFrame;
use crate::error::Result;
use crate::net::VolSurfaceModel;

/// Rounding slack before a query counts as outside the unit square.
const EDGE: f64 = 1e-12;

/// Closed-form test volatility `0.3 + y e^{-y}` with `y = (t + 0.1) sqrt(x + 0.1)`.
pub fn sigma_exact(x: f64, t: f64) -> f64 {
    let y = (t + 0.1) * (x + 0.1).sqrt();
    0.3 + y * (-y).exp()
}

/// A local-volatility function of spot level and calendar time.
pub trait VolatilityField: Sync {
    fn sigma(&self, spot: f64, time: f64) -> f64;

    fn label(&self) -> String;
}

/// Time-independent flat volatility.
#[derive(Debug, Clone, Copy)]
pub struct ConstantVol(pub f64);

impl VolatilityField for ConstantVol {
    fn sigma(&self, _spot: f64, _time: f64) -> f64 {
        self.0
    }

    fn label(&self) -> String {
        format!("constant({})", self.0)
    }
}

/// [`sigma_exact`] queried at the scaled strike coordinate of the spot,
/// `x = e^{-r t} S / K_max`, with `t` in years.
#[derive(Debug, Clone, Copy)]
pub struct ExactField {
    pub frame: MarketFrame,
}

impl ExactField {
    pub fn new(frame: MarketFrame) -> Self {
        ExactField { frame }
    }

    /// Local volatility at strike `strike` and maturity `maturity`.
    pub fn at_strike(&self, strike: f64, maturity: f64) -> f64 {
        self.sigma(strike, maturity)
    }
}

impl VolatilityField for ExactField {
    fn sigma(&self, spot: f64, time: f64) -> f64 {
        let x = (-self.frame.rate * time).exp() * spot / self.frame.k_max;
        sigma_exact(x.max(0.0), time)
    }

    fn label(&self) -> String {
        "exact".into()
    }
}

/// A calibrated volatility network tabulated on a regular `(k, t)` grid
/// over the unit square and read back by bilinear interpolation.
///
/// Queries outside the unit square are clamped to its boundary and counted.
#[derive(Debug)]
pub struct CalibratedField {
    frame: MarketFrame,
    n_k: usize,
    n_t: usize,
    table: Vec<f64>,
    clamped: AtomicU64,
}

impl CalibratedField {
    pub const DEFAULT_K_NODES: usize = 1025;
    pub const DEFAULT_T_NODES: usize = 301;

    pub fn new(model: &VolSurfaceModel) -> Result<Self> {
        Self::with_resolution(model, Self::DEFAULT_K_NODES, Self::DEFAULT_T_NODES)
    }

    pub fn with_resolution(model: &VolSurfaceModel, n_k: usize, n_t: usize) -> Result<Self> {
        let n_k = n_k.max(2);
        let n_t = n_t.max(2);
        let mut points = Vec::with_capacity(n_k * n_t);
        for i in 0..n_t {
            let t = i as f64 / (n_t - 1) as f64;
            for j in 0..n_k {
                points.push([j as f64 / (n_k - 1) as f64, t]);
            }
        }
        let table = model.sigmas(&points);
        if let Some(bad) = table.iter().position(|s| !s.is_finite()) {
            let [k, t] = points[bad];
            return Err(crate::Error::VolFieldFailure {
                spot: model.frame.strike_at(k, t),
                time: t * model.frame.t_max,
                value: table[bad],
            });
        }
        Ok(CalibratedField {
            frame: model.frame,
            n_k,
            n_t,
            table,
            clamped: AtomicU64::new(0),
        })
    }

    /// Number of queries that fell outside the unit square so far.
    pub fn clamped_queries(&self) -> u64 {
        self.clamped.load(Ordering::Relaxed)
    }

    /// Interpolated volatility at scaled coordinates already inside the square.
    pub fn at_scaled(&self, k: f64, t: f64) -> f64 {
        let fk = k * (self.n_k - 1) as f64;
        let ft = t * (self.n_t - 1) as f64;
        let j = (fk.floor() as usize).min(self.n_k - 2);
        let i = (ft.floor() as usize).min(self.n_t - 2);
        let a = fk - j as f64;
        let b = ft - i as f64;
        let row0 = &self.table[i * self.n_k..(i + 1) * self.n_k];
        let row1 = &self.table[(i + 1) * self.n_k..(i + 2) * self.n_k];
        let lo = row0[j] + a * (row0[j + 1] - row0[j]);
        let hi = row1[j] + a * (row1[j + 1] - row1[j]);
        lo + b * (hi - lo)
    }
}

impl VolatilityField for CalibratedField {
    fn sigma(&self, spot: f64, time: f64) -> f64 {
        let k = (-self.frame.rate * time).exp() * spot / self.frame.k_max;
        let t = time / self.frame.t_max;
        let inside = (-EDGE..=1.0 + EDGE).contains(&k) && (-EDGE..=1.0 + EDGE).contains(&t);
        if !inside {
            self.clamped.fetch_add(1, Ordering::Relaxed);
        }
        // NaN spots propagate so the simulator reports them
        if k.is_nan() || t.is_nan() {
            return f64::NAN;
        }
        self.at_scaled(k.clamp(0.0, 1.0), t.clamp(0.0, 1.0))
    }

    fn label(&self) -> String {
        "calibrated".into()
    }
}
