//! Monte Carlo simulation of the local-volatility dynamics, synthetic quote
//! generation, the Black–Scholes oracle and the evaluation metrics.

mod bs;
mod field;
mod sim;

pub use bs::{bs_closed_form, norm_cdf, norm_pdf, BsValue};
pub use field::{sigma_exact, CalibratedField, ConstantVol, ExactField, VolatilityField};
pub use sim::{
    mc_price, mc_price_kind, mc_price_strip, replay_paths, simulate_paths, McPrice, PathEnsemble, Scheme, SimConfig,
    TIME_SNAP,
};

use serde::{Deserialize, Serialize};

use crate::dupire::{MarketFrame, OptionQuote};
use crate::error::{Error, Result};
use crate::net::{PriceSurfaceModel, VolSurfaceModel};

/// Evenly spaced `n` points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Tensor grid of maturities (rows) and strikes (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrikeMaturityGrid {
    pub maturities: Vec<f64>,
    pub strikes: Vec<f64>,
}

impl StrikeMaturityGrid {
    pub fn linspace(n_maturities: usize, n_strikes: usize, strikes: (f64, f64), maturities: (f64, f64)) -> Result<Self> {
        if n_maturities == 0 || n_strikes == 0 {
            return Err(Error::InvalidConfig(format!("grid {n_maturities}x{n_strikes} is empty")));
        }
        let ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo > 0.0 && hi >= lo;
        if !ok(strikes) || !ok(maturities) {
            return Err(Error::InvalidConfig(format!(
                "grid ranges must be positive and ordered, got strikes {strikes:?}, maturities {maturities:?}"
            )));
        }
        Ok(StrikeMaturityGrid {
            maturities: linspace(maturities.0, maturities.1, n_maturities),
            strikes: linspace(strikes.0, strikes.1, n_strikes),
        })
    }

    pub fn len(&self) -> usize {
        self.maturities.len() * self.strikes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(strike, maturity)` pairs, maturity-major.
    pub fn nodes(&self) -> Vec<(f64, f64)> {
        self.maturities
            .iter()
            .flat_map(|&t| self.strikes.iter().map(move |&k| (k, t)))
            .collect()
    }
}

/// Monte Carlo quotes with the standard error of each price.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub quotes: Vec<OptionQuote>,
    pub std_errors: Vec<f64>,
    pub sim: SimConfig,
    pub field: String,
}

/// Prices every grid node on one shared set of paths.
pub fn generate_synthetic_dataset<V: VolatilityField + ?Sized>(
    grid: &StrikeMaturityGrid,
    vol: &V,
    frame: &MarketFrame,
    sim: &SimConfig,
) -> Result<SyntheticDataset> {
    let paths = simulate_paths(vol, frame, sim, &grid.maturities)?;
    let mut quotes = Vec::with_capacity(grid.len());
    let mut std_errors = Vec::with_capacity(grid.len());
    for &t in &grid.maturities {
        for (p, &k) in mc_price_strip(&paths, &grid.strikes, t, frame)?.iter().zip(&grid.strikes) {
            quotes.push(OptionQuote::new(p.price, k, t));
            std_errors.push(p.std_error);
        }
    }
    Ok(SyntheticDataset {
        quotes,
        std_errors,
        sim: *sim,
        field: vol.label(),
    })
}

pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidConfig(format!("cannot compare {} values with {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::EmptyInput("surface values"));
    }
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((ss / a.len() as f64).sqrt())
}

/// Root-mean-square difference of two surfaces sampled on the same grid.
pub fn surface_rmse<A, B>(a: A, b: B, grid: &StrikeMaturityGrid) -> Result<f64>
where
    A: Fn(f64, f64) -> f64,
    B: Fn(f64, f64) -> f64,
{
    let nodes = grid.nodes();
    let va: Vec<f64> = nodes.iter().map(|&(k, t)| a(k, t)).collect();
    let vb: Vec<f64> = nodes.iter().map(|&(k, t)| b(k, t)).collect();
    rmse(&va, &vb)
}

/// Calibrated local volatility at each `(K, T)` node, maturity-major.
pub fn model_local_vol(model: &VolSurfaceModel, grid: &StrikeMaturityGrid) -> Vec<f64> {
    let points: Vec<[f64; 2]> = grid
        .nodes()
        .iter()
        .map(|&(k, t)| {
            let (ks, ts) = model.frame.scaled_coords(k, t);
            [ks, ts]
        })
        .collect();
    model.sigmas(&points)
}

/// Model prices at each `(K, T)` node, maturity-major.
pub fn model_prices(model: &PriceSurfaceModel, grid: &StrikeMaturityGrid) -> Vec<f64> {
    let points: Vec<[f64; 2]> = grid
        .nodes()
        .iter()
        .map(|&(k, t)| {
            let (ks, ts) = model.frame.scaled_coords(k, t);
            [ks, ts]
        })
        .collect();
    model.values(&points)
}

/// RMSE between the calibrated and the exact local volatility on `grid`.
pub fn local_vol_rmse(model: &VolSurfaceModel, grid: &StrikeMaturityGrid) -> Result<f64> {
    let exact = ExactField::new(model.frame);
    let reference: Vec<f64> = grid.nodes().iter().map(|&(k, t)| exact.at_strike(k, t)).collect();
    rmse(&model_local_vol(model, grid), &reference)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepriceReport {
    pub rmse: f64,
    pub quotes: usize,
    pub mean_std_error: f64,
    pub clamped_queries: u64,
}

/// Simulates the calibrated volatility, prices every quote node and
/// compares with the quoted prices.
pub fn reprice_rmse(vol_model: &VolSurfaceModel, quotes: &[OptionQuote], frame: &MarketFrame, sim: &SimConfig) -> Result<RepriceReport> {
    let field = CalibratedField::new(vol_model)?;
    let report = reprice_with_field(&field, quotes, frame, sim)?;
    let clamped = field.clamped_queries();
    if clamped > 0 {
        log::info!("{clamped} volatility queries fell outside the calibrated domain and were clamped");
    }
    Ok(RepriceReport {
        clamped_queries: clamped,
        ..report
    })
}

/// [`reprice_rmse`] for an arbitrary field.
pub fn reprice_with_field<V: VolatilityField + ?Sized>(
    field: &V,
    quotes: &[OptionQuote],
    frame: &MarketFrame,
    sim: &SimConfig,
) -> Result<RepriceReport> {
    if quotes.is_empty() {
        return Err(Error::EmptyInput("quotes"));
    }
    let mut maturities: Vec<f64> = quotes.iter().map(|q| q.maturity).collect();
    maturities.sort_by(f64::total_cmp);
    maturities.dedup();
    let paths = simulate_paths(field, frame, sim, &maturities)?;
    let mut model = Vec::with_capacity(quotes.len());
    let mut se_sum = 0.0;
    for q in quotes {
        let p = mc_price(&paths, q.strike, q.maturity, frame)?;
        model.push(p.price);
        se_sum += p.std_error;
    }
    let market: Vec<f64> = quotes.iter().map(|q| q.price).collect();
    Ok(RepriceReport {
        rmse: rmse(&model, &market)?,
        quotes: quotes.len(),
        mean_std_error: se_sum / quotes.len() as f64,
        clamped_queries: 0,
    })
}

/// Monte Carlo reference prices of the exact field on `grid`, maturity-major.
pub fn reference_prices<V: VolatilityField + ?Sized>(
    grid: &StrikeMaturityGrid,
    vol: &V,
    frame: &MarketFrame,
    sim: &SimConfig,
) -> Result<Vec<f64>> {
    Ok(generate_synthetic_dataset(grid, vol, frame, sim)?.quotes.iter().map(|q| q.price).collect())
}
