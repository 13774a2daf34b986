//! Market frame, coordinate scaling and the pointwise functionals of the
//! scaled Dupire problem.
//!
//! Prices live on the unit square through the change of variables
//! `k = exp(-r T) K / K_max`, `t = T / T_max`. In these coordinates the
//! squared local volatility is carried as `eta = T_max sigma^2 / 2` and the
//! forward equation reads `d_t pi - eta k^2 d_kk pi = 0`.

use std::ops::{Add, Mul};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack allowed on `k <= 1` and `t <= 1` after scaling.
pub const SCALE_TOLERANCE: f64 = 1e-9;

/// Relative tolerance (times spot) on the static price bounds at ingestion.
pub const BOUND_TOLERANCE: f64 = 1e-9;

/// Guard on `K^2 d2pi/dK2` in [`classical_dupire_sigma`].
pub const DENSITY_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptionKind {
    Call,
    Put,
}

impl std::fmt::Display for OptionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OptionKind::Call => f.write_str("call"),
            OptionKind::Put => f.write_str("put"),
        }
    }
}

impl std::str::FromStr for OptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "call" | "c" => Ok(OptionKind::Call),
            "put" | "p" => Ok(OptionKind::Put),
            other => Err(Error::InvalidConfig(format!("unknown option kind {other:?}"))),
        }
    }
}

/// Global market constants shared by every quote of a calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketFrame {
    pub spot: f64,
    pub rate: f64,
    pub k_max: f64,
    pub t_max: f64,
    pub kind: OptionKind,
}

impl MarketFrame {
    pub fn new(spot: f64, rate: f64, k_max: f64, t_max: f64, kind: OptionKind) -> Result<Self> {
        let frame = MarketFrame {
            spot,
            rate,
            k_max,
            t_max,
            kind,
        };
        frame.validate()?;
        Ok(frame)
    }

    /// Frame whose localization bounds are the largest strike and maturity quoted.
    pub fn from_quotes(spot: f64, rate: f64, kind: OptionKind, quotes: &[OptionQuote]) -> Result<Self> {
        if quotes.is_empty() {
            return Err(Error::EmptyInput("quotes"));
        }
        let k_max = quotes.iter().map(|q| q.strike).fold(f64::NEG_INFINITY, f64::max);
        let t_max = quotes.iter().map(|q| q.maturity).fold(f64::NEG_INFINITY, f64::max);
        Self::new(spot, rate, k_max, t_max, kind)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("spot", self.spot)?;
        positive("k_max", self.k_max)?;
        positive("t_max", self.t_max)?;
        if !self.rate.is_finite() || self.rate < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "rate must be finite and non-negative, got {}",
                self.rate
            )));
        }
        Ok(())
    }

    /// Strike corresponding to scaled coordinates `(k, t)`.
    pub fn strike_at(&self, k: f64, t: f64) -> f64 {
        self.k_max * k * (self.rate * self.t_max * t).exp()
    }

    /// Scaled coordinates of an arbitrary `(K, T)` point, without domain checks.
    pub fn scaled_coords(&self, strike: f64, maturity: f64) -> (f64, f64) {
        (
            (-self.rate * maturity).exp() * strike / self.k_max,
            maturity / self.t_max,
        )
    }
}

/// A quoted option price.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptionQuote {
    pub price: f64,
    pub strike: f64,
    pub maturity: f64,
}

/// Why a quote cannot enter a calibration.
#[derive(Debug, Clone, PartialEq)]
pub enum QuoteDefect {
    InvalidField(String),
    BoundViolation(String),
}

impl std::fmt::Display for QuoteDefect {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            QuoteDefect::InvalidField(s) => write!(f, "InvalidField: {s}"),
            QuoteDefect::BoundViolation(s) => write!(f, "BoundViolation: {s}"),
        }
    }
}

impl OptionQuote {
    pub fn new(price: f64, strike: f64, maturity: f64) -> Self {
        OptionQuote {
            price,
            strike,
            maturity,
        }
    }

    /// Field invariants plus the static bounds `0 <= call <= S0`, `0 <= put <= K`.
    pub fn check(&self, spot: f64, kind: OptionKind) -> std::result::Result<(), QuoteDefect> {
        if !(self.strike.is_finite() && self.strike > 0.0) {
            return Err(QuoteDefect::InvalidField(format!("strike {} must be positive", self.strike)));
        }
        if !(self.maturity.is_finite() && self.maturity >= 0.0) {
            return Err(QuoteDefect::InvalidField(format!(
                "maturity {} must be non-negative",
                self.maturity
            )));
        }
        if !(self.price.is_finite() && self.price >= 0.0) {
            return Err(QuoteDefect::InvalidField(format!("price {} must be non-negative", self.price)));
        }
        let tol = BOUND_TOLERANCE * spot;
        let upper = match kind {
            OptionKind::Call => spot,
            OptionKind::Put => self.strike,
        };
        if self.price > upper + tol {
            return Err(QuoteDefect::BoundViolation(format!(
                "{kind} price {} exceeds upper bound {upper}",
                self.price
            )));
        }
        Ok(())
    }
}

/// A quote in scaled coordinates; the price is unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledQuote {
    pub price: f64,
    pub k: f64,
    pub t: f64,
}

pub fn scale_quote(quote: &OptionQuote, frame: &MarketFrame) -> Result<ScaledQuote> {
    if let Err(defect) = quote.check(frame.spot, frame.kind) {
        return Err(Error::OutOfDomain(defect.to_string()));
    }
    let (k, t) = frame.scaled_coords(quote.strike, quote.maturity);
    if t > 1.0 + SCALE_TOLERANCE {
        return Err(Error::OutOfDomain(format!(
            "maturity {} beyond t_max {}",
            quote.maturity, frame.t_max
        )));
    }
    if k > 1.0 + SCALE_TOLERANCE {
        return Err(Error::OutOfDomain(format!(
            "discounted strike {} beyond k_max {}",
            quote.strike, frame.k_max
        )));
    }
    Ok(ScaledQuote {
        price: quote.price,
        k: k.min(1.0),
        t: t.min(1.0),
    })
}

pub fn scale_quotes(quotes: &[OptionQuote], frame: &MarketFrame) -> Result<Vec<ScaledQuote>> {
    quotes.iter().map(|q| scale_quote(q, frame)).collect()
}

/// Maps scaled squared volatility back to an annualized volatility.
pub fn unscale_volatility(eta: f64, frame: &MarketFrame) -> Result<f64> {
    if eta < 0.0 || eta.is_nan() {
        return Err(Error::NegativeInput(format!("eta = {eta}")));
    }
    Ok((2.0 * eta / frame.t_max).sqrt())
}

/// Forward map `eta = T_max sigma^2 / 2`.
pub fn scaled_variance(sigma: f64, frame: &MarketFrame) -> f64 {
    0.5 * frame.t_max * sigma * sigma
}

/// Price at `t = 0` in scaled coordinates.
pub fn initial_payoff(k: f64, frame: &MarketFrame) -> f64 {
    let strike = frame.k_max * k;
    match frame.kind {
        OptionKind::Call => (frame.spot - strike).max(0.0),
        OptionKind::Put => (strike - frame.spot).max(0.0),
    }
}

/// Value and the input derivatives used by the Dupire and arbitrage functionals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SurfaceJet {
    pub value: f64,
    pub d_t: f64,
    pub d_k: f64,
    pub d_kk: f64,
}

impl SurfaceJet {
    pub const ZERO: SurfaceJet = SurfaceJet {
        value: 0.0,
        d_t: 0.0,
        d_k: 0.0,
        d_kk: 0.0,
    };

    pub fn new(value: f64, d_t: f64, d_k: f64, d_kk: f64) -> Self {
        SurfaceJet { value, d_t, d_k, d_kk }
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite() && self.d_t.is_finite() && self.d_k.is_finite() && self.d_kk.is_finite()
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.value, self.d_t, self.d_k, self.d_kk]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        SurfaceJet::new(a[0], a[1], a[2], a[3])
    }
}

impl Add for SurfaceJet {
    type Output = SurfaceJet;

    fn add(self, o: SurfaceJet) -> SurfaceJet {
        SurfaceJet::new(self.value + o.value, self.d_t + o.d_t, self.d_k + o.d_k, self.d_kk + o.d_kk)
    }
}

impl Mul<f64> for SurfaceJet {
    type Output = SurfaceJet;

    fn mul(self, c: f64) -> SurfaceJet {
        SurfaceJet::new(self.value * c, self.d_t * c, self.d_k * c, self.d_kk * c)
    }
}

/// Residual of the scaled Dupire equation at one point.
#[inline]
pub fn dupire_residual(jet: &SurfaceJet, eta: f64, k: f64) -> f64 {
    jet.d_t - eta * k * k * jet.d_kk
}

/// Combined calendar/butterfly functional; non-negative means arbitrage-free here.
#[inline]
pub fn arbitrage_functional(jet: &SurfaceJet, k: f64, frame: &MarketFrame) -> f64 {
    jet.d_t - frame.rate * frame.t_max * k * jet.d_k.max(0.0)
}

/// Clamp applied to the balance ratio.
#[inline]
fn clamp_ratio(x: f64) -> f64 {
    if x < 0.1 {
        0.1
    } else if x <= 10.0 {
        x
    } else {
        10.0
    }
}

/// Per-point loss weights `w_i = 1 + N g_i / sum(g)`.
///
/// `g_i` clamps the ratio `mean(v^2) / v_i^2` into `[0.1, 10]`; a zero value
/// counts as an infinite ratio. The result is a plain vector of numbers:
/// callers treat it as a constant when differentiating.
pub fn balance_weights(values: &[f64]) -> Result<Vec<f64>> {
    let n = values.len();
    if n == 0 {
        return Err(Error::EmptyInput("balance_weights values"));
    }
    let mean_sq = values.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let g: Vec<f64> = values
        .iter()
        .map(|&v| {
            let v2 = v * v;
            if v2 == 0.0 {
                10.0
            } else {
                clamp_ratio(mean_sq / v2)
            }
        })
        .collect();
    let g_sum: f64 = g.iter().sum();
    let scale = n as f64 / g_sum;
    Ok(g.into_iter().map(|gi| 1.0 + gi * scale).collect())
}

/// Local volatility from the classical Dupire formula; a diagnostic baseline.
///
/// `jet` holds derivatives in original coordinates: `d_t = dpi/dT`,
/// `d_k = dpi/dK`, `d_kk = d2pi/dK2`.
pub fn classical_dupire_sigma(jet: &SurfaceJet, strike: f64, frame: &MarketFrame) -> Result<f64> {
    let denom = strike * strike * jet.d_kk;
    if !(denom > DENSITY_EPS) {
        return Err(Error::DegenerateDensity(denom));
    }
    let numer = 2.0 * jet.d_t + 2.0 * frame.rate * strike * jet.d_k;
    if numer < 0.0 {
        return Err(Error::NegativeVariance(numer));
    }
    Ok((numer / denom).sqrt())
}
