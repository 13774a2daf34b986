use std::f64::consts::{FRAC_1_SQRT_2, PI};

use statrs::function::erf::erfc;

use crate::dupire::OptionKind;
use crate::error::{Error, Result};

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Black–Scholes price with its maturity and strike derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsValue {
    pub price: f64,
    pub d_t: f64,
    pub d_k: f64,
    pub d_kk: f64,
}

pub fn bs_closed_form(spot: f64, strike: f64, maturity: f64, rate: f64, sigma: f64, kind: OptionKind) -> Result<BsValue> {
    let finite = [spot, strike, maturity, rate, sigma].iter().all(|v| v.is_finite());
    if !finite || spot <= 0.0 || strike <= 0.0 || maturity <= 0.0 || sigma <= 0.0 {
        return Err(Error::DomainError(format!(
            "Black-Scholes needs positive spot, strike, maturity and volatility; got S={spot}, K={strike}, T={maturity}, sigma={sigma}"
        )));
    }
    let sqrt_t = maturity.sqrt();
    let vol_t = sigma * sqrt_t;
    let d1 = ((spot / strike).ln() + (rate + 0.5 * sigma * sigma) * maturity) / vol_t;
    let d2 = d1 - vol_t;
    let disc = (-rate * maturity).exp();
    let d_kk = disc * norm_pdf(d2) / (strike * vol_t);
    let decay = spot * norm_pdf(d1) * sigma / (2.0 * sqrt_t);
    Ok(match kind {
        OptionKind::Call => BsValue {
            price: spot * norm_cdf(d1) - strike * disc * norm_cdf(d2),
            d_t: decay + rate * strike * disc * norm_cdf(d2),
            d_k: -disc * norm_cdf(d2),
            d_kk,
        },
        OptionKind::Put => BsValue {
            price: strike * disc * norm_cdf(-d2) - spot * norm_cdf(-d1),
            d_t: decay - rate * strike * disc * norm_cdf(-d2),
            d_k: disc * norm_cdf(-d2),
            d_kk,
        },
    })
}
