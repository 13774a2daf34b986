//! Collocation sampling and the four calibration losses.
//!
//! Every loss is a weighted mean of squared pointwise residuals. The weights
//! come from [`balance_weights`] and are plain numbers: gradients never flow
//! through them.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dupire::{arbitrage_functional, balance_weights, dupire_residual, initial_payoff, MarketFrame, ScaledQuote, SurfaceJet};
use crate::error::{Error, Result};
use crate::net::{PriceSurfaceModel, VolSurfaceModel};

/// Points drawn for one iteration: `initial_points` on the line `t = 0`,
/// `domain_points` in the unit square.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationBatch {
    pub initial_points: Vec<f64>,
    pub domain_points: Vec<[f64; 2]>,
}

pub fn sample_batch<R: Rng + ?Sized>(m1: usize, m2: usize, rng: &mut R) -> Result<CollocationBatch> {
    if m1 == 0 || m2 == 0 {
        return Err(Error::InvalidConfig(format!("collocation sizes must be positive, got {m1}, {m2}")));
    }
    let initial_points = (0..m1).map(|_| rng.random::<f64>()).collect();
    let domain_points = (0..m2).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
    Ok(CollocationBatch {
        initial_points,
        domain_points,
    })
}

/// Weights of the loss terms besides the data fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossLambdas {
    pub ini: f64,
    pub arb: f64,
    pub dup: f64,
}

impl Default for LossLambdas {
    fn default() -> Self {
        LossLambdas {
            ini: 1.0,
            arb: 1.0,
            dup: 1.0,
        }
    }
}

impl LossLambdas {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_ini", self.ini), ("lambda_arb", self.arb), ("lambda_dup", self.dup)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub fit: f64,
    pub ini: f64,
    pub arb: f64,
    pub dup: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.fit, self.ini, self.arb, self.dup, self.total].iter().all(|v| v.is_finite())
    }
}

pub fn total_loss(fit: f64, ini: f64, arb: f64, dup: f64, lambdas: &LossLambdas) -> LossBreakdown {
    LossBreakdown {
        fit,
        ini,
        arb,
        dup,
        total: fit + lambdas.ini * ini + lambdas.arb * arb + lambdas.dup * dup,
    }
}

/// Weighted squared error of `values` against `targets`, with the adjoint
/// `d loss / d value_i`.
fn weighted_sq_error(values: &[f64], targets: &[f64], weights: &[f64]) -> (f64, Vec<f64>) {
    let n = values.len() as f64;
    let mut loss = 0.0;
    let adj = values
        .iter()
        .zip(targets)
        .zip(weights)
        .map(|((v, y), w)| {
            let e = v - y;
            loss += w * e * e;
            2.0 * w * e / n
        })
        .collect();
    (loss / n, adj)
}

fn arb_term(jets: &[SurfaceJet], points: &[[f64; 2]], weights: &[f64], frame: &MarketFrame) -> (f64, Vec<SurfaceJet>) {
    let n = jets.len() as f64;
    let growth = frame.rate * frame.t_max;
    let mut loss = 0.0;
    let adj = jets
        .iter()
        .zip(points)
        .zip(weights)
        .map(|((jet, p), w)| {
            let f = arbitrage_functional(jet, p[0], frame);
            if f >= 0.0 {
                return SurfaceJet::ZERO;
            }
            loss += w * f * f;
            // d/df of w (f^-)^2 is 2 w f on the violated side
            let g = 2.0 * w * f / n;
            let dk = if jet.d_k > 0.0 { -growth * p[0] * g } else { 0.0 };
            SurfaceJet::new(0.0, g, dk, 0.0)
        })
        .collect();
    (loss / n, adj)
}

fn dup_term(jets: &[SurfaceJet], etas: &[f64], points: &[[f64; 2]], weights: &[f64]) -> (f64, Vec<SurfaceJet>, Vec<f64>) {
    let n = jets.len() as f64;
    let mut loss = 0.0;
    let mut eta_bar = Vec::with_capacity(jets.len());
    let adj = jets
        .iter()
        .zip(etas)
        .zip(points)
        .zip(weights)
        .map(|(((jet, &eta), p), w)| {
            let k2 = p[0] * p[0];
            let f = dupire_residual(jet, eta, p[0]);
            loss += w * f * f;
            let g = 2.0 * w * f / n;
            eta_bar.push(-g * k2 * jet.d_kk);
            SurfaceJet::new(0.0, g, 0.0, -g * eta * k2)
        })
        .collect();
    (loss / n, adj, eta_bar)
}

fn time_derivatives(jets: &[SurfaceJet]) -> Vec<f64> {
    jets.iter().map(|j| j.d_t).collect()
}

fn initial_targets(batch: &CollocationBatch, frame: &MarketFrame) -> Vec<f64> {
    batch.initial_points.iter().map(|&k| initial_payoff(k, frame)).collect()
}

fn initial_coords(batch: &CollocationBatch) -> Vec<[f64; 2]> {
    batch.initial_points.iter().map(|&k| [k, 0.0]).collect()
}

pub fn loss_fit(model: &PriceSurfaceModel, quotes: &[ScaledQuote]) -> Result<f64> {
    if quotes.is_empty() {
        return Err(Error::EmptyInput("quotes"));
    }
    let targets: Vec<f64> = quotes.iter().map(|q| q.price).collect();
    let weights = balance_weights(&targets)?;
    let coords: Vec<[f64; 2]> = quotes.iter().map(|q| [q.k, q.t]).collect();
    Ok(weighted_sq_error(&model.values(&coords), &targets, &weights).0)
}

pub fn loss_ini(model: &PriceSurfaceModel, batch: &CollocationBatch) -> Result<f64> {
    let targets = initial_targets(batch, &model.frame);
    let weights = balance_weights(&targets)?;
    Ok(weighted_sq_error(&model.values(&initial_coords(batch)), &targets, &weights).0)
}

pub fn loss_arb(model: &PriceSurfaceModel, batch: &CollocationBatch) -> Result<f64> {
    let jets = model.jets(&batch.domain_points);
    let weights = balance_weights(&time_derivatives(&jets))?;
    Ok(arb_term(&jets, &batch.domain_points, &weights, &model.frame).0)
}

pub fn loss_dup(price: &PriceSurfaceModel, vol: &VolSurfaceModel, batch: &CollocationBatch) -> Result<f64> {
    let jets = price.jets(&batch.domain_points);
    let weights = balance_weights(&time_derivatives(&jets))?;
    let etas = vol.etas(&batch.domain_points);
    Ok(dup_term(&jets, &etas, &batch.domain_points, &weights).0)
}

/// Every loss at once, plus the gradient of the total with respect to the
/// price parameters and of the Dupire loss with respect to the volatility
/// parameters.
#[derive(Debug, Clone)]
pub struct LossGradients {
    pub breakdown: LossBreakdown,
    pub price_grad: Vec<f64>,
    pub vol_grad: Vec<f64>,
}

/// Quotes in scaled coordinates together with their fixed fit weights.
#[derive(Debug, Clone)]
pub struct FitData {
    pub coords: Vec<[f64; 2]>,
    pub prices: Vec<f64>,
    pub weights: Vec<f64>,
}

impl FitData {
    pub fn new(quotes: &[ScaledQuote]) -> Result<Self> {
        if quotes.is_empty() {
            return Err(Error::EmptyInput("quotes"));
        }
        let prices: Vec<f64> = quotes.iter().map(|q| q.price).collect();
        let weights = balance_weights(&prices)?;
        Ok(FitData {
            coords: quotes.iter().map(|q| [q.k, q.t]).collect(),
            prices,
            weights,
        })
    }
}

/// Shared forward pass over quotes, initial points and domain points, then
/// one reverse pass per network.
///
/// With `chunk = Some(c)` the domain points are pushed through the reverse
/// pass `c` at a time after a tape-free pass has fixed the weights; gradients
/// are summed chunk by chunk in order.
pub fn evaluate_with_gradients(
    price: &PriceSurfaceModel,
    vol: &VolSurfaceModel,
    fit: &FitData,
    batch: &CollocationBatch,
    lambdas: &LossLambdas,
    chunk: Option<usize>,
) -> Result<LossGradients> {
    let frame = &price.frame;
    let n_fit = fit.coords.len();
    let n_ini = batch.initial_points.len();
    let domain = &batch.domain_points;
    if n_ini == 0 || domain.is_empty() {
        return Err(Error::EmptyInput("collocation batch"));
    }
    let chunk = chunk.filter(|&c| c > 0 && c < domain.len());

    let mut points = Vec::with_capacity(n_fit + n_ini + if chunk.is_none() { domain.len() } else { 0 });
    points.extend_from_slice(&fit.coords);
    points.extend(initial_coords(batch));
    if chunk.is_none() {
        points.extend_from_slice(domain);
    }
    let (jets, tape) = price.forward_tape(&points);
    let domain_jets = match chunk {
        None => jets[n_fit + n_ini..].to_vec(),
        Some(_) => price.jets(domain),
    };
    let (etas, vol_tape) = match chunk {
        None => {
            let (e, t) = vol.forward_tape(domain);
            (e, Some(t))
        }
        Some(_) => (vol.etas(domain), None),
    };

    let fit_values: Vec<f64> = jets[..n_fit].iter().map(|j| j.value).collect();
    let (fit_loss, fit_adj) = weighted_sq_error(&fit_values, &fit.prices, &fit.weights);
    let ini_targets = initial_targets(batch, frame);
    let ini_weights = balance_weights(&ini_targets)?;
    let ini_values: Vec<f64> = jets[n_fit..n_fit + n_ini].iter().map(|j| j.value).collect();
    let (ini_loss, ini_adj) = weighted_sq_error(&ini_values, &ini_targets, &ini_weights);

    let domain_weights = balance_weights(&time_derivatives(&domain_jets))?;
    let (arb_loss, arb_adj) = arb_term(&domain_jets, domain, &domain_weights, frame);
    let (dup_loss, dup_adj, eta_bar) = dup_term(&domain_jets, &etas, domain, &domain_weights);
    let breakdown = total_loss(fit_loss, ini_loss, arb_loss, dup_loss, lambdas);

    let domain_adj: Vec<SurfaceJet> = arb_adj
        .iter()
        .zip(&dup_adj)
        .map(|(a, d)| *a * lambdas.arb + *d * lambdas.dup)
        .collect();
    let mut adjoints = Vec::with_capacity(points.len());
    adjoints.extend(fit_adj.iter().map(|&g| SurfaceJet::new(g, 0.0, 0.0, 0.0)));
    adjoints.extend(ini_adj.iter().map(|&g| SurfaceJet::new(lambdas.ini * g, 0.0, 0.0, 0.0)));

    let mut price_grad = vec![0.0; price.params.len()];
    let mut vol_grad = vec![0.0; vol.params.len()];
    match chunk {
        None => {
            adjoints.extend_from_slice(&domain_adj);
            price.backward(&tape, &adjoints, &mut price_grad);
            vol.backward(vol_tape.as_ref().expect("tape"), &eta_bar, &mut vol_grad);
        }
        Some(c) => {
            price.backward(&tape, &adjoints, &mut price_grad);
            for (start, pts) in (0..domain.len()).step_by(c).zip(domain.chunks(c)) {
                let end = start + pts.len();
                let (_, t) = price.forward_tape(pts);
                price.backward(&t, &domain_adj[start..end], &mut price_grad);
                let (_, vt) = vol.forward_tape(pts);
                vol.backward(&vt, &eta_bar[start..end], &mut vol_grad);
            }
        }
    }
    Ok(LossGradients {
        breakdown,
        price_grad,
        vol_grad,
    })
}

/// Seeded collocation stream. Each call to [`Self::next_batch`] draws a fresh batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollocationSampler {
    m1: usize,
    m2: usize,
    rng: ChaCha8Rng,
}

impl CollocationSampler {
    pub fn new(m1: usize, m2: usize, seed: u64) -> Result<Self> {
        use rand::SeedableRng;
        if m1 == 0 || m2 == 0 {
            return Err(Error::InvalidConfig(format!("collocation sizes must be positive, got {m1}, {m2}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // keep the collocation stream apart from parameter initialization
        rng.set_stream(0xc011_0ca7);
        Ok(CollocationSampler { m1, m2, rng })
    }

    pub fn next_batch(&mut self) -> CollocationBatch {
        sample_batch(self.m1, self.m2, &mut self.rng).expect("sizes validated")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dupire::OptionKind;
    use crate::net::{init_params, NetConfig, NetParams};
    use rand::SeedableRng;

    fn frame() -> MarketFrame {
        MarketFrame::new(1000.0, 0.04, 3000.0, 1.5, OptionKind::Call).unwrap()
    }

    #[test]
    fn sampling_is_deterministic_and_in_range() {
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        let ba = sample_batch(16, 64, &mut a).unwrap();
        assert_eq!(ba, sample_batch(16, 64, &mut b).unwrap());
        assert!(ba.initial_points.iter().all(|k| (0.0..=1.0).contains(k)));
        assert!(ba.domain_points.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        assert_ne!(ba, sample_batch(16, 64, &mut a).unwrap());
        assert!(sample_batch(0, 4, &mut a).is_err());
    }

    #[test]
    fn uniform_mean_is_centered() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let b = sample_batch(100_000, 1, &mut rng).unwrap();
        let mean = b.initial_points.iter().sum::<f64>() / 1e5;
        assert!((0.497..=0.503).contains(&mean), "{mean}");
    }

    #[test]
    fn sampler_resamples() {
        let mut s = CollocationSampler::new(4, 8, 1).unwrap();
        let a = s.next_batch();
        let b = s.next_batch();
        assert_ne!(a, b);
    }

    #[test]
    fn total_loss_identities() {
        let l = LossLambdas::default();
        assert_eq!(total_loss(0.0, 0.0, 0.0, 0.0, &l).total, 0.0);
        assert_eq!(total_loss(1.0, 2.0, 3.0, 4.0, &l).total, 10.0);
        let unreg = LossLambdas { dup: 0.0, ..l };
        assert_eq!(total_loss(1.0, 2.0, 3.0, 4.0, &unreg).total, 6.0);
    }

    #[test]
    fn weighted_error_examples() {
        // single point: N = 1 forces w = 2
        let w = balance_weights(&[7.0]).unwrap();
        let (l, _) = weighted_sq_error(&[7.5], &[7.0], &w);
        assert!((l - 2.0 * 0.25).abs() < 1e-15);
        // targets [0, 1], errors 0.1 each: mean weight 2 gives 0.02
        let w = balance_weights(&[0.0, 1.0]).unwrap();
        let (l, _) = weighted_sq_error(&[0.1, 1.1], &[0.0, 1.0], &w);
        assert!((l - 0.02).abs() < 1e-15);
    }

    #[test]
    fn arb_and_dup_single_point_examples() {
        let f = frame();
        let jet = SurfaceJet::new(1.0, -0.5, -1.0, 0.0);
        let (l, _) = arb_term(&[jet], &[[0.5, 0.5]], &[2.0], &f);
        assert!((l - 0.5).abs() < 1e-15);
        let ok = SurfaceJet::new(1.0, 0.3, -1.0, 2.0);
        assert_eq!(arb_term(&[ok], &[[0.5, 0.5]], &[2.0], &f).0, 0.0);

        let jet = SurfaceJet::new(1.0, 0.3, 0.0, 0.0);
        let (l, _, _) = dup_term(&[jet], &[0.7], &[[0.4, 0.2]], &[2.0]);
        assert!((l - 0.18).abs() < 1e-15);
        let flat = SurfaceJet::new(3.0, 0.0, -1.0, 5.0);
        assert_eq!(dup_term(&[flat], &[0.0], &[[0.4, 0.2]], &[2.0]).0, 0.0);
    }

    #[test]
    fn arb_loss_is_monotone_in_violation() {
        let f = frame();
        let mut last = 0.0;
        for d_t in [-0.1, -0.2, -0.5, -1.0] {
            let jet = SurfaceJet::new(0.0, d_t, -1.0, 0.0);
            let (l, _) = arb_term(&[jet], &[[0.3, 0.3]], &[1.5], &f);
            assert!(l >= last);
            last = l;
        }
    }

    #[test]
    fn initial_loss_examples() {
        let f = frame();
        let p = init_params(&NetConfig::new(1, 4).unwrap(), 3).unwrap();
        let model = PriceSurfaceModel::new(p, f);
        let at_far_edge = CollocationBatch {
            initial_points: vec![1.0; 5],
            domain_points: vec![[0.5, 0.5]],
        };
        assert_eq!(loss_ini(&model, &at_far_edge).unwrap(), 0.0);

        // value 990 at k = 0 against payoff S0 = 1000: 2 * 10^2
        let (l, _) = weighted_sq_error(&[990.0], &[initial_payoff(0.0, &f)], &balance_weights(&[1000.0]).unwrap());
        assert!((l - 200.0).abs() < 1e-12);
    }

    #[test]
    fn fit_loss_rejects_empty_quotes() {
        let model = PriceSurfaceModel::new(NetParams::zeros(NetConfig::new(1, 2).unwrap()).unwrap(), frame());
        assert!(matches!(loss_fit(&model, &[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn fused_evaluation_matches_individual_losses() {
        let f = frame();
        let cfg = NetConfig::new(2, 8).unwrap();
        let price = PriceSurfaceModel::new(init_params(&cfg, 1).unwrap(), f);
        let vol = VolSurfaceModel::new(init_params(&cfg, 2).unwrap(), f);
        let quotes = vec![
            ScaledQuote { price: 300.0, k: 0.2, t: 0.3 },
            ScaledQuote { price: 40.0, k: 0.5, t: 0.9 },
            ScaledQuote { price: 0.0, k: 0.95, t: 0.2 },
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch = sample_batch(8, 32, &mut rng).unwrap();
        let lambdas = LossLambdas { ini: 0.5, arb: 2.0, dup: 1.5 };
        let fit = FitData::new(&quotes).unwrap();
        let full = evaluate_with_gradients(&price, &vol, &fit, &batch, &lambdas, None).unwrap();
        let b = full.breakdown;
        assert!((b.fit - loss_fit(&price, &quotes).unwrap()).abs() < 1e-9 * (1.0 + b.fit));
        assert!((b.ini - loss_ini(&price, &batch).unwrap()).abs() < 1e-9 * (1.0 + b.ini));
        assert!((b.arb - loss_arb(&price, &batch).unwrap()).abs() < 1e-9 * (1.0 + b.arb));
        assert!((b.dup - loss_dup(&price, &vol, &batch).unwrap()).abs() < 1e-9 * (1.0 + b.dup));
        assert!((b.total - (b.fit + 0.5 * b.ini + 2.0 * b.arb + 1.5 * b.dup)).abs() < 1e-9 * b.total);

        let chunked = evaluate_with_gradients(&price, &vol, &fit, &batch, &lambdas, Some(7)).unwrap();
        for (a, c) in full.price_grad.iter().zip(&chunked.price_grad) {
            assert!((a - c).abs() <= 1e-9 * (1.0 + a.abs()));
        }
        for (a, c) in full.vol_grad.iter().zip(&chunked.vol_grad) {
            assert!((a - c).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }

    /// Total loss with the arbitrage/Dupire weights frozen at `weights`.
    fn frozen_total(
        price: &PriceSurfaceModel,
        vol: &VolSurfaceModel,
        fit: &FitData,
        batch: &CollocationBatch,
        lambdas: &LossLambdas,
        weights: &[f64],
    ) -> (f64, f64) {
        let fit_values = price.values(&fit.coords);
        let (lf, _) = weighted_sq_error(&fit_values, &fit.prices, &fit.weights);
        let targets = initial_targets(batch, &price.frame);
        let (li, _) = weighted_sq_error(&price.values(&initial_coords(batch)), &targets, &balance_weights(&targets).unwrap());
        let jets = price.jets(&batch.domain_points);
        let (la, _) = arb_term(&jets, &batch.domain_points, weights, &price.frame);
        let (ld, _, _) = dup_term(&jets, &vol.etas(&batch.domain_points), &batch.domain_points, weights);
        (total_loss(lf, li, la, ld, lambdas).total, ld)
    }

    #[test]
    fn gradients_match_frozen_weight_finite_differences() {
        for kind in [OptionKind::Call, OptionKind::Put] {
            let f = MarketFrame { kind, ..frame() };
            let cfg = NetConfig::new(2, 8).unwrap();
            let price = PriceSurfaceModel::new(init_params(&cfg, 21).unwrap(), f);
            let vol = VolSurfaceModel::new(init_params(&cfg, 22).unwrap(), f);
            let quotes: Vec<ScaledQuote> = (0..6)
                .map(|i| ScaledQuote {
                    price: 50.0 * i as f64 + 10.0,
                    k: 0.1 + 0.13 * i as f64,
                    t: 0.2 + 0.1 * i as f64,
                })
                .collect();
            let fit = FitData::new(&quotes).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            let batch = sample_batch(5, 24, &mut rng).unwrap();
            let lambdas = LossLambdas { ini: 0.7, arb: 1.3, dup: 0.9 };
            let g = evaluate_with_gradients(&price, &vol, &fit, &batch, &lambdas, None).unwrap();
            let weights = balance_weights(&time_derivatives(&price.jets(&batch.domain_points))).unwrap();

            let h = 1e-6;
            for idx in (0..price.params.len()).step_by(7) {
                let shifted = |d: f64| {
                    let mut p = price.params.clone();
                    p.values[idx] += d;
                    frozen_total(&PriceSurfaceModel::new(p, f), &vol, &fit, &batch, &lambdas, &weights).0
                };
                let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
                let scale = fd.abs().max(g.price_grad[idx].abs()).max(1.0);
                assert!((fd - g.price_grad[idx]).abs() <= 1e-4 * scale, "{kind} price {idx}: fd {fd} analytic {}", g.price_grad[idx]);
            }
            for idx in (0..vol.params.len()).step_by(5) {
                let shifted = |d: f64| {
                    let mut p = vol.params.clone();
                    p.values[idx] += d;
                    frozen_total(&price, &VolSurfaceModel::new(p, f), &fit, &batch, &lambdas, &weights).1
                };
                let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
                let scale = fd.abs().max(g.vol_grad[idx].abs()).max(1.0);
                assert!((fd - g.vol_grad[idx]).abs() <= 1e-4 * scale, "{kind} vol {idx}: fd {fd} analytic {}", g.vol_grad[idx]);
            }
        }
    }
}
