use super::head::{price_head, price_head_with_jacobian};
use super::mlp::{backward, forward, MlpTape, JET, VALUE};
use super::params::NetParams;
use super::{sigmoid, softplus};
use crate::dupire::{unscale_volatility, MarketFrame, OptionKind, SurfaceJet};
use crate::error::{Error, Result};

/// Points per forward pass when only values are requested.
const EVAL_CHUNK: usize = 4096;

/// Option-price surface `pi_theta(k, t)` with structural boundary values and bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSurfaceModel {
    pub params: NetParams,
    pub frame: MarketFrame,
}

/// Reverse-pass state of a batched price evaluation.
pub struct PriceTape {
    mlp: MlpTape,
    jacobians: Vec<[[f64; 4]; 4]>,
}

impl PriceSurfaceModel {
    pub fn new(params: NetParams, frame: MarketFrame) -> Self {
        PriceSurfaceModel { params, frame }
    }

    pub fn kind(&self) -> OptionKind {
        self.frame.kind
    }

    /// Value, `d/dt`, `d/dk` and `d2/dk2` of the price at one point.
    pub fn jet(&self, k: f64, t: f64) -> SurfaceJet {
        self.jets(&[[k, t]])[0]
    }

    pub fn jets(&self, points: &[[f64; 2]]) -> Vec<SurfaceJet> {
        let mut out = Vec::with_capacity(points.len());
        for chunk in points.chunks(EVAL_CHUNK) {
            let (raw, _) = forward(&self.params, chunk, JET, false);
            let b = chunk.len();
            out.extend(chunk.iter().enumerate().map(|(i, p)| {
                let r = [raw[i], raw[b + i], raw[2 * b + i], raw[3 * b + i]];
                SurfaceJet::from_array(price_head(&self.frame, p[0], p[1], r))
            }));
        }
        out
    }

    pub fn value(&self, k: f64, t: f64) -> f64 {
        self.values(&[[k, t]])[0]
    }

    pub fn values(&self, points: &[[f64; 2]]) -> Vec<f64> {
        let mut out = Vec::with_capacity(points.len());
        for chunk in points.chunks(EVAL_CHUNK) {
            let (raw, _) = forward(&self.params, chunk, VALUE, false);
            out.extend(
                chunk
                    .iter()
                    .zip(&raw)
                    .map(|(p, &o)| price_head(&self.frame, p[0], p[1], [o, 0.0, 0.0, 0.0])[0]),
            );
        }
        out
    }

    /// Jets at `points` plus the state needed by [`Self::backward`].
    pub fn forward_tape(&self, points: &[[f64; 2]]) -> (Vec<SurfaceJet>, PriceTape) {
        let (raw, tape) = forward(&self.params, points, JET, true);
        let b = points.len();
        let mut jets = Vec::with_capacity(b);
        let mut jacobians = Vec::with_capacity(b);
        for (i, p) in points.iter().enumerate() {
            let r = [raw[i], raw[b + i], raw[2 * b + i], raw[3 * b + i]];
            let (v, j) = price_head_with_jacobian(&self.frame, p[0], p[1], r);
            jets.push(SurfaceJet::from_array(v));
            jacobians.push(j);
        }
        (
            jets,
            PriceTape {
                mlp: tape.expect("tape requested"),
                jacobians,
            },
        )
    }

    /// Adds to `grad` the parameter gradient of `sum_i <adjoints[i], jet_i>`.
    pub fn backward(&self, tape: &PriceTape, adjoints: &[SurfaceJet], grad: &mut [f64]) {
        let b = tape.mlp.batch();
        assert_eq!(adjoints.len(), b);
        let mut raw_bar = vec![0.0; JET * b];
        for (i, (adj, jac)) in adjoints.iter().zip(&tape.jacobians).enumerate() {
            let a = adj.to_array();
            for s in 0..JET {
                raw_bar[s * b + i] = (0..4).map(|r| a[r] * jac[r][s]).sum();
            }
        }
        backward(&self.params, &tape.mlp, &raw_bar, grad);
    }
}

/// Squared local-volatility surface `eta_theta(k, t) >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct VolSurfaceModel {
    pub params: NetParams,
    pub frame: MarketFrame,
}

pub struct VolTape {
    mlp: MlpTape,
    slopes: Vec<f64>,
}

impl VolSurfaceModel {
    pub fn new(params: NetParams, frame: MarketFrame) -> Self {
        VolSurfaceModel { params, frame }
    }

    pub fn eta(&self, k: f64, t: f64) -> f64 {
        self.etas(&[[k, t]])[0]
    }

    pub fn etas(&self, points: &[[f64; 2]]) -> Vec<f64> {
        let mut out = Vec::with_capacity(points.len());
        for chunk in points.chunks(EVAL_CHUNK) {
            let (raw, _) = forward(&self.params, chunk, VALUE, false);
            out.extend(raw.into_iter().map(softplus));
        }
        out
    }

    /// Annualized local volatility at scaled coordinates.
    pub fn sigma(&self, k: f64, t: f64) -> f64 {
        unscale_volatility(self.eta(k, t), &self.frame).expect("softplus output is non-negative")
    }

    pub fn sigmas(&self, points: &[[f64; 2]]) -> Vec<f64> {
        let scale = 2.0 / self.frame.t_max;
        self.etas(points).into_iter().map(|e| (scale * e).sqrt()).collect()
    }

    pub fn forward_tape(&self, points: &[[f64; 2]]) -> (Vec<f64>, VolTape) {
        let (raw, tape) = forward(&self.params, points, VALUE, true);
        let etas = raw.iter().map(|&o| softplus(o)).collect();
        let slopes = raw.iter().map(|&o| sigmoid(o)).collect();
        (
            etas,
            VolTape {
                mlp: tape.expect("tape requested"),
                slopes,
            },
        )
    }

    pub fn backward(&self, tape: &VolTape, eta_bar: &[f64], grad: &mut [f64]) {
        assert_eq!(eta_bar.len(), tape.slopes.len());
        let raw_bar: Vec<f64> = eta_bar.iter().zip(&tape.slopes).map(|(g, s)| g * s).collect();
        backward(&self.params, &tape.mlp, &raw_bar, grad);
    }
}

/// A scalar loss with an exact parameter gradient.
pub trait Objective {
    fn loss_and_gradient(&self, params: &NetParams) -> Result<(f64, Vec<f64>)>;
}

/// Gradient of `objective` at `params`; fails if anything is non-finite.
pub fn param_gradient<O: Objective + ?Sized>(objective: &O, params: &NetParams) -> Result<Vec<f64>> {
    let (loss, grad) = objective.loss_and_gradient(params)?;
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    Ok(grad)
}

/// `sum(theta^2)`.
pub struct SquaredNorm;

impl Objective for SquaredNorm {
    fn loss_and_gradient(&self, params: &NetParams) -> Result<(f64, Vec<f64>)> {
        let loss = params.values.iter().map(|v| v * v).sum();
        Ok((loss, params.values.iter().map(|v| 2.0 * v).collect()))
    }
}

/// `sum_i f(i, jet_i)` over price-surface jets, where `f` returns the term and
/// its adjoint with respect to the jet entries.
pub struct JetObjective<F> {
    pub frame: MarketFrame,
    pub points: Vec<[f64; 2]>,
    pub pointwise: F,
}

impl<F> Objective for JetObjective<F>
where
    F: Fn(usize, &SurfaceJet) -> (f64, SurfaceJet),
{
    fn loss_and_gradient(&self, params: &NetParams) -> Result<(f64, Vec<f64>)> {
        let model = PriceSurfaceModel::new(params.clone(), self.frame);
        let (jets, tape) = model.forward_tape(&self.points);
        let mut loss = 0.0;
        let adjoints: Vec<SurfaceJet> = jets
            .iter()
            .enumerate()
            .map(|(i, j)| {
                let (l, a) = (self.pointwise)(i, j);
                loss += l;
                a
            })
            .collect();
        let mut grad = vec![0.0; params.len()];
        model.backward(&tape, &adjoints, &mut grad);
        Ok((loss, grad))
    }
}

/// `sum_i f(i, eta_i)` over the volatility network.
pub struct ValueObjective<F> {
    pub frame: MarketFrame,
    pub points: Vec<[f64; 2]>,
    pub pointwise: F,
}

impl<F> Objective for ValueObjective<F>
where
    F: Fn(usize, f64) -> (f64, f64),
{
    fn loss_and_gradient(&self, params: &NetParams) -> Result<(f64, Vec<f64>)> {
        let model = VolSurfaceModel::new(params.clone(), self.frame);
        let (etas, tape) = model.forward_tape(&self.points);
        let mut loss = 0.0;
        let bars: Vec<f64> = etas
            .iter()
            .enumerate()
            .map(|(i, &e)| {
                let (l, a) = (self.pointwise)(i, e);
                loss += l;
                a
            })
            .collect();
        let mut grad = vec![0.0; params.len()];
        model.backward(&tape, &bars, &mut grad);
        Ok((loss, grad))
    }
}
