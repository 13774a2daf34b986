#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use volcal::dupire::{balance_weights, classical_dupire_sigma, dupire_residual, MarketFrame, OptionKind, SurfaceJet};
use volcal::mc::{bs_closed_form, mc_price, simulate_paths, ConstantVol, SimConfig};
use volcal::net::{
    init_params, param_gradient, JetObjective, NetConfig, NetParams, Normalization, PriceSurfaceModel, ValueObjective,
    VolSurfaceModel,
};

pub fn standard_frame(kind: OptionKind) -> MarketFrame {
    MarketFrame::new(1000.0, 0.04, 3000.0, 1.5, kind).unwrap()
}

/// Jet of a Black–Scholes surface in scaled coordinates.
pub fn bs_scaled_jet(frame: &MarketFrame, sigma: f64, k: f64, t: f64) -> SurfaceJet {
    let strike = frame.strike_at(k, t);
    let maturity = t * frame.t_max;
    let v = bs_closed_form(frame.spot, strike, maturity, frame.rate, sigma, frame.kind).unwrap();
    // K = K_max k e^{r T_max t}: chain rule from (K, T) to (k, t)
    let dk_dk = strike / k;
    let g = frame.rate * frame.t_max;
    SurfaceJet {
        value: v.price,
        d_t: v.d_t * frame.t_max + v.d_k * strike * g,
        d_k: v.d_k * dk_dk,
        d_kk: v.d_kk * dk_dk * dk_dk,
    }
}

/// Largest `|f_dup|` of the r = 0, sigma = 0.3 Black–Scholes call surface
/// with the matching constant eta on a 32 x 32 interior grid.
pub fn dupire_oracle_residual() -> f64 {
    let frame = MarketFrame::new(1000.0, 0.0, 3000.0, 1.5, OptionKind::Call).unwrap();
    let sigma = 0.3;
    let eta = frame.t_max * sigma * sigma / 2.0;
    let mut worst: f64 = 0.0;
    for i in 1..=32 {
        for j in 1..=32 {
            let k = i as f64 / 33.0;
            let t = j as f64 / 33.0;
            let jet = bs_scaled_jet(&frame, sigma, k, t);
            worst = worst.max(dupire_residual(&jet, eta, k).abs());
        }
    }
    worst
}

/// Largest error of the classical Dupire volatility read off r = 0.04
/// Black–Scholes derivatives at 100 random interior points.
pub fn classical_sigma_error(seed: u64) -> f64 {
    let frame = standard_frame(OptionKind::Call);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let strike = rng.random_range(600.0..1600.0);
        let maturity = rng.random_range(0.2..1.5);
        let v = bs_closed_form(frame.spot, strike, maturity, frame.rate, 0.3, OptionKind::Call).unwrap();
        let jet = SurfaceJet::new(v.price, v.d_t, v.d_k, v.d_kk);
        let s = classical_dupire_sigma(&jet, strike, &frame).unwrap();
        worst = worst.max((s - 0.3).abs());
    }
    worst
}

pub struct McCheck {
    /// Largest |MC - closed form| in units of the reported standard error.
    pub max_z: f64,
    /// Largest parity gap in units of the combined standard error.
    pub max_parity_z: f64,
}

/// 20 random `(K, T)` nodes, constant sigma = 0.3, shared paths.
pub fn mc_against_black_scholes(n_paths: usize, seed: u64) -> McCheck {
    let call = standard_frame(OptionKind::Call);
    let put = standard_frame(OptionKind::Put);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes: Vec<(f64, f64)> = (0..20)
        .map(|_| (rng.random_range(600.0..1600.0), (rng.random_range(10..=150) as f64) * 0.01))
        .collect();
    let maturities: Vec<f64> = nodes.iter().map(|n| n.1).collect();
    let sim = SimConfig {
        n_paths,
        seed,
        ..Default::default()
    };
    let paths = simulate_paths(&ConstantVol(0.3), &call, &sim, &maturities).unwrap();
    let mut max_z: f64 = 0.0;
    let mut max_parity_z: f64 = 0.0;
    for &(k, t) in &nodes {
        let c = mc_price(&paths, k, t, &call).unwrap();
        let p = mc_price(&paths, k, t, &put).unwrap();
        let bc = bs_closed_form(1000.0, k, t, 0.04, 0.3, OptionKind::Call).unwrap().price;
        let bp = bs_closed_form(1000.0, k, t, 0.04, 0.3, OptionKind::Put).unwrap().price;
        max_z = max_z.max((c.price - bc).abs() / c.std_error).max((p.price - bp).abs() / p.std_error);
        let parity = c.price - p.price - (1000.0 - k * (-0.04 * t).exp());
        let combined = (c.std_error * c.std_error + p.std_error * p.std_error).sqrt();
        max_parity_z = max_parity_z.max(parity.abs() / combined);
    }
    McCheck { max_z, max_parity_z }
}

pub fn random_net(rng: &mut ChaCha8Rng, width_choices: &[usize]) -> NetParams {
    let width = width_choices[rng.random_range(0..width_choices.len())];
    let blocks = rng.random_range(1..=3);
    let normalization = if rng.random_bool(0.5) {
        Normalization::PerLayerAffine
    } else {
        Normalization::None
    };
    let cfg = NetConfig {
        normalization,
        ..NetConfig::new(blocks, width).unwrap()
    };
    let mut p = init_params(&cfg, rng.random()).unwrap();
    if normalization == Normalization::PerLayerAffine {
        // move the affine parameters away from the identity
        let layout = p.layout();
        for b in &layout.blocks {
            for n in [b.first_norm, b.second_norm].into_iter().flatten() {
                for i in 0..n.len {
                    p.values[n.scale + i] = rng.random_range(0.5..1.5);
                    p.values[n.shift + i] = rng.random_range(-0.3..0.3);
                }
            }
        }
    }
    p
}

fn random_frame(rng: &mut ChaCha8Rng, kind: OptionKind) -> MarketFrame {
    MarketFrame::new(
        rng.random_range(500.0..2000.0),
        rng.random_range(0.0..0.08),
        rng.random_range(2000.0..4000.0),
        rng.random_range(0.5..2.0),
        kind,
    )
    .unwrap()
}

fn richardson(d: impl Fn(f64) -> f64, h: f64) -> f64 {
    (4.0 * d(h / 2.0) - d(h)) / 3.0
}

/// Largest relative error between analytic price jets and Richardson
/// finite differences over `configs` random networks per option kind.
pub fn jet_fd_error(configs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for kind in [OptionKind::Call, OptionKind::Put] {
        for _ in 0..configs {
            let params = random_net(&mut rng, &[4, 8, 16]);
            let frame = random_frame(&mut rng, kind);
            let model = PriceSurfaceModel::new(params, frame);
            let k = rng.random_range(0.1..0.9);
            let t = rng.random_range(0.1..0.9);
            let jet = model.jet(k, t);
            let v = |k: f64, t: f64| model.value(k, t);
            let fd_t = richardson(|h| (v(k, t + h) - v(k, t - h)) / (2.0 * h), 1e-3);
            let fd_k = richardson(|h| (v(k + h, t) - v(k - h, t)) / (2.0 * h), 1e-3);
            let fd_kk = richardson(|h| (v(k + h, t) - 2.0 * v(k, t) + v(k - h, t)) / (h * h), 1e-2);
            let scale = jet.value.abs().max(1e-3 * frame.spot);
            for (fd, an) in [(fd_t, jet.d_t), (fd_k, jet.d_k), (fd_kk, jet.d_kk)] {
                worst = worst.max((fd - an).abs() / an.abs().max(scale));
            }
        }
    }
    worst
}

pub struct GradientCheck {
    pub value_loss: f64,
    pub dkk_loss: f64,
}

fn gradient_rel_error(analytic: &[f64], loss: &dyn Fn(&[f64]) -> f64, base: &[f64], every: usize) -> f64 {
    let mut worst: f64 = 0.0;
    let h = 1e-5;
    for idx in (0..base.len()).step_by(every) {
        let mut up = base.to_vec();
        up[idx] += h;
        let mut dn = base.to_vec();
        dn[idx] -= h;
        let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
        let scale = analytic.iter().map(|g| g.abs()).fold(0.0, f64::max).max(1e-12);
        worst = worst.max((fd - analytic[idx]).abs() / scale.max(fd.abs()));
    }
    worst
}

/// Parameter gradients of value-based and `d_kk`-based losses on width-8
/// networks against central differences, as relative errors.
pub fn param_gradient_fd(seed: u64) -> GradientCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<[f64; 2]> = (0..16).map(|_| [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)]).collect();
    let targets: Vec<f64> = (0..16).map(|_| rng.random_range(0.0..300.0)).collect();
    let mut value_loss: f64 = 0.0;
    let mut dkk_loss: f64 = 0.0;
    for kind in [OptionKind::Call, OptionKind::Put] {
        let frame = standard_frame(kind);
        for blocks in 1..=3 {
            let normalization = if blocks == 2 { Normalization::PerLayerAffine } else { Normalization::None };
            let cfg = NetConfig {
                normalization,
                ..NetConfig::new(blocks, 8).unwrap()
            };
            let params = init_params(&cfg, rng.random()).unwrap();

            let value_obj = JetObjective {
                frame,
                points: points.clone(),
                pointwise: |i: usize, j: &SurfaceJet| {
                    let e = j.value - targets[i];
                    (e * e, SurfaceJet::new(2.0 * e, 0.0, 0.0, 0.0))
                },
            };
            let g = param_gradient(&value_obj, &params).unwrap();
            let loss = |v: &[f64]| {
                let m = PriceSurfaceModel::new(NetParams::from_values(cfg, 0, v.to_vec()).unwrap(), frame);
                m.values(&points).iter().zip(&targets).map(|(p, y)| (p - y) * (p - y)).sum::<f64>()
            };
            value_loss = value_loss.max(gradient_rel_error(&g, &loss, &params.values, 3));

            let dkk_obj = JetObjective {
                frame,
                points: points.clone(),
                pointwise: |_: usize, j: &SurfaceJet| (j.d_kk * j.d_kk, SurfaceJet::new(0.0, 0.0, 0.0, 2.0 * j.d_kk)),
            };
            let g = param_gradient(&dkk_obj, &params).unwrap();
            let loss = |v: &[f64]| {
                let m = PriceSurfaceModel::new(NetParams::from_values(cfg, 0, v.to_vec()).unwrap(), frame);
                m.jets(&points).iter().map(|j| j.d_kk * j.d_kk).sum::<f64>()
            };
            dkk_loss = dkk_loss.max(gradient_rel_error(&g, &loss, &params.values, 3));

            let eta_obj = ValueObjective {
                frame,
                points: points.clone(),
                pointwise: |i: usize, e: f64| {
                    let d = e - targets[i] / 300.0;
                    (d * d, 2.0 * d)
                },
            };
            let g = param_gradient(&eta_obj, &params).unwrap();
            let loss = |v: &[f64]| {
                let m = VolSurfaceModel::new(NetParams::from_values(cfg, 0, v.to_vec()).unwrap(), frame);
                m.etas(&points).iter().zip(&targets).map(|(e, y)| (e - y / 300.0).powi(2)).sum::<f64>()
            };
            value_loss = value_loss.max(gradient_rel_error(&g, &loss, &params.values, 3));
        }
    }
    GradientCheck { value_loss, dkk_loss }
}

pub struct StructuralCheck {
    pub call_edge: f64,
    pub put_edge: f64,
    pub call_bound_violations: usize,
    pub negative_eta: usize,
    pub weight_mean_error: f64,
}

/// Boundary values, price bounds and eta sign over random parameter draws,
/// plus the mean of balance weights over random vectors with zeros.
pub fn structural_checks(draws: usize, seed: u64) -> StructuralCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let call_frame = standard_frame(OptionKind::Call);
    let put_frame = standard_frame(OptionKind::Put);
    let mut out = StructuralCheck {
        call_edge: 0.0,
        put_edge: 0.0,
        call_bound_violations: 0,
        negative_eta: 0,
        weight_mean_error: 0.0,
    };
    let cfg = NetConfig::new(2, 8).unwrap();
    for _ in 0..draws {
        let mut params = init_params(&cfg, rng.random()).unwrap();
        let spread = rng.random_range(0.5..4.0);
        for v in &mut params.values {
            *v *= spread;
        }
        let call = PriceSurfaceModel::new(params.clone(), call_frame);
        let put = PriceSurfaceModel::new(params.clone(), put_frame);
        let vol = VolSurfaceModel::new(params, call_frame);
        let t = rng.random::<f64>();
        out.call_edge = out.call_edge.max(call.value(1.0, t).abs());
        out.put_edge = out.put_edge.max(put.value(0.0, t).abs());
        let (k, t) = (rng.random::<f64>(), rng.random::<f64>());
        let c = call.value(k, t);
        if !(0.0..=call_frame.spot).contains(&c) {
            out.call_bound_violations += 1;
        }
        if vol.eta(k, t) < 0.0 {
            out.negative_eta += 1;
        }
    }
    for _ in 0..draws {
        let n = rng.random_range(1..200);
        let values: Vec<f64> = (0..n)
            .map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(-500.0..500.0) })
            .collect();
        let w = balance_weights(&values).unwrap();
        let mean = w.iter().sum::<f64>() / n as f64;
        out.weight_mean_error = out.weight_mean_error.max((mean - 2.0).abs());
    }
    out
}
