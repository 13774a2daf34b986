//! Output activation and boundary-enforcing wrappers, written once over a
//! small scalar trait so the same code yields values (`f64`) and their
//! Jacobian with respect to the raw network jet (`Dual4`).

use std::ops::{Add, Mul, Neg, Sub};

use super::{sigmoid, softplus};
use crate::dupire::{MarketFrame, OptionKind};

pub(crate) trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self>
{
    fn cst(v: f64) -> Self;
    fn exp(self) -> Self;
    fn softplus(self) -> Self;
    fn sigmoid(self) -> Self;
}

impl Scalar for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn softplus(self) -> Self {
        softplus(self)
    }
    fn sigmoid(self) -> Self {
        sigmoid(self)
    }
}

/// Forward-mode dual number with four tangent directions.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Dual4 {
    pub v: f64,
    pub d: [f64; 4],
}

impl Dual4 {
    fn seed(v: f64, i: usize) -> Self {
        let mut d = [0.0; 4];
        d[i] = 1.0;
        Dual4 { v, d }
    }

    fn chain(self, v: f64, dv: f64) -> Self {
        Dual4 {
            v,
            d: self.d.map(|x| x * dv),
        }
    }
}

impl Add for Dual4 {
    type Output = Dual4;
    fn add(self, o: Dual4) -> Dual4 {
        Dual4 {
            v: self.v + o.v,
            d: std::array::from_fn(|i| self.d[i] + o.d[i]),
        }
    }
}

impl Sub for Dual4 {
    type Output = Dual4;
    fn sub(self, o: Dual4) -> Dual4 {
        Dual4 {
            v: self.v - o.v,
            d: std::array::from_fn(|i| self.d[i] - o.d[i]),
        }
    }
}

impl Mul for Dual4 {
    type Output = Dual4;
    fn mul(self, o: Dual4) -> Dual4 {
        Dual4 {
            v: self.v * o.v,
            d: std::array::from_fn(|i| self.d[i] * o.v + self.v * o.d[i]),
        }
    }
}

impl Neg for Dual4 {
    type Output = Dual4;
    fn neg(self) -> Dual4 {
        Dual4 {
            v: -self.v,
            d: self.d.map(|x| -x),
        }
    }
}

impl Scalar for Dual4 {
    fn cst(v: f64) -> Self {
        Dual4 { v, d: [0.0; 4] }
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e)
    }
    fn softplus(self) -> Self {
        self.chain(softplus(self.v), sigmoid(self.v))
    }
    fn sigmoid(self) -> Self {
        let s = sigmoid(self.v);
        self.chain(s, s * (1.0 - s))
    }
}

/// Softplus applied to a raw jet `(o, o_t, o_k, o_kk)`.
#[inline]
fn softplus_jet<S: Scalar>(o: [S; 4]) -> [S; 4] {
    let s = o[0].sigmoid();
    let n = o[0].softplus();
    let one = S::cst(1.0);
    [n, s * o[1], s * o[2], s * o[3] + s * (one - s) * o[2] * o[2]]
}

/// Price jet of the ansatz in scaled coordinates given the raw network jet.
///
/// Call: `S0 (1 - exp(-(1 - k) N))`; put: `K_max e^{r T_max t} k (1 - exp(-k N))`.
pub(crate) fn price_head<S: Scalar>(frame: &MarketFrame, k: f64, t: f64, raw: [S; 4]) -> [S; 4] {
    let [n, n_t, n_k, n_kk] = softplus_jet(raw);
    let c = S::cst;
    match frame.kind {
        OptionKind::Call => {
            let m = c(1.0 - k);
            let e = m * n;
            let e_t = m * n_t;
            let e_k = m * n_k - n;
            let e_kk = m * n_kk - c(2.0) * n_k;
            let ex = (-e).exp();
            let s0 = c(frame.spot);
            [
                s0 * (c(1.0) - ex),
                s0 * ex * e_t,
                s0 * ex * e_k,
                s0 * ex * (e_kk - e_k * e_k),
            ]
        }
        OptionKind::Put => {
            let growth = frame.rate * frame.t_max;
            let amp = frame.k_max * (growth * t).exp();
            let kk = c(k);
            let f = kk * n;
            let f_t = kk * n_t;
            let f_k = n + kk * n_k;
            let f_kk = c(2.0) * n_k + kk * n_kk;
            let ex = (-f).exp();
            let g = c(1.0) - ex;
            let g_t = ex * f_t;
            let g_k = ex * f_k;
            let g_kk = ex * (f_kk - f_k * f_k);
            let a = c(amp);
            [
                a * kk * g,
                c(growth * amp) * kk * g + a * kk * g_t,
                a * (g + kk * g_k),
                a * (c(2.0) * g_k + kk * g_kk),
            ]
        }
    }
}

/// Price jet and its Jacobian `J[i][j] = d price_i / d raw_j`.
pub(crate) fn price_head_with_jacobian(frame: &MarketFrame, k: f64, t: f64, raw: [f64; 4]) -> ([f64; 4], [[f64; 4]; 4]) {
    let duals = std::array::from_fn(|i| Dual4::seed(raw[i], i));
    let out = price_head(frame, k, t, duals);
    (out.map(|d| d.v), out.map(|d| d.d))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dual_and_plain_paths_agree() {
        for kind in [OptionKind::Call, OptionKind::Put] {
            let frame = MarketFrame::new(1000.0, 0.04, 3000.0, 1.5, kind).unwrap();
            let raw = [0.3, -0.7, 1.1, 0.4];
            let plain = price_head(&frame, 0.4, 0.6, raw);
            let (vals, jac) = price_head_with_jacobian(&frame, 0.4, 0.6, raw);
            assert_eq!(plain, vals);
            for j in 0..4 {
                let h = 1e-6;
                let mut up = raw;
                up[j] += h;
                let mut dn = raw;
                dn[j] -= h;
                let pu = price_head(&frame, 0.4, 0.6, up);
                let pd = price_head(&frame, 0.4, 0.6, dn);
                for i in 0..4 {
                    let fd = (pu[i] - pd[i]) / (2.0 * h);
                    assert!((fd - jac[i][j]).abs() <= 1e-6 * (1.0 + fd.abs()), "{kind} {i} {j}");
                }
            }
        }
    }
}
