//! Sufficient conditions for convergence of the cluster expansion and the
//! bounds that follow from them.

use serde::{Deserialize, Serialize};

use super::series::{deviation_sum, l_delta};
use crate::error::{invalid, Result};
use crate::scalar::Real;

/// Tolerance the threshold bisection stops at.
pub const THRESHOLD_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BzParams<F> {
    /// volume-weight coefficient `A` (or `B`)
    pub a: F,
    pub delta: F,
}

impl<F: Real> Default for BzParams<F> {
    fn default() -> Self {
        BzParams { a: F::one(), delta: F::lit(0.5) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BzReport<F> {
    pub degree: usize,
    /// `eta` for p-SOS, `zeta` for finite spins
    pub rate: F,
    pub params: BzParams<F>,
    pub l_delta: F,
    /// `e^A <= delta e^eta`
    pub cond1_ok: bool,
    /// ratio of the geometric series on the left of the second condition
    pub ratio: F,
    pub divergent: bool,
    pub cond2_lhs: F,
    pub cond2_rhs: F,
    pub margin: F,
}

impl<F: Real> BzReport<F> {
    pub fn passed(&self) -> bool {
        self.cond1_ok && !self.divergent && self.cond2_lhs <= self.cond2_rhs
    }

    fn build(degree: usize, rate: F, params: BzParams<F>, ratio: F, prefactor: F, rhs: F, ld: F) -> Self {
        let cond1_ok = params.a.exp() <= params.delta * rate.exp();
        let divergent = !(ratio < F::one());
        let cond2_lhs = if divergent { F::infinity() } else { prefactor * ratio / (F::one() - ratio) };
        BzReport {
            degree,
            rate,
            params,
            l_delta: ld,
            cond1_ok,
            ratio,
            divergent,
            cond2_lhs,
            cond2_rhs: rhs,
            margin: rhs - cond2_lhs,
        }
    }
}

fn check_rate<F: Real>(rate: F, params: &BzParams<F>) -> Result<()> {
    if !(params.a > F::zero()) {
        return invalid(format!("volume weight must be positive, got {}", params.a));
    }
    if !(rate > params.a) {
        return invalid(format!("rate {} must exceed the volume weight {}", rate, params.a));
    }
    Ok(())
}

/// p-SOS: `sum_l ((d+1)^2 S)^l <= (d+1)^2/(d+2) A / L(delta)` with
/// `S = sum_{s != 0} exp(-|s|^p (eta - A))`.
pub fn bz_condition_check_psos<F: Real>(degree: usize, p: F, eta: F, params: BzParams<F>) -> Result<BzReport<F>> {
    check_rate(eta, &params)?;
    let ld = l_delta(params.delta)?;
    let d1 = F::from_usize_lossy((degree + 1) * (degree + 1));
    let s = deviation_sum(p, eta - params.a)?.upper();
    let rhs = d1 / F::from_usize_lossy(degree + 2) * params.a / ld;
    Ok(BzReport::build(degree, eta, params, d1 * s, F::one(), rhs, ld))
}

/// Finite spins: `(d+2) sum_l e^{-l(zeta-B)} (q-1)^l (d+1)^{2(l-1)} <= B / L(delta)`.
pub fn bz_condition_check_finite<F: Real>(degree: usize, q: usize, zeta: F, params: BzParams<F>) -> Result<BzReport<F>> {
    check_rate(zeta, &params)?;
    if q < 2 {
        return invalid(format!("need at least two colours, got {q}"));
    }
    let ld = l_delta(params.delta)?;
    let d1 = F::from_usize_lossy((degree + 1) * (degree + 1));
    let y = (-(zeta - params.a)).exp() * F::from_usize_lossy(q - 1) * d1;
    let prefactor = F::from_usize_lossy(degree + 2) / d1;
    Ok(BzReport::build(degree, zeta, params, y, prefactor, params.a / ld, ld))
}

fn bisect<F: Real>(params: &BzParams<F>, pass: impl Fn(F) -> Result<bool>) -> Result<F> {
    let mut lo = params.a;
    let mut hi = params.a + F::one();
    let mut steps = 0;
    while !pass(hi)? {
        lo = hi;
        hi = params.a + (hi - params.a) * F::lit(2.0);
        steps += 1;
        if steps > 200 {
            return invalid("no rate satisfies the convergence conditions");
        }
    }
    let tol = F::lit(THRESHOLD_TOL);
    while hi - lo > tol {
        let mid = (lo + hi) / F::lit(2.0);
        if mid > params.a && pass(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Smallest `eta` (to bisection tolerance) passing both p-SOS conditions.
pub fn eta_threshold<F: Real>(degree: usize, p: F, params: BzParams<F>) -> Result<F> {
    bisect(&params, |eta| Ok(bz_condition_check_psos(degree, p, eta, params)?.passed()))
}

/// Smallest `zeta` passing both finite-spin conditions.
pub fn zeta_threshold<F: Real>(degree: usize, q: usize, params: BzParams<F>) -> Result<F> {
    bisect(&params, |z| Ok(bz_condition_check_finite(degree, q, z, params)?.passed()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdScale<F> {
    pub zeta0: F,
    /// `zeta0 / c` when the stability constant is positive
    pub beta0: Option<F>,
    pub log_q_minus_1: F,
}

pub fn threshold_scale_finite<F: Real>(degree: usize, q: usize, c: F, params: BzParams<F>) -> Result<ThresholdScale<F>> {
    let zeta0 = zeta_threshold(degree, q, params)?;
    Ok(ThresholdScale {
        zeta0,
        beta0: (c > F::zero()).then(|| zeta0 / c),
        log_q_minus_1: F::from_usize_lossy(q - 1).ln(),
    })
}

/// `L(delta) |rho| e^{a}`: bound on the total weight of clusters containing a polymer.
pub fn cluster_tail_bound<F: Real>(rho: F, a: F, delta: F) -> Result<F> {
    Ok(l_delta(delta)? * rho.abs() * a.exp())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationBound<F> {
    /// `(d+1)^2 S(eta - A)`
    pub x: F,
    pub prefactor: F,
    /// exponential rate `-log x`
    pub rate: F,
    pub phi: F,
}

/// `phi(|W|, r) = exp(|W| L(delta) (d+1)^{-2} x^r / (1 - x)) - 1`, the
/// weight of clusters linking a window of `|W|` sites to a set `r` steps away.
/// `x` is the per-step ratio; pass it from [`correlation_ratio_psos`] or
/// [`correlation_ratio_finite`].
pub fn correlation_bound<F: Real>(degree: usize, x: F, delta: F, window: usize, r: usize) -> Result<CorrelationBound<F>> {
    if r == 0 {
        return invalid("events must have disjoint supports");
    }
    let ld = l_delta(delta)?;
    let d1 = F::from_usize_lossy((degree + 1) * (degree + 1));
    if !(x < F::one()) {
        return Ok(CorrelationBound { x, prefactor: F::infinity(), rate: F::zero(), phi: F::infinity() });
    }
    let prefactor = ld / d1 / (F::one() - x);
    let exponent = F::from_usize_lossy(window) * prefactor * x.powi(r as i32);
    Ok(CorrelationBound { x, prefactor, rate: -x.ln(), phi: exponent.exp_m1() })
}

pub fn correlation_ratio_psos<F: Real>(degree: usize, p: F, eta: F, params: BzParams<F>) -> Result<F> {
    check_rate(eta, &params)?;
    let d1 = F::from_usize_lossy((degree + 1) * (degree + 1));
    Ok(d1 * deviation_sum(p, eta - params.a)?.upper())
}

pub fn correlation_ratio_finite<F: Real>(degree: usize, q: usize, zeta: F, params: BzParams<F>) -> Result<F> {
    check_rate(zeta, &params)?;
    let d1 = F::from_usize_lossy((degree + 1) * (degree + 1));
    Ok(d1 * F::from_usize_lossy(q - 1) * (-(zeta - params.a)).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psos_example() {
        let r = bz_condition_check_psos(4, 1.0f64, 10.0, BzParams::default()).unwrap();
        let s = 2.0 * (-9.0f64).exp() / (1.0 - (-9.0f64).exp());
        assert!((r.ratio - 25.0 * s).abs() < 1e-15);
        assert!((r.ratio - 0.00617).abs() < 1e-4);
        assert!((r.l_delta - 2.0 * 2f64.ln()).abs() < 1e-15);
        assert!(r.passed() && r.margin > 2.9);
        assert!(bz_condition_check_psos(4, 1.0f64, 1.0, BzParams::default()).is_err());
    }

    #[test]
    fn finite_example() {
        let r = bz_condition_check_finite(4, 3, 10.0f64, BzParams::default()).unwrap();
        let x = 50.0 * (-9.0f64).exp();
        assert!((r.cond2_lhs - 6.0 / 25.0 * x / (1.0 - x)).abs() < 1e-15);
        assert!((r.cond2_lhs - 1.49e-3).abs() < 1e-5);
        assert!((r.cond2_rhs - 0.7213).abs() < 1e-4);
        assert!(r.passed());
        assert!(bz_condition_check_finite(4, 3, 1.0f64, BzParams::default()).is_err());
        let q2 = bz_condition_check_finite(4, 2, 10.0f64, BzParams::default()).unwrap();
        assert!((q2.ratio - 25.0 * (-9.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn thresholds_self_consistent() {
        let pr = BzParams::default();
        for d in [4usize, 8] {
            for p in [1.0f64, 2.0] {
                let e0 = eta_threshold(d, p, pr).unwrap();
                assert!(e0 >= 1.0 + 2f64.ln() - 1e-6);
                assert!(bz_condition_check_psos(d, p, e0 + 0.01, pr).unwrap().passed());
                assert!(!bz_condition_check_psos(d, p, e0 - 0.1, pr).unwrap().passed());
            }
            let z0 = zeta_threshold(d, 3, pr).unwrap();
            assert!(bz_condition_check_finite(d, 3, z0 + 0.01, pr).unwrap().passed());
            assert!(!bz_condition_check_finite(d, 3, z0 - 0.1, pr).unwrap().passed());
        }
    }

    #[test]
    fn tail_and_correlation() {
        let b = cluster_tail_bound(1e-4f64, 1.0, 0.5).unwrap();
        assert!((b - 2.0 * 2f64.ln() * (1.0f64 - 9.210340371976184).exp()).abs() < 1e-12);
        let x = correlation_ratio_psos(4, 1.0f64, 10.0, BzParams::default()).unwrap();
        let near = correlation_bound(4, x, 0.5, 1, 1).unwrap().phi;
        let far = correlation_bound(4, x, 0.5, 1, 4).unwrap().phi;
        assert!(far < near && far > 0.0);
        assert!(correlation_bound(4, 1.5f64, 0.5, 1, 2).unwrap().phi.is_infinite());
    }
}
