//! Deviation series `sum_s exp(-|s|^p eta)` with rigorous tail bounds, and the
//! constants built from them.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::Spin;
use crate::scalar::Real;

const MAX_TERMS: u64 = 50_000_000;

/// A partial sum together with an upper bound on the neglected tail.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesValue<F> {
    pub partial: F,
    pub tail_bound: F,
    pub terms: u64,
}

impl<F: Real> SeriesValue<F> {
    pub fn upper(&self) -> F {
        self.partial + self.tail_bound
    }
}

/// `-log(1 - delta) / delta`
pub fn l_delta<F: Real>(delta: F) -> Result<F> {
    if !(delta > F::zero() && delta < F::one()) {
        return invalid(format!("delta must lie in (0, 1), got {delta}"));
    }
    Ok(-(F::one() - delta).ln() / delta)
}

/// Bound on `sum_{s > n} exp(-s^p eta)`.
fn tail_after<F: Real>(p: F, eta: F, n: u64) -> F {
    if p >= F::one() {
        // s^p >= s for s >= 1
        (-(F::from_u64(n + 1).unwrap()) * eta).exp() / (F::one() - (-eta).exp())
    } else {
        // integral bound with the upper incomplete gamma function, a = 1/p > 1
        let a = F::one() / p;
        let nf = F::from_u64(n).unwrap();
        let z = nf.powf(p) * eta;
        if z <= a - F::one() || n == 0 {
            return F::infinity();
        }
        let gamma_upper = z.powf(a - F::one()) * (-z).exp() / (F::one() - (a - F::one()) / z);
        a * eta.powf(-a) * gamma_upper
    }
}

/// `sum_{s >= from} exp(-s^p eta)` for `from >= 1`, summed until terms are
/// negligible and closed with an analytic tail bound.
pub fn one_sided_sum<F: Real>(p: F, eta: F, from: u64) -> Result<SeriesValue<F>> {
    if !(p > F::zero() && p.is_finite()) {
        return invalid(format!("exponent must be positive, got {p}"));
    }
    if !(eta > F::zero()) {
        return invalid(format!("series needs a positive rate, got {eta}"));
    }
    let from = from.max(1);
    let tiny = F::epsilon() * F::lit(1e-4);
    let mut partial = F::zero();
    let mut s = from;
    loop {
        let term = (-(F::from_u64(s).unwrap().powf(p)) * eta).exp();
        partial = partial + term;
        let tail = tail_after(p, eta, s);
        if tail.is_finite() && (tail <= tiny * partial || tail < F::min_positive_value().sqrt() * tiny) {
            return Ok(SeriesValue { partial, tail_bound: tail, terms: s - from + 1 });
        }
        if term == F::zero() && tail.is_finite() {
            return Ok(SeriesValue { partial, tail_bound: tail, terms: s - from + 1 });
        }
        s += 1;
        if s - from > MAX_TERMS {
            return Err(Error::Divergent(format!("deviation series at p={p}, eta={eta} needs more than {MAX_TERMS} terms")));
        }
    }
}

/// `sum_{s != 0} exp(-|s|^p eta)`
pub fn deviation_sum<F: Real>(p: F, eta: F) -> Result<SeriesValue<F>> {
    let one = one_sided_sum(p, eta, 1)?;
    let two = F::lit(2.0);
    Ok(SeriesValue { partial: two * one.partial, tail_bound: two * one.tail_bound, terms: one.terms })
}

fn branching<F: Real>(degree: usize) -> F {
    let d1 = F::from_usize_lossy(degree + 1);
    d1 * d1
}

/// `C(eta, d, p) = 1 / (1 - (d+1)^2 sum_{s != 0} exp(-|s|^p eta))`
pub fn peierls_constant<F: Real>(degree: usize, p: F, eta: F) -> Result<F> {
    let x = branching::<F>(degree) * deviation_sum(p, eta)?.upper();
    if x >= F::one() {
        return Err(Error::Divergent(format!("Peierls series ratio {x} >= 1 at d={degree}, p={p}, eta={eta}")));
    }
    Ok(F::one() / (F::one() - x))
}

/// Finite-spin analogue `1 / (1 - (d+1)^2 (q-1) exp(-zeta))`; a single wrong
/// label at a site then has probability at most `exp(-zeta)` times this.
pub fn peierls_constant_finite<F: Real>(degree: usize, q: usize, zeta: F) -> Result<F> {
    if q < 2 {
        return invalid("need q >= 2");
    }
    let x = branching::<F>(degree) * F::from_usize_lossy(q - 1) * (-zeta).exp();
    if x >= F::one() {
        return Err(Error::Divergent(format!("Peierls series ratio {x} >= 1 at d={degree}, q={q}, zeta={zeta}")));
    }
    Ok(F::one() / (F::one() - x))
}

/// `2 C(eta,d,p) sum_{s >= n} exp(-s^p eta)`, the bound on `P(|sigma_v - w0_v| >= n)`.
pub fn tightness_tail<F: Real>(degree: usize, p: F, eta: F, n: u64) -> Result<F> {
    let c = peierls_constant(degree, p, eta)?;
    Ok(F::lit(2.0) * c * one_sided_sum(p, eta, n)?.upper())
}

/// Smallest height cutoff `K` with `2 C sum_{s > K} exp(-s^p eta) < target`.
pub fn default_truncation<F: Real>(degree: usize, p: F, eta: F, target: F) -> Result<Spin> {
    for k in 1..=10_000u64 {
        if tightness_tail(degree, p, eta, k + 1)? < target {
            return Ok(k as Spin);
        }
    }
    invalid(format!("no truncation below 10000 reaches {target} at eta={eta}"))
}

/// Contour-size generating bound `L(t) = 1 + e^t / (1 - (d+1)^2 S e^t)` with
/// `S = sum_{r != 0} exp(-|r|^p eta)` (or `(q-1) exp(-zeta)` for finite spins).
pub fn contour_mgf_bound<F: Real>(degree: usize, s: F, t: F) -> Result<F> {
    let ratio = branching::<F>(degree) * s * t.exp();
    if ratio >= F::one() {
        return Err(Error::Divergent(format!("contour-size series ratio {ratio} >= 1 at t={t}")));
    }
    Ok(F::one() + t.exp() / (F::one() - ratio))
}

/// The `t0` minimising `L(t) exp(-n t)` over the admissible range, found by
/// golden-section search on the log.
pub fn optimal_t0<F: Real>(degree: usize, s: F, n: usize) -> Result<(F, F)> {
    let t_max = -(branching::<F>(degree) * s).ln();
    if !(t_max > F::zero()) {
        return Err(Error::Divergent("no admissible t0 > 0".into()));
    }
    let nf = F::from_usize_lossy(n);
    let f = |t: F| contour_mgf_bound(degree, s, t).map(|l| l.ln() - nf * t).unwrap_or(F::infinity());
    let (mut lo, mut hi) = (F::zero(), t_max * (F::one() - F::lit(1e-12)));
    let g = F::lit(0.618_033_988_749_894_9);
    let mut a = hi - g * (hi - lo);
    let mut b = lo + g * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..200 {
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - g * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + g * (hi - lo);
            fb = f(b);
        }
    }
    let t = (lo + hi) / F::lit(2.0);
    Ok((t, contour_mgf_bound(degree, s, t)?))
}
