//! Polymer systems built from enumerated contours, their cluster expansion,
//! and the exhaustive compatible-family sum used to check it.

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::series::{deviation_sum, l_delta};
use crate::contour::{enumerate_contours, contour_excess_energy, LabelSpace, LabelledContour, CONTOUR_BUDGET};
use crate::error::{invalid, Error, Result};
use crate::exact::TreeRecursion;
use crate::ground::GroundState;
use crate::model::{BoundaryMode, Interaction, ModelSpec, Spin};
use crate::scalar::Real;
use crate::tree::TreeBall;

/// Cap on nodes visited by cluster and family enumerations.
pub const CLUSTER_BUDGET: u64 = 200_000_000;
/// Largest cluster order the Ursell coefficients are computed for.
pub const MAX_ORDER: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polymer<F> {
    pub contour: LabelledContour,
    pub rho: F,
    /// `sum_v |s_v|^p` for p-SOS, `|gamma|` for finite spins
    pub norm: F,
}

#[derive(Clone, Debug)]
pub struct PolymerSystem<F> {
    degree: usize,
    n_interior: usize,
    polymers: Vec<Polymer<F>>,
    /// incompatibility bitsets, every polymer incompatible with itself
    incompat: Vec<Vec<u64>>,
    l_max: usize,
    k: Option<Spin>,
    /// `-beta H(w0)`
    ground_log_weight: F,
}

fn set_bit(bits: &mut [u64], i: usize) {
    bits[i / 64] |= 1 << (i % 64);
}

fn get_bit(bits: &[u64], i: usize) -> bool {
    bits[i / 64] >> (i % 64) & 1 == 1
}

impl<F: Real> PolymerSystem<F> {
    /// Every contour of at most `l_max` sites over `gs`, heights within `K` of it.
    pub fn build(model: &ModelSpec<F>, ball: &TreeBall, gs: &GroundState, l_max: usize, k: Option<Spin>) -> Result<Self> {
        gs.check_ball(ball)?;
        let space = LabelSpace::for_model(&model.interaction, k)?;
        let anchors: Vec<usize> = ball.interior().collect();
        let mut contours = Vec::new();
        enumerate_contours(ball, gs.config(), &anchors, l_max, space, CONTOUR_BUDGET, |c| contours.push(c.clone()))?;
        let w0 = gs.values();
        let table = model.pair_table();
        let mut polymers = Vec::with_capacity(contours.len());
        for c in contours {
            let de = contour_excess_energy(model, ball, gs.config(), &c)?;
            let norm = match &model.interaction {
                Interaction::Psos { .. } => c.support.iter().zip(&c.labels).map(|(&v, &a)| table.power(a - w0[v])).sum(),
                Interaction::FiniteSpin { .. } => F::from_usize_lossy(c.len()),
            };
            polymers.push(Polymer { contour: c, rho: (-model.beta * de).exp(), norm });
        }
        let h0 = model.hamiltonian_with(ball, gs.config(), BoundaryMode::Fixed)?;
        let mut sys = Self::from_polymers(ball, polymers)?;
        sys.l_max = l_max;
        sys.k = k;
        sys.ground_log_weight = -model.beta * h0;
        Ok(sys)
    }

    /// Compatibility: supports at tree distance at least two.
    pub fn from_polymers(ball: &TreeBall, polymers: Vec<Polymer<F>>) -> Result<Self> {
        let n = ball.n_interior();
        let np = polymers.len();
        let words = np.div_ceil(64).max(1);
        let mut hood: Vec<Vec<bool>> = Vec::with_capacity(np);
        for p in &polymers {
            if p.contour.support.iter().any(|&v| !ball.is_interior(v)) {
                return invalid("polymer support leaves the interior");
            }
            let mut h = vec![false; n];
            for &v in &p.contour.support {
                h[v] = true;
                for w in ball.interior_neighbors(v) {
                    h[*w] = true;
                }
            }
            hood.push(h);
        }
        let incompat: Vec<Vec<u64>> = (0..np)
            .into_par_iter()
            .map(|i| {
                let mut row = vec![0u64; words];
                for (j, p) in polymers.iter().enumerate() {
                    if p.contour.support.iter().any(|&v| hood[i][v]) {
                        set_bit(&mut row, j);
                    }
                }
                row
            })
            .collect();
        Ok(PolymerSystem {
            degree: ball.degree(),
            n_interior: n,
            polymers,
            incompat,
            l_max: n,
            k: None,
            ground_log_weight: F::zero(),
        })
    }

    pub fn polymers(&self) -> &[Polymer<F>] {
        &self.polymers
    }

    pub fn len(&self) -> usize {
        self.polymers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.polymers.is_empty()
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn ground_log_weight(&self) -> F {
        self.ground_log_weight
    }

    /// Whether every connected support of the interior is present, so that the
    /// polymer partition function equals `Z / e^{-beta H(w0)}` on the window.
    pub fn is_complete(&self) -> bool {
        self.l_max >= self.n_interior
    }

    pub fn compatible(&self, i: usize, j: usize) -> bool {
        !get_bit(&self.incompat[i], j)
    }

    /// Largest `eta` with `rho <= exp(-eta ||gamma||)` for every polymer.
    pub fn activity_rate(&self) -> F {
        self.polymers.iter().map(|p| -p.rho.ln() / p.norm).fold(F::infinity(), F::min)
    }

    /// Polymers breaking `rho <= exp(-eta ||gamma||)` beyond relative tolerance.
    pub fn activity_violations(&self, eta: F, tol: F) -> usize {
        self.polymers.iter().filter(|p| p.rho > (-eta * p.norm).exp() * (F::one() + tol)).count()
    }

    /// `sum over compatible families of prod rho`, by depth-first search.
    pub fn partition_exhaustive(&self) -> Result<F> {
        Ok(F::one() + self.nonempty_families()?)
    }

    /// `log` of [`Self::partition_exhaustive`], accurate when the sum is close to one.
    pub fn log_partition_exhaustive(&self) -> Result<F> {
        Ok(self.nonempty_families()?.ln_1p())
    }

    fn nonempty_families(&self) -> Result<F> {
        let words = self.incompat.first().map_or(1, |r| r.len());
        let visited = AtomicU64::new(0);
        let all = vec![u64::MAX; words];
        self.families_from(0, &all, &visited)
    }

    fn families_from(&self, start: usize, allowed: &[u64], visited: &AtomicU64) -> Result<F> {
        let mut sum = F::zero();
        for i in start..self.polymers.len() {
            if !get_bit(allowed, i) {
                continue;
            }
            if visited.fetch_add(1, Ordering::Relaxed) > CLUSTER_BUDGET {
                return Err(Error::BudgetExceeded { what: "compatible families".into(), budget: CLUSTER_BUDGET });
            }
            let next: Vec<u64> = allowed.iter().zip(&self.incompat[i]).map(|(a, b)| a & !b).collect();
            sum = sum + self.polymers[i].rho * (F::one() + self.families_from(i + 1, &next, visited)?);
        }
        Ok(sum)
    }

    /// `sum_{|I| = m} w_I` for `m = 1..=order`, clusters counted with multiplicity.
    pub fn cluster_sums(&self, order: usize) -> Result<Vec<F>> {
        if order == 0 || order > MAX_ORDER {
            return invalid(format!("cluster order must lie in 1..={MAX_ORDER}, got {order}"));
        }
        let visited = AtomicU64::new(0);
        let parts: Vec<Result<Vec<F>>> = (0..self.polymers.len())
            .into_par_iter()
            .map(|i| {
                let cand = self.reachable(i, order - 1);
                let mut sums = vec![F::zero(); order];
                let mut seq = vec![i];
                self.grow(&cand, 0, &mut seq, order, &mut sums, &visited)?;
                Ok(sums)
            })
            .collect();
        let mut out = vec![F::zero(); order];
        for p in parts {
            for (o, s) in out.iter_mut().zip(p?) {
                *o = *o + s;
            }
        }
        Ok(out)
    }

    /// Polymers `j >= i` within `depth` incompatibility steps of `i`, sorted.
    fn reachable(&self, i: usize, depth: usize) -> Vec<usize> {
        let np = self.polymers.len();
        let mut dist = vec![usize::MAX; np];
        dist[i] = 0;
        let mut frontier = vec![i];
        for step in 1..=depth {
            let mut next = Vec::new();
            for &x in &frontier {
                for j in 0..np {
                    if dist[j] == usize::MAX && get_bit(&self.incompat[x], j) {
                        dist[j] = step;
                        next.push(j);
                    }
                }
            }
            frontier = next;
        }
        (i..np).filter(|&j| dist[j] != usize::MAX).collect()
    }

    fn grow(&self, cand: &[usize], from: usize, seq: &mut Vec<usize>, order: usize, sums: &mut [F], visited: &AtomicU64) -> Result<()> {
        if visited.fetch_add(1, Ordering::Relaxed) > CLUSTER_BUDGET {
            return Err(Error::BudgetExceeded { what: "cluster enumeration".into(), budget: CLUSTER_BUDGET });
        }
        if let Some(w) = self.cluster_weight(seq) {
            sums[seq.len() - 1] = sums[seq.len() - 1] + w;
        }
        if seq.len() == order {
            return Ok(());
        }
        for pos in from..cand.len() {
            seq.push(cand[pos]);
            self.grow(cand, pos, seq, order, sums, visited)?;
            seq.pop();
        }
        Ok(())
    }

    /// `w_I` for a non-decreasing index sequence, `None` when disconnected.
    fn cluster_weight(&self, seq: &[usize]) -> Option<F> {
        let k = seq.len();
        let mut adj = vec![0u32; k];
        for a in 0..k {
            for b in 0..k {
                if a != b && get_bit(&self.incompat[seq[a]], seq[b]) {
                    adj[a] |= 1 << b;
                }
            }
        }
        let mut seen = 1u32;
        let mut stack = vec![0usize];
        while let Some(a) = stack.pop() {
            let mut nb = adj[a] & !seen;
            seen |= nb;
            while nb != 0 {
                stack.push(nb.trailing_zeros() as usize);
                nb &= nb - 1;
            }
        }
        if seen != (1u32 << k) - 1 {
            return None;
        }
        let mut w = F::from_i64_lossy(ursell_coefficient(&adj));
        let mut run = 1;
        for a in 0..k {
            w = w * self.polymers[seq[a]].rho;
            if a > 0 && seq[a] == seq[a - 1] {
                run += 1;
                w = w / F::from_usize_lossy(run);
            } else {
                run = 1;
            }
        }
        Some(w)
    }

    /// `sum_{|I| <= order} w_I`.
    pub fn truncated_log_z(&self, order: usize) -> Result<F> {
        Ok(self.cluster_sums(order)?.into_iter().sum())
    }

    /// Weight of clusters with more than `order` polymers. Rescaling activities by
    /// `e^{t ||gamma||}`, `t = eta - eta0`, keeps the convergence conditions at
    /// `eta0`, and each such cluster has `||I|| > order`, so
    /// `sum_{|I| > n} |w_I| <= L(delta) e^{-t(n+1)} sum_theta rho e^{(t + A)||theta||}`.
    /// `None` when `eta <= eta0`.
    pub fn remainder_bound(&self, order: usize, eta: F, eta0: F, a: F, delta: F) -> Result<Option<F>> {
        if !(eta > eta0) {
            return Ok(None);
        }
        let t = eta - eta0;
        let ld = l_delta(delta)?;
        let s: F = self.polymers.iter().map(|p| p.rho * ((t + a) * p.norm).exp()).sum();
        Ok(Some(ld * (-t * F::from_usize_lossy(order + 1)).exp() * s))
    }
}

/// `sum over connected spanning subgraphs G of H of (-1)^{|E(G)|}` for a graph
/// on at most 16 vertices given by neighbour bitmasks.
pub fn ursell_coefficient(adj: &[u32]) -> i64 {
    let k = adj.len();
    assert!(k <= 16, "graph too large");
    if k == 0 {
        return 0;
    }
    let full = (1usize << k) - 1;
    let indep: Vec<bool> = (0..=full)
        .map(|s| (0..k).all(|a| s >> a & 1 == 0 || adj[a] as usize & s == 0))
        .collect();
    // f(S) = [S independent] = sum over set partitions of the connected parts
    let mut c = vec![0i64; full + 1];
    for s in 1..=full {
        let low = s & s.wrapping_neg();
        let rest = s ^ low;
        let mut acc = indep[s] as i64;
        let mut r = rest;
        loop {
            let t = low | r;
            if t != s && indep[s ^ t] {
                acc -= c[t];
            }
            if r == 0 {
                break;
            }
            r = (r - 1) & rest;
        }
        c[s] = acc;
    }
    c[full]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeierlsRow<F> {
    pub deviation: Spin,
    pub exact: F,
    /// `sum rho` over enumerated contours through `v` with that label
    pub enumerated: F,
    pub tail: F,
    pub bound: F,
    pub ok: bool,
}

/// Exact `mu(sigma_v = w0_v + s)` against the contour sum through `v`, closed
/// with the entropy tail `e^{-eta |s|^p} x^{l_max} / (1 - x)`. `eta` must be a
/// valid activity rate (`eta <= beta c`).
pub fn peierls_bound_vs_exact<F: Real>(
    model: &ModelSpec<F>,
    ball: &TreeBall,
    gs: &GroundState,
    v: usize,
    k: Option<Spin>,
    l_max: usize,
    eta: F,
) -> Result<Vec<PeierlsRow<F>>> {
    let rec = TreeRecursion::around(model, ball, gs, k)?;
    let space = LabelSpace::for_model(&model.interaction, k)?;
    let w0v = gs.values()[v];
    let d1 = F::from_usize_lossy((ball.degree() + 1) * (ball.degree() + 1));
    let table = model.pair_table();
    let (x, site): (F, Box<dyn Fn(Spin) -> F>) = match &model.interaction {
        Interaction::Psos { p } => (d1 * deviation_sum(*p, eta)?.upper(), Box::new(move |s: Spin| (-eta * table.power(s)).exp())),
        Interaction::FiniteSpin { q, .. } => (d1 * F::from_usize_lossy(q - 1) * (-eta).exp(), Box::new(move |_| (-eta).exp())),
    };
    let labels = space.labels(w0v);
    let mut sums = vec![F::zero(); labels.len()];
    enumerate_contours(ball, gs.config(), &[v], l_max, space, CONTOUR_BUDGET, |c| {
        let a = c.label_at(v).expect("anchored contour");
        let i = labels.iter().position(|&b| b == a).expect("label in space");
        let de = contour_excess_energy(model, ball, gs.config(), c).expect("validated contour");
        sums[i] = sums[i] + (-model.beta * de).exp();
    })?;
    let geo = if x < F::one() { x.powi(l_max as i32) / (F::one() - x) } else { F::infinity() };
    Ok(labels
        .iter()
        .zip(sums)
        .map(|(&a, enumerated)| {
            let deviation = a - w0v;
            let exact = rec.prob(v, a);
            let tail = site(deviation) * geo;
            let bound = enumerated + tail;
            PeierlsRow { deviation, exact, enumerated, tail, bound, ok: exact <= bound * (F::one() + F::lit(1e-12)) }
        })
        .collect())
}
