//! Exact finite-volume Gibbs computations by leaf-to-root message passing in
//! the log domain: partition functions, site and window marginals, clamped
//! probabilities, and the checks built on them.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::ground::GroundState;
use crate::model::{Interaction, ModelSpec, PairTable, Spin, SpinConfig};
use crate::polymer::series::{one_sided_sum, peierls_constant, peierls_constant_finite};
use crate::scalar::{log_sum_exp, Real};
use crate::tree::TreeBall;

/// Largest number of patterns a window or boundary enumeration may visit.
pub const PATTERN_BUDGET: u64 = 5_000_000;

const PARALLEL_LAYER: usize = 2048;

/// Per-vertex alphabets: `[c_v - K, c_v + K]` for p-SOS, all colours otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationWindow {
    pub k: Option<Spin>,
    lo: Vec<Spin>,
    size: Vec<usize>,
    center: Vec<Spin>,
}

impl TruncationWindow {
    pub fn around<F: Real>(interaction: &Interaction<F>, ball: &TreeBall, center: &SpinConfig, k: Option<Spin>) -> Result<Self> {
        if center.values.len() != ball.n_total() {
            return Err(Error::ConfigSize { expected: ball.n_total(), got: center.values.len() });
        }
        let n = ball.n_interior();
        let c = center.values[..n].to_vec();
        match interaction {
            Interaction::Psos { .. } => {
                let k = match k {
                    Some(k) if k >= 1 => k,
                    Some(k) => return invalid(format!("truncation K must be at least 1, got {k}")),
                    None => return invalid("p-SOS needs a truncation K"),
                };
                Ok(TruncationWindow {
                    k: Some(k),
                    lo: c.iter().map(|x| x - k).collect(),
                    size: vec![2 * k as usize + 1; n],
                    center: c,
                })
            }
            Interaction::FiniteSpin { q, .. } => {
                center.check(ball, interaction)?;
                Ok(TruncationWindow { k: None, lo: vec![0; n], size: vec![*q; n], center: c })
            }
        }
    }

    pub fn lo(&self, v: usize) -> Spin {
        self.lo[v]
    }

    pub fn size(&self, v: usize) -> usize {
        self.size[v]
    }

    pub fn center(&self, v: usize) -> Spin {
        self.center[v]
    }

    pub fn spin(&self, v: usize, i: usize) -> Spin {
        self.lo[v] + i as Spin
    }

    pub fn index(&self, v: usize, a: Spin) -> Option<usize> {
        let i = a - self.lo[v];
        (i >= 0 && (i as usize) < self.size[v]).then_some(i as usize)
    }
}

/// Messages of one finite-volume Gibbs measure with a fixed shell boundary.
#[derive(Clone, Debug)]
pub struct TreeRecursion<'a, F> {
    ball: &'a TreeBall,
    model: &'a ModelSpec<F>,
    window: TruncationWindow,
    boundary: Vec<Spin>,
    table: PairTable<F>,
    /// `-beta Psi_v(a)` plus the fixed shell-edge terms
    base: Vec<Vec<F>>,
    /// subtree log-weights with `sigma_v = a`
    up: Vec<Vec<F>>,
    /// child's contribution to its parent's message, indexed by the parent's spin
    to_parent: Vec<Vec<F>>,
    /// log-weight of everything outside the subtree of `v`, including the edge to the parent
    outside: Vec<Vec<F>>,
    log_z: F,
}

fn lse_into<F: Real>(buf: &[F]) -> F {
    log_sum_exp(buf)
}

impl<'a, F: Real> TreeRecursion<'a, F> {
    pub fn new(model: &'a ModelSpec<F>, ball: &'a TreeBall, boundary: &SpinConfig, window: TruncationWindow) -> Result<Self> {
        if boundary.values.len() != ball.n_total() {
            return Err(Error::ConfigSize { expected: ball.n_total(), got: boundary.values.len() });
        }
        for v in ball.shell() {
            model.interaction.check_spin(v, boundary.values[v])?;
        }
        let n = ball.n_interior();
        if window.lo.len() != n {
            return invalid("truncation window does not match the ball");
        }
        let table = model.pair_table();
        let beta = model.beta;
        let mut base = Vec::with_capacity(n);
        for v in 0..n {
            let mut row = Vec::with_capacity(window.size(v));
            for i in 0..window.size(v) {
                let a = window.spin(v, i);
                let mut e = model.site_energy(v, a)?;
                for &c in ball.children(v) {
                    if !ball.is_interior(c) {
                        e = e + table.pair(a, boundary.values[c]);
                    }
                }
                row.push(-beta * e);
            }
            base.push(row);
        }
        let mut rec = TreeRecursion {
            ball,
            model,
            window,
            boundary: boundary.values.clone(),
            table,
            base,
            up: vec![Vec::new(); n],
            to_parent: vec![Vec::new(); n],
            outside: vec![Vec::new(); n],
            log_z: F::zero(),
        };
        rec.upward();
        rec.downward();
        Ok(rec)
    }

    /// Boundary and window both centred on the ground state.
    pub fn around(model: &'a ModelSpec<F>, ball: &'a TreeBall, gs: &GroundState, k: Option<Spin>) -> Result<Self> {
        gs.check_ball(ball)?;
        let window = TruncationWindow::around(&model.interaction, ball, gs.config(), k)?;
        Self::new(model, ball, gs.config(), window)
    }

    pub fn ball(&self) -> &TreeBall {
        self.ball
    }

    pub fn model(&self) -> &ModelSpec<F> {
        self.model
    }

    pub fn window(&self) -> &TruncationWindow {
        &self.window
    }

    fn kern(&self, a: Spin, b: Spin) -> F {
        -self.model.beta * self.table.pair(a, b)
    }

    /// `log sum_b exp(K(a, b) + msg(b))` for every parent spin `a`.
    fn lift(&self, parent: usize, child: usize, msg: &[F]) -> Vec<F> {
        let w = &self.window;
        let mut buf = vec![F::zero(); w.size(child)];
        (0..w.size(parent))
            .map(|i| {
                let a = w.spin(parent, i);
                for (j, slot) in buf.iter_mut().enumerate() {
                    *slot = self.kern(a, w.spin(child, j)) + msg[j];
                }
                lse_into(&buf)
            })
            .collect()
    }

    fn combine_up(&self, v: usize, child_msgs: impl Fn(usize) -> Option<Vec<F>>) -> Vec<F> {
        let mut m = self.base[v].clone();
        for &c in self.ball.children(v) {
            if !self.ball.is_interior(c) {
                continue;
            }
            let contrib = child_msgs(c);
            let contrib = contrib.as_deref().unwrap_or(&self.to_parent[c]);
            for (x, &y) in m.iter_mut().zip(contrib) {
                *x = *x + y;
            }
        }
        m
    }

    fn upward(&mut self) {
        let ball = self.ball;
        for k in (0..=ball.radius()).rev() {
            let layer: Vec<usize> = ball.layer(k).collect();
            let compute = |v: usize| {
                let m = self.combine_up(v, |_| None);
                let tp = match ball.parent(v) {
                    Some(p) => self.lift(p, v, &m),
                    None => Vec::new(),
                };
                (m, tp)
            };
            let res: Vec<(Vec<F>, Vec<F>)> = if layer.len() >= PARALLEL_LAYER {
                layer.par_iter().map(|&v| compute(v)).collect()
            } else {
                layer.iter().map(|&v| compute(v)).collect()
            };
            for (v, (m, tp)) in layer.into_iter().zip(res) {
                self.up[v] = m;
                self.to_parent[v] = tp;
            }
        }
        self.log_z = log_sum_exp(&self.up[0]);
    }

    fn downward(&mut self) {
        let ball = self.ball;
        self.outside[0] = vec![F::zero(); self.window.size(0)];
        for k in 1..=ball.radius() {
            let layer: Vec<usize> = ball.layer(k).collect();
            let compute = |c: usize| {
                let v = ball.parent(c).expect("non-root");
                // everything at v except c's own subtree
                let rest: Vec<F> = (0..self.window.size(v))
                    .map(|i| self.outside[v][i] + self.up[v][i] - self.to_parent[c][i])
                    .collect();
                let mut buf = vec![F::zero(); self.window.size(v)];
                (0..self.window.size(c))
                    .map(|j| {
                        let b = self.window.spin(c, j);
                        for (i, slot) in buf.iter_mut().enumerate() {
                            *slot = self.kern(self.window.spin(v, i), b) + rest[i];
                        }
                        lse_into(&buf)
                    })
                    .collect::<Vec<F>>()
            };
            let res: Vec<Vec<F>> = if layer.len() >= PARALLEL_LAYER {
                layer.par_iter().map(|&c| compute(c)).collect()
            } else {
                layer.iter().map(|&c| compute(c)).collect()
            };
            for (c, o) in layer.into_iter().zip(res) {
                self.outside[c] = o;
            }
        }
    }

    pub fn log_partition(&self) -> F {
        self.log_z
    }

    /// `log P(sigma_v = a for every clamp)`; `-inf` when a clamp leaves the window
    /// or two clamps disagree.
    pub fn log_prob_clamped(&self, clamps: &[(usize, Spin)]) -> Result<F> {
        let ball = self.ball;
        let mut fixed: BTreeMap<usize, usize> = BTreeMap::new();
        for &(v, a) in clamps {
            if !ball.is_interior(v) {
                return invalid(format!("clamped vertex {v} is not interior"));
            }
            let Some(i) = self.window.index(v, a) else {
                return Ok(F::neg_infinity());
            };
            if let Some(&j) = fixed.get(&v) {
                if j != i {
                    return Ok(F::neg_infinity());
                }
            }
            fixed.insert(v, i);
        }
        if fixed.is_empty() {
            return Ok(F::zero());
        }
        let mut dirty: BTreeMap<usize, Vec<F>> = BTreeMap::new();
        let mut marks = Vec::new();
        for &v in fixed.keys() {
            let mut x = Some(v);
            while let Some(y) = x {
                if dirty.contains_key(&y) {
                    break;
                }
                dirty.insert(y, Vec::new());
                marks.push(y);
                x = ball.parent(y);
            }
        }
        marks.sort_unstable_by(|a, b| b.cmp(a));
        for v in marks {
            let mut m = self.base[v].clone();
            for &c in ball.children(v) {
                if !ball.is_interior(c) {
                    continue;
                }
                match dirty.get(&c) {
                    Some(mc) if !mc.is_empty() => {
                        let l = self.lift(v, c, mc);
                        for (x, y) in m.iter_mut().zip(l) {
                            *x = *x + y;
                        }
                    }
                    _ => {
                        for (x, &y) in m.iter_mut().zip(&self.to_parent[c]) {
                            *x = *x + y;
                        }
                    }
                }
            }
            if let Some(&i) = fixed.get(&v) {
                for (j, x) in m.iter_mut().enumerate() {
                    if j != i {
                        *x = F::neg_infinity();
                    }
                }
            }
            dirty.insert(v, m);
        }
        Ok(log_sum_exp(&dirty[&0]) - self.log_z)
    }

    /// Log site marginal over the window of `v`.
    pub fn log_site_marginal(&self, v: usize) -> Vec<F> {
        (0..self.window.size(v)).map(|i| self.up[v][i] + self.outside[v][i] - self.log_z).collect()
    }

    pub fn site_marginal(&self, v: usize) -> Vec<F> {
        self.log_site_marginal(v).into_iter().map(F::exp).collect()
    }

    /// `P(sigma_v = a)`, zero outside the window.
    pub fn prob(&self, v: usize, a: Spin) -> F {
        match self.window.index(v, a) {
            Some(i) => (self.up[v][i] + self.outside[v][i] - self.log_z).exp(),
            None => F::zero(),
        }
    }

    /// `P(sigma_v != a)` summed from the other entries, accurate when it is tiny.
    pub fn prob_not(&self, v: usize, a: Spin) -> F {
        let idx = self.window.index(v, a);
        self.log_site_marginal(v)
            .into_iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != idx)
            .map(|(_, x)| x.exp())
            .sum()
    }

    /// Log joint table of the spins at the two ends of a tree edge, `parent x child`.
    fn log_edge_joint(&self, parent: usize, child: usize) -> Vec<Vec<F>> {
        let w = &self.window;
        (0..w.size(parent))
            .map(|i| {
                let a = w.spin(parent, i);
                let rest = self.outside[parent][i] + self.up[parent][i] - self.to_parent[child][i];
                (0..w.size(child))
                    .map(|j| rest + self.kern(a, w.spin(child, j)) + self.up[child][j] - self.log_z)
                    .collect()
            })
            .collect()
    }

    /// `P(sigma_y = b | sigma_x = a) - P(sigma_y = b)` for neighbours `x`, `y`,
    /// rows indexed by `x`. The column of the most likely `b` is filled in from
    /// the zero row sums, so rows where both terms are close to one stay accurate.
    fn centred_transition(&self, x: usize, y: usize) -> Vec<Vec<F>> {
        let (joint, x_is_parent) = if self.ball.parent(y) == Some(x) {
            (self.log_edge_joint(x, y), true)
        } else {
            (self.log_edge_joint(y, x), false)
        };
        let lx = self.log_site_marginal(x);
        let py = self.site_marginal(y);
        let star = (0..py.len()).fold(0, |m, j| if py[j] > py[m] { j } else { m });
        let (nx, ny) = (self.window.size(x), self.window.size(y));
        (0..nx)
            .map(|i| {
                let mut row: Vec<F> = (0..ny)
                    .map(|j| {
                        let lj = if x_is_parent { joint[i][j] } else { joint[j][i] };
                        (lj - lx[i]).exp() - py[j]
                    })
                    .collect();
                row[star] = F::zero();
                row[star] = -row.iter().copied().sum::<F>();
                row
            })
            .collect()
    }

    /// `Cov(1{sigma_u = a}, 1{sigma_w = b})` by transfer along the tree path,
    /// propagating a centred indicator so tiny covariances keep their precision.
    pub fn singleton_covariance(&self, u: usize, a: Spin, w: usize, b: Spin) -> Result<F> {
        if !self.ball.is_interior(u) || !self.ball.is_interior(w) {
            return invalid("covariance endpoints must be interior");
        }
        let (Some(ia), Some(ib)) = (self.window.index(u, a), self.window.index(w, b)) else {
            return Ok(F::zero());
        };
        let pw_b = self.prob(w, b);
        let pw_not = self.prob_not(w, b);
        let mut h: Vec<F> = (0..self.window.size(w)).map(|j| if j == ib { pw_not } else { -pw_b }).collect();
        let path = self.ball.path(u, w);
        for k in (0..path.len() - 1).rev() {
            let d = self.centred_transition(path[k], path[k + 1]);
            h = d.iter().map(|row| row.iter().zip(&h).map(|(&p, &v)| p * v).sum()).collect();
        }
        Ok(self.prob(u, a) * h[ia])
    }

    fn patterns(&self, vertices: &[usize]) -> Result<Vec<Vec<usize>>> {
        let mut total: u64 = 1;
        for &v in vertices {
            total = total.saturating_mul(self.window.size(v) as u64);
        }
        if total > PATTERN_BUDGET {
            return Err(Error::BudgetExceeded { what: format!("{total} window patterns"), budget: PATTERN_BUDGET });
        }
        let mut out = vec![Vec::new()];
        for &v in vertices {
            let mut next = Vec::with_capacity(out.len() * self.window.size(v));
            for p in &out {
                for i in 0..self.window.size(v) {
                    let mut q = p.clone();
                    q.push(i);
                    next.push(q);
                }
            }
            out = next;
        }
        Ok(out)
    }

    /// Exact law of `sigma_W - c_W` for the window centre `c`.
    pub fn window_marginal(&self, w: &[usize]) -> Result<MarginalTable<F>> {
        for &v in w {
            if !self.ball.is_interior(v) {
                return invalid(format!("window vertex {v} is not interior"));
            }
        }
        let mut sorted = w.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != w.len() {
            return invalid("window vertices must be distinct");
        }
        let mut deviations = Vec::new();
        let mut probabilities = Vec::new();
        if w.len() == 1 {
            let v = w[0];
            for (i, p) in self.site_marginal(v).into_iter().enumerate() {
                deviations.push(vec![self.window.spin(v, i) - self.window.center(v)]);
                probabilities.push(p);
            }
        } else {
            for pat in self.patterns(w)? {
                let clamps: Vec<(usize, Spin)> = w.iter().zip(&pat).map(|(&v, &i)| (v, self.window.spin(v, i))).collect();
                deviations.push(w.iter().zip(&pat).map(|(&v, &i)| self.window.spin(v, i) - self.window.center(v)).collect());
                probabilities.push(self.log_prob_clamped(&clamps)?.exp());
            }
        }
        Ok(MarginalTable::new(w.to_vec(), deviations, probabilities, Method::ExactRecursion, self.window.k))
    }

    /// `|P(A and B) - P(A) P(B)|` for events given as sets of deviation patterns
    /// on disjoint windows.
    pub fn event_covariance(&self, w: &[usize], a: &[Vec<Spin>], u: &[usize], b: &[Vec<Spin>]) -> Result<F> {
        if w.len() == 1 && u.len() == 1 && a.len() == 1 && b.len() == 1 {
            let (x, y) = (w[0], u[0]);
            return self.singleton_covariance(x, self.window.center(x) + a[0][0], y, self.window.center(y) + b[0][0]);
        }
        let mut joint_w = w.to_vec();
        joint_w.extend_from_slice(u);
        let pa = self.window_marginal(w)?.probability_of(a);
        let pb = self.window_marginal(u)?.probability_of(b);
        let joint = self.window_marginal(&joint_w)?;
        let mut pab = F::zero();
        for (dev, &p) in joint.deviations.iter().zip(&joint.probabilities) {
            let (x, y) = dev.split_at(w.len());
            if a.iter().any(|q| q == x) && b.iter().any(|q| q == y) {
                pab = pab + p;
            }
        }
        Ok(pab - pa * pb)
    }

    /// The shell spins this measure was built with.
    pub fn boundary(&self) -> &[Spin] {
        &self.boundary
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ExactRecursion,
    Enumeration,
    MonteCarlo,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowBound<F> {
    pub value: F,
    /// `true` when the bound is a lower bound on the probability
    pub lower: bool,
}

impl<F: Real> RowBound<F> {
    pub fn holds(&self, p: F, tol: F) -> bool {
        if self.lower {
            p >= self.value - tol
        } else {
            p <= self.value + tol
        }
    }
}

/// Distribution of `sigma_W - w0_W` on a window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalTable<F> {
    pub window: Vec<usize>,
    pub deviations: Vec<Vec<Spin>>,
    pub probabilities: Vec<F>,
    pub bounds: Vec<Option<RowBound<F>>>,
    pub method: Method,
    pub truncation: Option<Spin>,
    pub normalization: F,
    pub truncation_error_bound: Option<F>,
}

impl<F: Real> MarginalTable<F> {
    pub fn new(window: Vec<usize>, deviations: Vec<Vec<Spin>>, probabilities: Vec<F>, method: Method, truncation: Option<Spin>) -> Self {
        let normalization = probabilities.iter().copied().sum();
        let n = probabilities.len();
        MarginalTable {
            window,
            deviations,
            probabilities,
            bounds: vec![None; n],
            method,
            truncation,
            normalization,
            truncation_error_bound: None,
        }
    }

    pub fn probability_of(&self, patterns: &[Vec<Spin>]) -> F {
        self.deviations
            .iter()
            .zip(&self.probabilities)
            .filter(|(d, _)| patterns.contains(d))
            .map(|(_, &p)| p)
            .sum()
    }

    pub fn get(&self, pattern: &[Spin]) -> F {
        self.deviations.iter().position(|d| d == pattern).map_or(F::zero(), |i| self.probabilities[i])
    }

    pub fn failures(&self, tol: F) -> Vec<usize> {
        (0..self.probabilities.len())
            .filter(|&i| matches!(self.bounds[i], Some(b) if !b.holds(self.probabilities[i], tol)))
            .collect()
    }

    pub fn passes(&self, tol: F) -> bool {
        self.failures(tol).is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["deviation", "probability", "bound", "pass"])?;
        for i in 0..self.probabilities.len() {
            let dev = self.deviations[i].iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
            let (bound, pass) = match self.bounds[i] {
                Some(b) => {
                    let tag = if b.lower { ">=" } else { "<=" };
                    (format!("{tag}{:e}", b.value.to_f64_lossy()), b.holds(self.probabilities[i], F::zero()).to_string())
                }
                None => (String::new(), String::new()),
            };
            w.write_record([dev, format!("{:e}", self.probabilities[i].to_f64_lossy()), bound, pass])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Total-variation distance between two tables over the same window.
pub fn total_variation<F: Real>(a: &MarginalTable<F>, b: &MarginalTable<F>) -> F {
    let mut keys: BTreeMap<&[Spin], (F, F)> = BTreeMap::new();
    for (d, &p) in a.deviations.iter().zip(&a.probabilities) {
        keys.entry(d.as_slice()).or_insert((F::zero(), F::zero())).0 = p;
    }
    for (d, &p) in b.deviations.iter().zip(&b.probabilities) {
        keys.entry(d.as_slice()).or_insert((F::zero(), F::zero())).1 = p;
    }
    keys.values().map(|(x, y)| (*x - *y).abs()).sum::<F>() / F::lit(2.0)
}

/// Peierls constant appropriate to the family at rate `eta` (`zeta` for finite spins).
pub fn family_peierls_constant<F: Real>(model: &ModelSpec<F>, degree: usize, eta: F) -> Result<F> {
    match &model.interaction {
        Interaction::Psos { p } => peierls_constant(degree, *p, eta),
        Interaction::FiniteSpin { q, .. } => peierls_constant_finite(degree, *q, eta),
    }
}

/// Site law of `sigma_v - w0_v` with the Peierls bounds attached: wrong values
/// `k` get `C exp(-eta |k|^p)` from above, the correct value the complementary
/// lower bound. Finite spins use the per-colour analogue.
pub fn concentration_check<F: Real>(rec: &TreeRecursion<'_, F>, v: usize, eta: F) -> Result<MarginalTable<F>> {
    let model = rec.model();
    let d = rec.ball().degree();
    let c = family_peierls_constant(model, d, eta)?;
    let mut table = rec.window_marginal(&[v])?;
    let (zero_lower, per_k): (F, Box<dyn Fn(Spin) -> F>) = match &model.interaction {
        Interaction::Psos { p } => {
            let p = *p;
            let s1 = one_sided_sum(p, eta, 1)?.upper();
            (F::one() - F::lit(2.0) * c * s1, Box::new(move |k: Spin| c * (-eta * F::from_i64_lossy(k.abs()).powf(p)).exp()))
        }
        Interaction::FiniteSpin { q, .. } => {
            let single = c * (-eta).exp();
            (F::one() - F::from_usize_lossy(q - 1) * single, Box::new(move |_| single))
        }
    };
    for (i, dev) in table.deviations.iter().enumerate() {
        let k = dev[0];
        let b = if k == 0 { RowBound { value: zero_lower, lower: true } } else { RowBound { value: per_k(k), lower: false } };
        table.bounds[i] = Some(b);
    }
    if let (Interaction::Psos { p }, Some(k)) = (&model.interaction, rec.window().k) {
        table.truncation_error_bound = Some(F::lit(2.0) * c * one_sided_sum(*p, eta, k as u64 + 1)?.upper());
    }
    Ok(table)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilizationReport<F> {
    pub radii: Vec<usize>,
    pub tables: Vec<MarginalTable<F>>,
    /// distances between consecutive radii
    pub tv: Vec<F>,
    pub monotone_decay: bool,
}

/// Window marginals on growing balls and their successive TV distances.
/// `build` gives the ground state on each ball; indices of `w` must exist in all.
pub fn marginal_stabilization<F, B>(model: &ModelSpec<F>, degree: usize, radii: &[usize], w: &[usize], k: Option<Spin>, build: B) -> Result<StabilizationReport<F>>
where
    F: Real,
    B: Fn(&TreeBall) -> Result<GroundState>,
{
    if radii.windows(2).any(|p| p[1] < p[0]) {
        return invalid("radii must be non-decreasing");
    }
    let mut tables = Vec::new();
    for &r in radii {
        let ball = TreeBall::new(degree, r)?;
        let gs = build(&ball)?;
        let rec = TreeRecursion::around(model, &ball, &gs, k)?;
        tables.push(rec.window_marginal(w)?);
    }
    let tv: Vec<F> = tables.windows(2).map(|p| total_variation(&p[0], &p[1])).collect();
    let monotone_decay = tv.windows(2).all(|p| p[1] < p[0]);
    Ok(StabilizationReport { radii: radii.to_vec(), tables, tv, monotone_decay })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityReport<F> {
    pub vertex: usize,
    /// `mu^{w0}(sigma_v = w0_v)`
    pub p_own: F,
    /// `mu^{t0}(sigma_v = w0_v)`
    pub p_other: F,
    pub separation: F,
    /// `1 - 3 C S - C exp(-|t0_v - w0_v|^p eta)`
    pub bound: F,
    /// the sharper `1 - 2 C S - C exp(...)` from the two displayed estimates
    pub sharp_bound: F,
    pub passed: bool,
}

pub fn identifiability_check<F: Real>(
    model: &ModelSpec<F>,
    ball: &TreeBall,
    omega0: &GroundState,
    tau0: &GroundState,
    v: usize,
    k: Option<Spin>,
    eta: F,
) -> Result<IdentifiabilityReport<F>> {
    let (a, b) = (omega0.values()[v], tau0.values()[v]);
    if a == b {
        return invalid(format!("ground states agree at vertex {v}"));
    }
    let r1 = TreeRecursion::around(model, ball, omega0, k)?;
    let r2 = TreeRecursion::around(model, ball, tau0, k)?;
    let p_own = r1.prob(v, a);
    let p_other = r2.prob(v, a);
    let c = family_peierls_constant(model, ball.degree(), eta)?;
    let (s, far) = match &model.interaction {
        Interaction::Psos { p } => (one_sided_sum(*p, eta, 1)?.upper(), (-eta * F::from_i64_lossy((a - b).abs()).powf(*p)).exp()),
        Interaction::FiniteSpin { q, .. } => (F::from_usize_lossy(q - 1) * (-eta).exp() / F::lit(2.0), (-eta).exp()),
    };
    let bound = F::one() - F::lit(3.0) * c * s - c * far;
    let sharp_bound = F::one() - F::lit(2.0) * c * s - c * far;
    let separation = (p_own - p_other).abs();
    Ok(IdentifiabilityReport { vertex: v, p_own, p_other, separation, bound, sharp_bound, passed: separation >= bound })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DlrReport<F> {
    pub sub_volume: Vec<usize>,
    pub boundary_interior: Vec<usize>,
    pub patterns_checked: u64,
    pub max_discrepancy: F,
}

/// Compares `sum_tau mu(sigma_dL = tau) gamma_L(omega | tau)` with `mu(sigma_L = omega)`
/// for every window pattern on the sub-volume `L`.
pub fn dlr_consistency_check<F: Real>(rec: &TreeRecursion<'_, F>, sub: &[usize]) -> Result<DlrReport<F>> {
    let ball = rec.ball();
    let model = rec.model();
    let w = rec.window();
    let mut lam = sub.to_vec();
    lam.sort_unstable();
    lam.dedup();
    if lam.iter().any(|&v| !ball.is_interior(v)) {
        return invalid("sub-volume must be interior");
    }
    if lam.is_empty() {
        return Ok(DlrReport { sub_volume: lam, boundary_interior: Vec::new(), patterns_checked: 0, max_discrepancy: F::zero() });
    }
    let mut bnd: Vec<usize> = lam.iter().flat_map(|&v| ball.neighbors(v)).filter(|x| !lam.contains(x)).collect();
    bnd.sort_unstable();
    bnd.dedup();
    let bnd_int: Vec<usize> = bnd.iter().copied().filter(|&x| ball.is_interior(x)).collect();

    let inner = rec.patterns(&lam)?;
    let outer = rec.patterns(&bnd_int)?;
    let table = model.pair_table();
    let mut spins = vec![0 as Spin; ball.n_total()];
    spins.copy_from_slice(rec.boundary());

    let mut lhs = vec![F::zero(); inner.len()];
    let mut energies = vec![F::zero(); inner.len()];
    for tau in &outer {
        let clamps: Vec<(usize, Spin)> = bnd_int.iter().zip(tau).map(|(&x, &i)| (x, w.spin(x, i))).collect();
        let p_tau = rec.log_prob_clamped(&clamps)?.exp();
        for &(x, a) in &clamps {
            spins[x] = a;
        }
        for (k, pat) in inner.iter().enumerate() {
            for (&v, &i) in lam.iter().zip(pat) {
                spins[v] = w.spin(v, i);
            }
            let mut e = F::zero();
            for &v in &lam {
                e = e + model.site_energy(v, spins[v])?;
                for x in ball.neighbors(v) {
                    // edges inside the sub-volume are counted from their lower endpoint
                    if lam.contains(&x) && x < v {
                        continue;
                    }
                    e = e + table.pair(spins[v], spins[x]);
                }
            }
            energies[k] = -model.beta * e;
        }
        let lz = log_sum_exp(&energies);
        for k in 0..inner.len() {
            lhs[k] = lhs[k] + p_tau * (energies[k] - lz).exp();
        }
    }
    let mut max = F::zero();
    for (k, pat) in inner.iter().enumerate() {
        let clamps: Vec<(usize, Spin)> = lam.iter().zip(pat).map(|(&v, &i)| (v, w.spin(v, i))).collect();
        let rhs = rec.log_prob_clamped(&clamps)?.exp();
        max = max.max((lhs[k] - rhs).abs());
    }
    Ok(DlrReport {
        sub_volume: lam,
        boundary_interior: bnd_int,
        patterns_checked: (inner.len() * outer.len()) as u64,
        max_discrepancy: max,
    })
}
