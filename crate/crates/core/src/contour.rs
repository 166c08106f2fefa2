//! Labelled contours relative to a reference configuration: extraction,
//! exhaustive enumeration under size and height cutoffs, and exhaustive checks
//! of the excess-energy lower bounds.

use std::collections::BTreeMap;
use std::ops::ControlFlow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::graph::for_each_connected_set;
use crate::ground::{c_p, stability_constant, GroundState, StabilityReport};
use crate::model::{Interaction, ModelSpec, Spin, SpinConfig};
use crate::scalar::Real;
use crate::tree::TreeBall;

/// Default cap on the number of labelled contours one run may visit.
pub const CONTOUR_BUDGET: u64 = 500_000_000;

/// A connected set of wrong vertices with their spins; `support` is sorted, so
/// the anchor (smallest breadth-first index, which is also the top vertex) is first.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelledContour {
    pub support: Vec<usize>,
    pub labels: Vec<Spin>,
}

impl LabelledContour {
    pub fn anchor(&self) -> usize {
        self.support[0]
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn deviations(&self, omega0: &[Spin]) -> Vec<Spin> {
        self.support.iter().zip(&self.labels).map(|(&v, &a)| a - omega0[v]).collect()
    }

    pub fn label_at(&self, v: usize) -> Option<Spin> {
        self.support.binary_search(&v).ok().map(|i| self.labels[i])
    }
}

/// Maximal connected components of the disagreement set, ordered by anchor.
pub fn extract_contours(ball: &TreeBall, omega: &SpinConfig, omega0: &SpinConfig) -> Result<Vec<LabelledContour>> {
    if omega.values.len() != ball.n_total() || omega0.values.len() != ball.n_total() {
        return Err(Error::ConfigSize { expected: ball.n_total(), got: omega.values.len().min(omega0.values.len()) });
    }
    for v in ball.shell() {
        if omega.values[v] != omega0.values[v] {
            return Err(Error::ShellMismatch(v));
        }
    }
    Ok(extract_unchecked(ball, &omega.values, &omega0.values))
}

pub(crate) fn extract_unchecked(ball: &TreeBall, omega: &[Spin], omega0: &[Spin]) -> Vec<LabelledContour> {
    let n = ball.n_interior();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for v in 0..n {
        if seen[v] || omega[v] == omega0[v] {
            continue;
        }
        seen[v] = true;
        stack.push(v);
        let mut support = Vec::new();
        while let Some(x) = stack.pop() {
            support.push(x);
            for &y in ball.interior_neighbors(x) {
                if !seen[y] && omega[y] != omega0[y] {
                    seen[y] = true;
                    stack.push(y);
                }
            }
        }
        support.sort_unstable();
        let labels = support.iter().map(|&x| omega[x]).collect();
        out.push(LabelledContour { support, labels });
    }
    out
}

/// Size of the contour containing `v`, zero when `v` is correct.
pub fn contour_size_at(ball: &TreeBall, omega: &[Spin], omega0: &[Spin], v: usize) -> usize {
    if omega[v] == omega0[v] {
        return 0;
    }
    let mut seen = vec![v];
    let mut stack = vec![v];
    while let Some(x) = stack.pop() {
        for &y in ball.interior_neighbors(x) {
            if omega[y] != omega0[y] && !seen.contains(&y) {
                seen.push(y);
                stack.push(y);
            }
        }
    }
    seen.len()
}

pub fn apply_contours(omega0: &SpinConfig, contours: &[LabelledContour]) -> SpinConfig {
    let mut out = omega0.clone();
    for c in contours {
        for (&v, &a) in c.support.iter().zip(&c.labels) {
            out.values[v] = a;
        }
    }
    out
}

/// Per-vertex label alphabets: `w0_v + s` with `0 < |s| <= K` for p-SOS, every
/// other colour for finite spins.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelSpace {
    Heights { k: Spin },
    Colours { q: usize },
}

impl LabelSpace {
    pub fn for_model<F: Real>(interaction: &Interaction<F>, k: Option<Spin>) -> Result<Self> {
        match interaction {
            Interaction::Psos { .. } => match k {
                Some(k) if k >= 1 => Ok(LabelSpace::Heights { k }),
                Some(k) => invalid(format!("height cutoff must be at least 1, got {k}")),
                None => invalid("p-SOS contours need a height cutoff K"),
            },
            Interaction::FiniteSpin { q, .. } => Ok(LabelSpace::Colours { q: *q }),
        }
    }

    pub fn per_site(&self) -> usize {
        match *self {
            LabelSpace::Heights { k } => 2 * k as usize,
            LabelSpace::Colours { q } => q - 1,
        }
    }

    pub fn labels(&self, ground: Spin) -> Vec<Spin> {
        match *self {
            LabelSpace::Heights { k } => (-k..=k).filter(|&s| s != 0).map(|s| ground + s).collect(),
            LabelSpace::Colours { q } => (0..q as Spin).filter(|&a| a != ground).collect(),
        }
    }
}

/// Edges `(v, w)` with `v` in the support and `w` a child of `v` when the
/// support is rooted at its top vertex; each edge meeting the support appears once.
#[derive(Clone, Debug)]
pub(crate) struct SupportEdges {
    /// (position of v in support, position of w in support if inside, w)
    pub edges: Vec<(usize, Option<usize>, usize)>,
}

impl SupportEdges {
    pub fn new(ball: &TreeBall, support: &[usize]) -> Self {
        let top = support[0];
        let mut edges = Vec::new();
        for (i, &v) in support.iter().enumerate() {
            for w in ball.neighbors(v) {
                if v != top && Some(w) == ball.parent(v) {
                    continue;
                }
                edges.push((i, support.binary_search(&w).ok(), w));
            }
        }
        SupportEdges { edges }
    }
}

/// Visits every connected subset of the interior with at most `l_max`
/// vertices meeting `anchors`, each once (keyed by its smallest anchor member).
pub(crate) fn for_each_support<V>(ball: &TreeBall, anchors: &[usize], l_max: usize, mut visit: V) -> ControlFlow<()>
where
    V: FnMut(&[usize]) -> ControlFlow<()>,
{
    let mut sorted = anchors.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    for (i, &a) in sorted.iter().enumerate() {
        for_each_connected_set(ball.interior_adjacency(), a, &sorted[..i], l_max, |s| visit(s))?;
    }
    ControlFlow::Continue(())
}

fn check_anchors(ball: &TreeBall, anchors: &[usize]) -> Result<()> {
    if let Some(&v) = anchors.iter().find(|&&v| !ball.is_interior(v)) {
        return invalid(format!("anchor {v} is not an interior vertex"));
    }
    Ok(())
}

/// Odometer over the label alphabets of one support.
fn for_each_labelling<V>(alphabets: &[Vec<Spin>], mut visit: V) -> ControlFlow<()>
where
    V: FnMut(&[Spin]) -> ControlFlow<()>,
{
    let n = alphabets.len();
    if alphabets.iter().any(|a| a.is_empty()) {
        return ControlFlow::Continue(());
    }
    let mut idx = vec![0usize; n];
    let mut labels: Vec<Spin> = alphabets.iter().map(|a| a[0]).collect();
    loop {
        visit(&labels)?;
        let mut i = 0;
        loop {
            if i == n {
                return ControlFlow::Continue(());
            }
            idx[i] += 1;
            if idx[i] < alphabets[i].len() {
                labels[i] = alphabets[i][idx[i]];
                break;
            }
            idx[i] = 0;
            labels[i] = alphabets[i][0];
            i += 1;
        }
    }
}

/// Number of labelled contours an enumeration would visit.
pub fn count_contours(ball: &TreeBall, anchors: &[usize], l_max: usize, space: LabelSpace) -> Result<u64> {
    check_anchors(ball, anchors)?;
    let per = space.per_site() as u64;
    let mut total = 0u64;
    let mut overflow = false;
    let _ = for_each_support(ball, anchors, l_max, |s| {
        match per.checked_pow(s.len() as u32).and_then(|x| total.checked_add(x)) {
            Some(t) => total = t,
            None => overflow = true,
        }
        if overflow {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    });
    if overflow {
        return Err(Error::BudgetExceeded { what: "contour count".into(), budget: u64::MAX });
    }
    Ok(total)
}

/// Streams every contour with at most `l_max` sites meeting `anchors`, labels
/// drawn from `space`. Returns the number visited.
pub fn enumerate_contours<V>(
    ball: &TreeBall,
    omega0: &SpinConfig,
    anchors: &[usize],
    l_max: usize,
    space: LabelSpace,
    budget: u64,
    mut visit: V,
) -> Result<u64>
where
    V: FnMut(&LabelledContour),
{
    check_anchors(ball, anchors)?;
    let total = count_contours(ball, anchors, l_max, space)?;
    if total > budget {
        return Err(Error::BudgetExceeded { what: format!("{total} labelled contours"), budget });
    }
    let w0 = &omega0.values;
    let _ = for_each_support(ball, anchors, l_max, |s| {
        let mut support = s.to_vec();
        support.sort_unstable();
        let alphabets: Vec<Vec<Spin>> = support.iter().map(|&v| space.labels(w0[v])).collect();
        let mut c = LabelledContour { support, labels: Vec::new() };
        for_each_labelling(&alphabets, |lab| {
            c.labels.clear();
            c.labels.extend_from_slice(lab);
            visit(&c);
            ControlFlow::Continue(())
        })
    });
    Ok(total)
}

pub fn collect_contours(
    ball: &TreeBall,
    omega0: &SpinConfig,
    anchors: &[usize],
    l_max: usize,
    space: LabelSpace,
) -> Result<Vec<LabelledContour>> {
    let mut out = Vec::new();
    enumerate_contours(ball, omega0, anchors, l_max, space, CONTOUR_BUDGET, |c| out.push(c.clone()))?;
    Ok(out)
}

/// `H(w0 with the contour inserted) - H(w0)`, site potentials included.
pub fn contour_excess_energy<F: Real>(
    model: &ModelSpec<F>,
    ball: &TreeBall,
    omega0: &SpinConfig,
    contour: &LabelledContour,
) -> Result<F> {
    let table = model.pair_table();
    let edges = SupportEdges::new(ball, &contour.support);
    let w0 = &omega0.values;
    for (&v, &a) in contour.support.iter().zip(&contour.labels) {
        model.interaction.check_spin(v, a)?;
    }
    let mut e = F::zero();
    for &(i, j, w) in &edges.edges {
        let v = contour.support[i];
        let b = j.map_or(w0[w], |j| contour.labels[j]);
        e = e + table.pair(contour.labels[i], b) - table.pair(w0[v], w0[w]);
    }
    for (&v, &a) in contour.support.iter().zip(&contour.labels) {
        e = e + model.site_energy(v, a)? - model.site_energy(v, w0[v])?;
    }
    Ok(e)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    /// p-SOS: `sum (c_p^2 |s_v|^p - |s_w|^p) >= (d c_p^2 - 1) sum |s_v|^p`;
    /// finite spins: `sum (1_v - 1_w) >= (d - 1)|gamma|`
    Intermediate,
    /// the two-term lower bound on the interaction part of the excess energy
    PairBound,
    /// finite spins: the middle bound is at least `((d-1)u - d_D(U+u))|gamma|`
    PairBoundFinal,
    /// excess energy `>= c * sum |s_v|^p` (or `c |gamma|`)
    Stability,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation<F> {
    pub check: CheckKind,
    pub contour: LabelledContour,
    pub lhs: F,
    pub rhs: F,
    pub slack: F,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlackRecord<F> {
    pub min_slack: F,
    pub argmin_contour: LabelledContour,
    pub violations: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions<F> {
    pub l_max: usize,
    /// height cutoff for p-SOS labels
    pub k: Option<Spin>,
    pub tolerance: F,
    /// constant for the stability check; derived from the ground state when absent
    pub forced_constant: Option<F>,
    /// vertices every contour must meet; all interior vertices when absent
    pub anchors: Option<Vec<usize>>,
    pub budget: u64,
    /// counterexamples kept in the report (all are counted)
    pub max_reported: usize,
}

impl<F: Real> VerifyOptions<F> {
    pub fn new(l_max: usize, k: Option<Spin>) -> Self {
        VerifyOptions {
            l_max,
            k,
            tolerance: F::lit(1e-9),
            forced_constant: None,
            anchors: None,
            budget: CONTOUR_BUDGET,
            max_reported: 32,
        }
    }

    pub fn forced(mut self, c: F) -> Self {
        self.forced_constant = Some(c);
        self
    }

    pub fn anchors(mut self, anchors: Vec<usize>) -> Self {
        self.anchors = Some(anchors);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport<F> {
    pub checked: u64,
    pub violations: Vec<Violation<F>>,
    pub violation_count: u64,
    pub min_slack: Option<F>,
    pub argmin_contour: Option<LabelledContour>,
    pub by_check: BTreeMap<CheckKind, SlackRecord<F>>,
    /// constant used in the stability check, absent when the check was skipped
    pub stability_constant: Option<F>,
    pub tolerance: F,
    pub l_max: usize,
    pub height_cutoff: Option<Spin>,
    /// upper bound `exp(-beta c (K+1)^p)` on the activity of any contour
    /// using a deviation beyond the cutoff
    pub residual_activity_bound: Option<F>,
    pub vacuous: bool,
}

impl<F: Real> VerificationReport<F> {
    pub fn passed(&self) -> bool {
        self.violation_count == 0
    }

    fn empty(opts: &VerifyOptions<F>, constant: Option<F>) -> Self {
        VerificationReport {
            checked: 0,
            violations: Vec::new(),
            violation_count: 0,
            min_slack: None,
            argmin_contour: None,
            by_check: BTreeMap::new(),
            stability_constant: constant,
            tolerance: opts.tolerance,
            l_max: opts.l_max,
            height_cutoff: opts.k,
            residual_activity_bound: None,
            vacuous: true,
        }
    }

    fn record(&mut self, check: CheckKind, lhs: F, rhs: F, contour: &LabelledContour, keep: usize) {
        let slack = lhs - rhs;
        let violated = slack < -self.tolerance;
        let entry = self.by_check.entry(check).or_insert_with(|| SlackRecord {
            min_slack: F::infinity(),
            argmin_contour: contour.clone(),
            violations: 0,
        });
        if slack < entry.min_slack {
            entry.min_slack = slack;
            entry.argmin_contour = contour.clone();
        }
        if violated {
            entry.violations += 1;
            self.violation_count += 1;
            if self.violations.len() < keep {
                self.violations.push(Violation { check, contour: contour.clone(), lhs, rhs, slack });
            }
        }
    }

    fn merge(mut self, other: Self, keep: usize) -> Self {
        self.checked += other.checked;
        self.violation_count += other.violation_count;
        for v in other.violations {
            if self.violations.len() < keep {
                self.violations.push(v);
            }
        }
        for (k, r) in other.by_check {
            match self.by_check.get_mut(&k) {
                Some(e) => {
                    e.violations += r.violations;
                    if r.min_slack < e.min_slack {
                        e.min_slack = r.min_slack;
                        e.argmin_contour = r.argmin_contour;
                    }
                }
                None => {
                    self.by_check.insert(k, r);
                }
            }
        }
        self
    }

    fn finish(mut self) -> Self {
        self.vacuous = self.checked == 0;
        let best = self.by_check.values().min_by(|a, b| a.min_slack.partial_cmp(&b.min_slack).unwrap_or(std::cmp::Ordering::Equal));
        self.min_slack = best.map(|r| r.min_slack);
        self.argmin_contour = best.map(|r| r.argmin_contour.clone());
        self
    }
}

/// Constant the stability check runs against: the forced value, else the
/// reduced constant under site potentials, else the ground state's own.
/// `None` when nothing positive is available.
fn resolve_constant<F: Real>(
    model: &ModelSpec<F>,
    ball: &TreeBall,
    gs: &GroundState,
    forced: Option<F>,
) -> Result<Option<F>> {
    if let Some(c) = forced {
        return Ok(Some(c));
    }
    let report = StabilityReport::compute(model, ball, gs)?;
    let c = match report.reduced {
        Some(r) => r.value,
        None => stability_constant(model, gs, ball.degree())?,
    };
    Ok((c > F::zero()).then_some(c))
}

fn all_anchors(ball: &TreeBall, opts_anchors: &Option<Vec<usize>>) -> Result<Vec<usize>> {
    let anchors = match opts_anchors {
        Some(a) => a.clone(),
        None => ball.interior().collect(),
    };
    check_anchors(ball, &anchors)?;
    Ok(anchors)
}

/// Exhaustive check of the p-SOS excess-energy bounds over all contours within
/// the cutoffs. Violations are returned in the report, not as errors.
pub fn verify_excess_bound_psos<F: Real>(
    model: &ModelSpec<F>,
    ball: &TreeBall,
    gs: &GroundState,
    opts: &VerifyOptions<F>,
) -> Result<VerificationReport<F>> {
    let Some(p) = model.interaction.exponent() else {
        return invalid("p-SOS verification needs a p-SOS model");
    };
    gs.check_ball(ball)?;
    let space = LabelSpace::for_model(&model.interaction, opts.k)?;
    let anchors = all_anchors(ball, &opts.anchors)?;
    let constant = resolve_constant(model, ball, gs, opts.forced_constant)?;
    let total = count_contours(ball, &anchors, opts.l_max, space)?;
    if total > opts.budget {
        return Err(Error::BudgetExceeded { what: format!("{total} labelled contours"), budget: opts.budget });
    }
    let cp = c_p(p)?;
    let d = F::from_usize_lossy(ball.degree());
    let a_coef = d * cp * cp - F::one();
    let table = model.pair_table();
    let w0 = gs.values();
    let keep = opts.max_reported;

    let shard = |i: usize| -> Result<VerificationReport<F>> {
        let mut rep = VerificationReport::empty(opts, constant);
        let mut err = None;
        let _ = for_each_connected_set(ball.interior_adjacency(), anchors[i], &anchors[..i], opts.l_max, |s| {
            let mut support = s.to_vec();
            support.sort_unstable();
            let edges = SupportEdges::new(ball, &support);
            let alphabets: Vec<Vec<Spin>> = support.iter().map(|&v| space.labels(w0[v])).collect();
            let base_edge: F = edges.edges.iter().map(|&(i, _, w)| table.pair(w0[support[i]], w0[w])).sum();
            let inc_sum: F = base_edge; // sum over w <- v of |w0_v - w0_w|^p
            let mut contour = LabelledContour { support: support.clone(), labels: Vec::new() };
            for_each_labelling(&alphabets, |lab| {
                let mut pair = F::zero();
                let mut inter = F::zero();
                for &(i, j, w) in &edges.edges {
                    let b = j.map_or(w0[w], |j| lab[j]);
                    pair = pair + table.pair(lab[i], b);
                    let sv = table.power(lab[i] - w0[support[i]]);
                    let sw = j.map_or(F::zero(), |j| table.power(lab[j] - w0[support[j]]));
                    inter = inter + cp * cp * sv - sw;
                }
                let pair_excess = pair - base_edge;
                let mut site = F::zero();
                let mut norm = F::zero();
                for (k, &v) in support.iter().enumerate() {
                    norm = norm + table.power(lab[k] - w0[v]);
                    if model.has_potentials() {
                        match (model.site_energy(v, lab[k]), model.site_energy(v, w0[v])) {
                            (Ok(a), Ok(b)) => site = site + a - b,
                            (Err(e), _) | (_, Err(e)) => {
                                err = Some(e);
                                return ControlFlow::Break(());
                            }
                        }
                    }
                }
                contour.labels.clear();
                contour.labels.extend_from_slice(lab);
                rep.checked += 1;
                rep.record(CheckKind::Intermediate, inter, a_coef * norm, &contour, keep);
                rep.record(CheckKind::PairBound, pair_excess, a_coef * norm - (cp + F::one()) * inc_sum, &contour, keep);
                if let Some(c) = constant {
                    rep.record(CheckKind::Stability, pair_excess + site, c * norm, &contour, keep);
                }
                ControlFlow::Continue(())
            })
        });
        match err {
            Some(e) => Err(e),
            None => Ok(rep),
        }
    };
    let mut rep = combine(opts, constant, (0..anchors.len()).into_par_iter().map(shard).collect::<Result<Vec<_>>>()?);
    if let (Some(c), Some(k)) = (constant, opts.k) {
        rep.residual_activity_bound = Some((-model.beta * c * F::from_i64_lossy(k + 1).powf(p)).exp());
    }
    Ok(rep)
}

fn combine<F: Real>(opts: &VerifyOptions<F>, constant: Option<F>, parts: Vec<VerificationReport<F>>) -> VerificationReport<F> {
    parts
        .into_iter()
        .fold(VerificationReport::empty(opts, constant), |a, b| a.merge(b, opts.max_reported))
        .finish()
}

/// Exhaustive check of the finite-spin excess-energy bounds.
pub fn verify_excess_bound_finite<F: Real>(
    model: &ModelSpec<F>,
    ball: &TreeBall,
    gs: &GroundState,
    opts: &VerifyOptions<F>,
) -> Result<VerificationReport<F>> {
    let Some((u, big_u)) = model.interaction.coupling_range() else {
        return invalid("finite-spin verification needs a finite-spin model");
    };
    gs.check_ball(ball)?;
    let space = LabelSpace::for_model(&model.interaction, None)?;
    let anchors = all_anchors(ball, &opts.anchors)?;
    gs.config().check(ball, &model.interaction)?;
    let constant = resolve_constant(model, ball, gs, opts.forced_constant)?;
    let total = count_contours(ball, &anchors, opts.l_max, space)?;
    if total > opts.budget {
        return Err(Error::BudgetExceeded { what: format!("{total} labelled contours"), budget: opts.budget });
    }
    let d = ball.degree();
    let final_coef = F::from_usize_lossy(d - 1) * u - F::from_usize_lossy(gs.d_d()) * (big_u + u);
    let du = F::from_usize_lossy(d - 1) * u;
    let table = model.pair_table();
    let w0 = gs.values();
    let keep = opts.max_reported;

    let shard = |i: usize| -> Result<VerificationReport<F>> {
        let mut rep = VerificationReport::empty(opts, constant);
        let mut err = None;
        let _ = for_each_connected_set(ball.interior_adjacency(), anchors[i], &anchors[..i], opts.l_max, |s| {
            let mut support = s.to_vec();
            support.sort_unstable();
            let size = F::from_usize_lossy(support.len());
            let edges = SupportEdges::new(ball, &support);
            let alphabets: Vec<Vec<Spin>> = support.iter().map(|&v| space.labels(w0[v])).collect();
            let base_edge: F = edges.edges.iter().map(|&(i, _, w)| table.pair(w0[support[i]], w0[w])).sum();
            let broken: F = edges
                .edges
                .iter()
                .map(|&(i, _, w)| {
                    let v = support[i];
                    table.pair(w0[v], w0[w]) + if w0[v] != w0[w] { u } else { F::zero() }
                })
                .sum();
            let outward = edges.edges.iter().filter(|e| e.1.is_none()).count();
            let inner = edges.edges.len() - outward;
            // sum over w <- v of (1_v - 1_w): every v counts once per edge, inner w subtract
            let geometric = F::from_usize_lossy(edges.edges.len()) - F::from_usize_lossy(inner);
            let middle = du * size - broken;
            let mut contour = LabelledContour { support: support.clone(), labels: Vec::new() };
            for_each_labelling(&alphabets, |lab| {
                let mut pair = F::zero();
                for &(i, j, w) in &edges.edges {
                    let b = j.map_or(w0[w], |j| lab[j]);
                    pair = pair + table.pair(lab[i], b);
                }
                let pair_excess = pair - base_edge;
                let mut site = F::zero();
                if model.has_potentials() {
                    for (k, &v) in support.iter().enumerate() {
                        match (model.site_energy(v, lab[k]), model.site_energy(v, w0[v])) {
                            (Ok(a), Ok(b)) => site = site + a - b,
                            (Err(e), _) | (_, Err(e)) => {
                                err = Some(e);
                                return ControlFlow::Break(());
                            }
                        }
                    }
                }
                contour.labels.clear();
                contour.labels.extend_from_slice(lab);
                rep.checked += 1;
                rep.record(CheckKind::Intermediate, geometric, F::from_usize_lossy(d - 1) * size, &contour, keep);
                rep.record(CheckKind::PairBound, pair_excess, middle, &contour, keep);
                rep.record(CheckKind::PairBoundFinal, middle, final_coef * size, &contour, keep);
                if let Some(c) = constant {
                    rep.record(CheckKind::Stability, pair_excess + site, c * size, &contour, keep);
                }
                ControlFlow::Continue(())
            })
        });
        match err {
            Some(e) => Err(e),
            None => Ok(rep),
        }
    };
    let mut rep = combine(opts, constant, (0..anchors.len()).into_par_iter().map(shard).collect::<Result<Vec<_>>>()?);
    rep.height_cutoff = None;
    Ok(rep)
}

/// Dispatches on the model family.
pub fn verify_excess_bound<F: Real>(
    model: &ModelSpec<F>,
    ball: &TreeBall,
    gs: &GroundState,
    opts: &VerifyOptions<F>,
) -> Result<VerificationReport<F>> {
    match model.interaction {
        Interaction::Psos { .. } => verify_excess_bound_psos(model, ball, gs, opts),
        Interaction::FiniteSpin { .. } => verify_excess_bound_finite(model, ball, gs, opts),
    }
}
