//! Reference configurations, their broken-bond statistics, and the closed-form
//! stability constants and minimal degrees.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{Interaction, ModelSpec, Perturbation, PerturbationKind, Spin, SpinConfig};
use crate::scalar::Real;
use crate::tree::TreeBall;

#[derive(Serialize, Deserialize)]
struct GroundStateRepr {
    degree: usize,
    radius: usize,
    values: Vec<Spin>,
}

/// A reference configuration on a ball and its shell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GroundStateRepr", into = "GroundStateRepr")]
pub struct GroundState {
    degree: usize,
    radius: usize,
    config: SpinConfig,
    broken: Vec<(usize, usize)>,
    broken_per_vertex: Vec<usize>,
    d_d: usize,
    max_increment: Spin,
}

impl TryFrom<GroundStateRepr> for GroundState {
    type Error = Error;
    fn try_from(r: GroundStateRepr) -> Result<Self> {
        let ball = TreeBall::new(r.degree, r.radius)?;
        GroundState::explicit(&ball, r.values)
    }
}

impl From<GroundState> for GroundStateRepr {
    fn from(g: GroundState) -> Self {
        GroundStateRepr { degree: g.degree, radius: g.radius, values: g.config.values }
    }
}

impl GroundState {
    pub fn explicit(ball: &TreeBall, values: Vec<Spin>) -> Result<Self> {
        if values.len() != ball.n_total() {
            return Err(Error::ConfigSize { expected: ball.n_total(), got: values.len() });
        }
        let mut broken = Vec::new();
        let mut per = vec![0usize; ball.n_total()];
        let mut max_increment = 0;
        for (a, b) in ball.edges() {
            let inc = (values[a] - values[b]).abs();
            if inc != 0 {
                broken.push((a, b));
                per[a] += 1;
                per[b] += 1;
                max_increment = max_increment.max(inc);
            }
        }
        let d_d = per.iter().copied().max().unwrap_or(0);
        Ok(GroundState {
            degree: ball.degree(),
            radius: ball.radius(),
            config: SpinConfig::new(values),
            broken,
            broken_per_vertex: per,
            d_d,
            max_increment,
        })
    }

    pub fn homogeneous(ball: &TreeBall, value: Spin) -> Self {
        Self::explicit(ball, vec![value; ball.n_total()]).expect("sized by construction")
    }

    /// Spine down the first children from the root; the second child of every
    /// interior spine vertex roots a tooth whose whole subtree takes the next
    /// value of `tooth_values`. Every vertex meets at most one broken bond.
    pub fn comb(ball: &TreeBall, base: Spin, tooth_values: &[Spin]) -> Result<Self> {
        if tooth_values.is_empty() {
            return invalid("comb needs at least one tooth value");
        }
        if tooth_values.contains(&base) {
            return invalid("tooth values must differ from the base value");
        }
        let mut values = vec![base; ball.n_total()];
        let mut spine = 0usize;
        let mut k = 0usize;
        while ball.is_interior(spine) {
            let ch = ball.children(spine);
            let tooth = ch[1];
            fill_subtree(ball, tooth, tooth_values[k % tooth_values.len()], &mut values);
            k += 1;
            spine = ch[0];
        }
        Self::explicit(ball, values)
    }

    /// Height profile along the first-child spine: edges at even spine depth step
    /// by the next entry of `increments`, odd ones are flat. Off-spine subtrees
    /// copy their spine vertex, so every vertex meets at most one broken bond.
    pub fn staircase(ball: &TreeBall, base: Spin, increments: &[Spin]) -> Result<Self> {
        if increments.is_empty() || increments.contains(&0) {
            return invalid("staircase increments must be non-empty and nonzero");
        }
        let mut values = vec![base; ball.n_total()];
        let mut spine = vec![0usize];
        while ball.is_interior(*spine.last().unwrap()) {
            spine.push(ball.children(*spine.last().unwrap())[0]);
        }
        let mut h = base;
        let mut step = 0usize;
        for (k, &s) in spine.iter().enumerate() {
            if k > 0 && (k - 1) % 2 == 0 {
                h += increments[step % increments.len()];
                step += 1;
            }
            values[s] = h;
            if ball.is_interior(s) {
                for &c in &ball.children(s)[1..] {
                    fill_subtree(ball, c, h, &mut values);
                }
            }
        }
        Self::explicit(ball, values)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn config(&self) -> &SpinConfig {
        &self.config
    }

    pub fn values(&self) -> &[Spin] {
        &self.config.values
    }

    pub fn broken_bonds(&self) -> &[(usize, usize)] {
        &self.broken
    }

    pub fn broken_at(&self, v: usize) -> usize {
        self.broken_per_vertex[v]
    }

    /// Largest number of broken bonds at one vertex.
    pub fn d_d(&self) -> usize {
        self.d_d
    }

    pub fn max_increment(&self) -> Spin {
        self.max_increment
    }

    pub fn is_homogeneous(&self) -> bool {
        self.broken.is_empty()
    }

    pub fn check_ball(&self, ball: &TreeBall) -> Result<()> {
        if ball.degree() != self.degree || ball.radius() != self.radius {
            return invalid(format!(
                "ground state lives on (d={}, R={}), ball is (d={}, R={})",
                self.degree,
                self.radius,
                ball.degree(),
                ball.radius()
            ));
        }
        Ok(())
    }

    /// `sup_v sum_{w ~ v} |w0_v - w0_w|^p`
    pub fn max_vertex_increment_sum<F: Real>(&self, ball: &TreeBall, p: F) -> F {
        let mut acc = vec![F::zero(); ball.n_total()];
        for &(a, b) in &self.broken {
            let x = F::from_i64_lossy((self.config.values[a] - self.config.values[b]).abs()).powf(p);
            acc[a] = acc[a] + x;
            acc[b] = acc[b] + x;
        }
        acc.into_iter().fold(F::zero(), F::max)
    }
}

fn fill_subtree(ball: &TreeBall, root: usize, value: Spin, values: &mut [Spin]) {
    let mut stack = vec![root];
    while let Some(v) = stack.pop() {
        values[v] = value;
        if ball.is_interior(v) {
            stack.extend_from_slice(ball.children(v));
        }
    }
}

/// `min(2^{1-p}, 1)`, the infimum of `|s+1|^p + |s|^p` over real `s`.
pub fn c_p<F: Real>(p: F) -> Result<F> {
    if !(p.is_finite() && p > F::zero()) {
        return invalid(format!("c_p needs p > 0, got {p}"));
    }
    Ok(F::lit(2.0).powf(F::one() - p).min(F::one()))
}

/// `d c_p^2 - 1 - (c_p + 1) d_max M^p`
pub fn stability_constant_psos_raw<F: Real>(p: F, degree: usize, d_max: usize, m: Spin) -> Result<F> {
    let cp = c_p(p)?;
    let load = if d_max == 0 || m == 0 {
        F::zero()
    } else {
        F::from_usize_lossy(d_max) * F::from_i64_lossy(m).powf(p)
    };
    Ok(F::from_usize_lossy(degree) * cp * cp - F::one() - (cp + F::one()) * load)
}

/// `1 + floor(c_p^{-2} + (c_p^{-1} + c_p^{-2}) d_max M^p)`, bumped if rounding
/// leaves the stability constant non-positive there.
pub fn minimal_degree_psos<F: Real>(p: F, m: Spin, d_max: usize) -> Result<usize> {
    if m < 1 || d_max < 1 {
        return invalid(format!("minimal degree needs M >= 1 and d_max >= 1, got M={m}, d_max={d_max}"));
    }
    minimal_degree_psos_any(p, m, d_max)
}

fn minimal_degree_psos_any<F: Real>(p: F, m: Spin, d_max: usize) -> Result<usize> {
    let cp = c_p(p)?;
    let inv = F::one() / cp;
    let load = if d_max == 0 || m == 0 {
        F::zero()
    } else {
        F::from_usize_lossy(d_max) * F::from_i64_lossy(m).powf(p)
    };
    let x = inv * inv + (inv + inv * inv) * load;
    let mut d = 1 + x.floor().to_f64_lossy() as usize;
    while stability_constant_psos_raw(p, d, d_max, m)? <= F::zero() {
        d += 1;
    }
    Ok(d.max(2))
}

/// `(d-1) u - d_D (U + u)`
pub fn stability_constant_finite_raw<F: Real>(u: F, big_u: F, degree: usize, d_d: usize) -> F {
    F::from_usize_lossy(degree.saturating_sub(1)) * u - F::from_usize_lossy(d_d) * (big_u + u)
}

/// `2 + floor(d_max (u + U) / u)`
pub fn minimal_degree_finite<F: Real>(u: F, big_u: F, d_max: usize) -> Result<usize> {
    if !(u > F::zero() && big_u >= u) {
        return invalid(format!("need 0 < u <= U, got u={u}, U={big_u}"));
    }
    let mut d = 2 + (F::from_usize_lossy(d_max) * (u + big_u) / u).floor().to_f64_lossy() as usize;
    while stability_constant_finite_raw(u, big_u, d, d_max) <= F::zero() {
        d += 1;
    }
    Ok(d)
}

pub fn stability_constant_psos<F: Real>(model: &ModelSpec<F>, gs: &GroundState, degree: usize) -> Result<F> {
    let Some(p) = model.interaction.exponent() else {
        return invalid("p-SOS stability constant requested for a finite-spin model");
    };
    stability_constant_psos_raw(p, degree, gs.d_d(), gs.max_increment())
}

/// `(d c_p^2 - 1) - (c_p + 1) sup_v sum_{w~v} |w0_v - w0_w|^p`; positive means
/// the generalised sparsity condition holds.
pub fn mixed_sparsity_margin<F: Real>(model: &ModelSpec<F>, ball: &TreeBall, gs: &GroundState, degree: usize) -> Result<F> {
    let Some(p) = model.interaction.exponent() else {
        return invalid("mixed sparsity margin is defined for p-SOS only");
    };
    gs.check_ball(ball)?;
    let cp = c_p(p)?;
    Ok(F::from_usize_lossy(degree) * cp * cp - F::one() - (cp + F::one()) * gs.max_vertex_increment_sum(ball, p))
}

pub fn stability_constant_finite<F: Real>(model: &ModelSpec<F>, gs: &GroundState, degree: usize) -> Result<F> {
    let Some((u, big_u)) = model.interaction.coupling_range() else {
        return invalid("finite-spin stability constant requested for a p-SOS model");
    };
    Ok(stability_constant_finite_raw(u, big_u, degree, gs.d_d()))
}

/// Either family's stability constant for `gs` at degree `d`.
pub fn stability_constant<F: Real>(model: &ModelSpec<F>, gs: &GroundState, degree: usize) -> Result<F> {
    match model.interaction {
        Interaction::Psos { .. } => stability_constant_psos(model, gs, degree),
        Interaction::FiniteSpin { .. } => stability_constant_finite(model, gs, degree),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducedConstant<F> {
    pub base: F,
    pub perturbation: Perturbation<F>,
    pub value: F,
    pub stable: bool,
}

/// `c - eps` for an oscillation, `c - delta` for a linear field (p >= 1 only).
pub fn reduced_constant<F: Real>(c: F, perturbation: Perturbation<F>, p: Option<F>) -> Result<ReducedConstant<F>> {
    if perturbation.kind == PerturbationKind::LinearField {
        match p {
            Some(p) if p >= F::one() => {}
            Some(p) => return invalid(format!("linear-field reduction needs p >= 1, got {p}")),
            None => return invalid("linear-field reduction applies to p-SOS models"),
        }
    }
    let value = c - perturbation.value;
    Ok(ReducedConstant { base: c, perturbation, value, stable: value > F::zero() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMembership {
    /// stability constant from `(d_D, M)` is positive
    pub sparse: bool,
    /// generalised per-vertex sparsity margin is positive (p-SOS only)
    pub mixed_sparse: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport<F> {
    pub degree: usize,
    pub d_d: usize,
    pub max_increment: Spin,
    pub c_p: Option<F>,
    pub stability_constant: F,
    pub minimal_degree: usize,
    pub mixed_sparsity_margin: Option<F>,
    pub membership: ClassMembership,
    pub reduced: Option<ReducedConstant<F>>,
}

impl<F: Real> StabilityReport<F> {
    pub fn compute(model: &ModelSpec<F>, ball: &TreeBall, gs: &GroundState) -> Result<Self> {
        gs.check_ball(ball)?;
        let d = ball.degree();
        let c = stability_constant(model, gs, d)?;
        let (cp, min_deg, margin) = match &model.interaction {
            Interaction::Psos { p } => {
                let min_deg = minimal_degree_psos_any(*p, gs.max_increment(), gs.d_d())?;
                (Some(c_p(*p)?), min_deg, Some(mixed_sparsity_margin(model, ball, gs, d)?))
            }
            Interaction::FiniteSpin { .. } => {
                let (u, big_u) = model.interaction.coupling_range().expect("finite spin");
                (None, minimal_degree_finite(u, big_u, gs.d_d())?, None)
            }
        };
        let reduced = if model.has_potentials() {
            let width = model.interaction.num_states().map(|q| q as Spin - 1);
            let pert = model.perturbation_oscillation(width);
            Some(reduced_constant(c, pert, model.interaction.exponent())?)
        } else {
            None
        };
        Ok(StabilityReport {
            degree: d,
            d_d: gs.d_d(),
            max_increment: gs.max_increment(),
            c_p: cp,
            stability_constant: c,
            minimal_degree: min_deg,
            mixed_sparsity_margin: margin,
            membership: ClassMembership { sparse: c > F::zero(), mixed_sparse: margin.map(|m| m > F::zero()) },
            reduced,
        })
    }
}
