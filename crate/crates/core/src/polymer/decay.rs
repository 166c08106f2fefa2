//! Exact covariances of polymer-type events against the cluster bound.

use serde::{Deserialize, Serialize};

use super::bz::{correlation_bound, correlation_ratio_finite, correlation_ratio_psos, BzParams, CorrelationBound};
use crate::error::{invalid, Result};
use crate::exact::TreeRecursion;
use crate::model::{Interaction, Spin};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport<F> {
    pub window: Vec<usize>,
    pub other: Vec<usize>,
    pub distance: usize,
    pub covariance: F,
    pub bound: CorrelationBound<F>,
    pub ok: bool,
}

/// `|mu(A and B) - mu(A) mu(B)|` for events `A` on `w` and `B` on `u`, given as
/// deviation patterns, against `phi(|W|, d(W, U))` at activity rate `eta`.
pub fn polymer_correlation_decay<F: Real>(
    rec: &TreeRecursion<'_, F>,
    w: &[usize],
    a: &[Vec<Spin>],
    u: &[usize],
    b: &[Vec<Spin>],
    eta: F,
    params: BzParams<F>,
) -> Result<CorrelationReport<F>> {
    if w.is_empty() || u.is_empty() {
        return invalid("event windows must be non-empty");
    }
    if a.iter().any(|p| p.len() != w.len()) || b.iter().any(|p| p.len() != u.len()) {
        return invalid("event patterns must match their windows");
    }
    let ball = rec.ball();
    let distance = w.iter().flat_map(|&x| u.iter().map(move |&y| ball.distance(x, y))).min().unwrap_or(0);
    if distance == 0 {
        return invalid("event windows overlap");
    }
    let x = match &rec.model().interaction {
        Interaction::Psos { p } => correlation_ratio_psos(ball.degree(), *p, eta, params)?,
        Interaction::FiniteSpin { q, .. } => correlation_ratio_finite(ball.degree(), *q, eta, params)?,
    };
    let bound = correlation_bound(ball.degree(), x, params.delta, w.len(), distance)?;
    let covariance = rec.event_covariance(w, a, u, b)?.abs();
    Ok(CorrelationReport { window: w.to_vec(), other: u.to_vec(), distance, covariance, ok: covariance <= bound.phi, bound })
}
