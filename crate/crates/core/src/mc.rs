//! Single-site heat-bath sampling with the shell pinned to a ground state, and
//! the statistics checked against exact marginals and contour bounds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::contour::contour_size_at;
use crate::error::{invalid, Result};
use crate::exact::{MarginalTable, Method, TruncationWindow};
use crate::ground::GroundState;
use crate::model::{BoundaryMode, Interaction, ModelSpec, PairTable, Spin, SpinConfig};
use crate::polymer::series::{deviation_sum, optimal_t0};
use crate::scalar::Real;
use crate::tree::TreeBall;

/// Generator identifier recorded with every sampled output.
pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha 0.3), seed_from_u64 + set_stream";
pub const DEFAULT_BURN_IN: u64 = 100;

#[derive(Clone, Debug)]
pub struct ChainState<'a, F> {
    model: &'a ModelSpec<F>,
    ball: &'a TreeBall,
    window: TruncationWindow,
    omega0: SpinConfig,
    config: SpinConfig,
    table: PairTable<F>,
    rng: ChaCha8Rng,
    seed: u64,
    stream: u64,
    sweeps: u64,
    weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngInfo {
    pub algorithm: String,
    pub seed: u64,
    pub stream: u64,
    pub word_pos: u128,
}

impl<'a, F: Real> ChainState<'a, F> {
    /// A chain started at `gs`, the shell pinned to it.
    pub fn new(model: &'a ModelSpec<F>, ball: &'a TreeBall, gs: &GroundState, k: Option<Spin>, seed: u64, stream: u64) -> Result<Self> {
        gs.check_ball(ball)?;
        let window = TruncationWindow::around(&model.interaction, ball, gs.config(), k)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let width = (0..ball.n_interior()).map(|v| window.size(v)).max().unwrap_or(1);
        Ok(ChainState {
            model,
            ball,
            window,
            omega0: gs.config().clone(),
            config: gs.config().clone(),
            table: model.pair_table(),
            rng,
            seed,
            stream,
            sweeps: 0,
            weights: vec![0.0; width],
        })
    }

    pub fn config(&self) -> &SpinConfig {
        &self.config
    }

    pub fn ground(&self) -> &SpinConfig {
        &self.omega0
    }

    pub fn ball(&self) -> &TreeBall {
        self.ball
    }

    pub fn sweeps(&self) -> u64 {
        self.sweeps
    }

    pub fn rng_info(&self) -> RngInfo {
        RngInfo { algorithm: RNG_ALGORITHM.into(), seed: self.seed, stream: self.stream, word_pos: self.rng.get_word_pos() }
    }

    /// Resample every interior vertex once, in breadth-first order, from its
    /// exact conditional law over the window.
    pub fn sweep(&mut self) -> Result<()> {
        let beta = self.model.beta;
        for v in self.ball.interior() {
            let size = self.window.size(v);
            let mut logw = Vec::with_capacity(size);
            for i in 0..size {
                let a = self.window.spin(v, i);
                let mut e = self.model.site_energy(v, a)?;
                for w in self.ball.neighbors(v) {
                    e = e + self.table.pair(a, self.config.values[w]);
                }
                logw.push((-beta * e).to_f64_lossy());
            }
            let m = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (slot, &l) in self.weights.iter_mut().zip(&logw) {
                *slot = (l - m).exp();
                total += *slot;
            }
            let mut u = self.rng.gen::<f64>() * total;
            let mut pick = size - 1;
            for (i, &w) in self.weights[..size].iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            self.config.values[v] = self.window.spin(v, pick);
        }
        self.sweeps += 1;
        Ok(())
    }

    pub fn energy(&self) -> Result<F> {
        self.model.hamiltonian_with(self.ball, &self.config, BoundaryMode::Fixed)
    }

    /// Default burn-in: at least `min` sweeps, continuing until the last-half
    /// mean of the energy trace is within one standard deviation of the
    /// last-quarter mean, capped at `max`. Returns the sweeps spent.
    pub fn burn_in(&mut self, min: u64, max: u64) -> Result<u64> {
        let mut trace = Vec::new();
        let mut n = 0;
        while n < max.max(min) {
            self.sweep()?;
            n += 1;
            trace.push(self.energy()?.to_f64_lossy());
            if n >= min && trace.len() >= 8 {
                let half = &trace[trace.len() / 2..];
                let quarter = &trace[trace.len() * 3 / 4..];
                let mh = mean(half);
                let mq = mean(quarter);
                let sd = variance(quarter).sqrt();
                if (mh - mq).abs() <= sd || sd == 0.0 && mh == mq {
                    break;
                }
            }
        }
        Ok(n)
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|y| (y - m) * (y - m)).sum::<f64>() / x.len() as f64
}

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Effective sample size of a scalar trace, autocorrelations summed over
/// initial positive pairs.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let m = mean(x);
    let var = variance(x);
    if var == 0.0 {
        return n as f64;
    }
    let rho = |k: usize| (0..n - k).map(|i| (x[i] - m) * (x[i + k] - m)).sum::<f64>() / (n as f64 * var);
    let mut tau = 1.0;
    let mut k = 1;
    while k + 1 < n.min(1000) {
        let pair = rho(k) + rho(k + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        k += 2;
    }
    n as f64 / tau
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson goodness of fit; cells with expected count below 5 are pooled.
pub fn chi_square(counts: &[u64], probs: &[f64]) -> Result<ChiSquare> {
    if counts.len() != probs.len() {
        return invalid("counts and probabilities differ in length");
    }
    let n: u64 = counts.iter().sum();
    let nf = n as f64;
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let mut pooled = (0.0, 0.0);
    for (&c, &p) in counts.iter().zip(probs) {
        if p * nf >= 5.0 {
            cells.push((c as f64, p * nf));
        } else {
            pooled.0 += c as f64;
            pooled.1 += p * nf;
        }
    }
    if pooled.1 > 0.0 || pooled.0 > 0.0 {
        cells.push(pooled);
    }
    let statistic: f64 = cells
        .iter()
        .map(|&(o, e)| if e > 0.0 { (o - e) * (o - e) / e } else if o > 0.0 { f64::INFINITY } else { 0.0 })
        .sum();
    let dof = cells.len().saturating_sub(1);
    let p_value = if dof == 0 {
        1.0
    } else if statistic.is_infinite() {
        0.0
    } else {
        let dist = ChiSquared::new(dof as f64).map_err(|e| crate::Error::InvalidParameter(e.to_string()))?;
        1.0 - dist.cdf(statistic)
    };
    Ok(ChiSquare { statistic, dof, p_value })
}

/// [`chi_square`] with the statistic deflated by `ess / n`, for samples taken
/// from a correlated chain.
pub fn chi_square_effective(counts: &[u64], probs: &[f64], ess: f64) -> Result<ChiSquare> {
    let raw = chi_square(counts, probs)?;
    let n: u64 = counts.iter().sum();
    let factor = if n == 0 { 1.0 } else { (ess / n as f64).clamp(0.0, 1.0) };
    let statistic = raw.statistic * factor;
    let p_value = if raw.dof == 0 {
        1.0
    } else {
        let dist = ChiSquared::new(raw.dof as f64).map_err(|e| crate::Error::InvalidParameter(e.to_string()))?;
        1.0 - dist.cdf(statistic)
    };
    Ok(ChiSquare { statistic, dof: raw.dof, p_value })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalEstimate<F> {
    pub vertex: usize,
    pub table: MarginalTable<F>,
    pub counts: Vec<u64>,
    pub intervals: Vec<(f64, f64)>,
    pub samples: u64,
    pub burn_in: u64,
    pub ess: f64,
    pub rng: Vec<RngInfo>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub sweeps: u64,
    /// `None` applies the default rule
    pub burn_in: Option<u64>,
    pub chains: usize,
    pub seed: u64,
    /// normal quantile for the Wilson intervals
    pub z: f64,
}

impl RunOptions {
    pub fn new(sweeps: u64, seed: u64) -> Self {
        RunOptions { sweeps, burn_in: None, chains: 1, seed, z: 3.0 }
    }
}

struct ChainOutput {
    burn_in: u64,
    rng: RngInfo,
    per_vertex: Vec<(Vec<u64>, Vec<f64>)>,
    extra: Vec<u64>,
}

/// Runs `opts.chains` independent chains (streams `0..chains` of `opts.seed`)
/// and hands every post-burn-in sample to `observe`.
fn run_chains<F, O>(model: &ModelSpec<F>, ball: &TreeBall, gs: &GroundState, k: Option<Spin>, vertices: &[usize], opts: RunOptions, extra_len: usize, observe: O) -> Result<Vec<ChainOutput>>
where
    F: Real,
    O: Fn(&ChainState<'_, F>, &mut [u64]) + Sync,
{
    if opts.chains == 0 || opts.sweeps == 0 {
        return invalid("need at least one chain and one sweep");
    }
    (0..opts.chains as u64)
        .into_par_iter()
        .map(|stream| {
            let mut chain = ChainState::new(model, ball, gs, k, opts.seed, stream)?;
            let burn = match opts.burn_in {
                Some(b) => {
                    for _ in 0..b {
                        chain.sweep()?;
                    }
                    b
                }
                None => chain.burn_in(DEFAULT_BURN_IN, 10 * DEFAULT_BURN_IN.max(opts.sweeps / 10))?,
            };
            let mut per_vertex: Vec<(Vec<u64>, Vec<f64>)> =
                vertices.iter().map(|&v| (vec![0u64; chain.window.size(v)], Vec::with_capacity(opts.sweeps as usize))).collect();
            let mut extra = vec![0u64; extra_len];
            for _ in 0..opts.sweeps {
                chain.sweep()?;
                for (slot, &v) in per_vertex.iter_mut().zip(vertices) {
                    let a = chain.config.values[v];
                    let i = chain.window.index(v, a).expect("spin inside window");
                    slot.0[i] += 1;
                    slot.1.push(if a == chain.omega0.values[v] { 1.0 } else { 0.0 });
                }
                observe(&chain, &mut extra);
            }
            Ok(ChainOutput { burn_in: burn, rng: chain.rng_info(), per_vertex, extra })
        })
        .collect()
}

/// Empirical laws of `sigma_v - w0_v` at each vertex, pooled over chains.
pub fn estimate_marginals<F: Real>(model: &ModelSpec<F>, ball: &TreeBall, gs: &GroundState, k: Option<Spin>, vertices: &[usize], opts: RunOptions) -> Result<Vec<MarginalEstimate<F>>> {
    for &v in vertices {
        if !ball.is_interior(v) {
            return invalid(format!("vertex {v} is not interior"));
        }
    }
    let outs = run_chains(model, ball, gs, k, vertices, opts, 0, |_, _| {})?;
    let window = TruncationWindow::around(&model.interaction, ball, gs.config(), k)?;
    let samples = opts.sweeps * opts.chains as u64;
    let burn_in = outs.iter().map(|o| o.burn_in).max().unwrap_or(0);
    let rng: Vec<RngInfo> = outs.iter().map(|o| o.rng.clone()).collect();
    Ok(vertices
        .iter()
        .enumerate()
        .map(|(j, &v)| {
            let size = window.size(v);
            let mut counts = vec![0u64; size];
            let mut ess = 0.0;
            for o in &outs {
                for (c, x) in counts.iter_mut().zip(&o.per_vertex[j].0) {
                    *c += x;
                }
                ess += effective_sample_size(&o.per_vertex[j].1);
            }
            let deviations: Vec<Vec<Spin>> = (0..size).map(|i| vec![window.spin(v, i) - window.center(v)]).collect();
            let probs: Vec<F> = counts.iter().map(|&c| F::lit(c as f64 / samples as f64)).collect();
            let intervals = counts.iter().map(|&c| wilson_interval(c, samples, opts.z)).collect();
            MarginalEstimate {
                vertex: v,
                table: MarginalTable::new(vec![v], deviations, probs, Method::MonteCarlo, window.k),
                counts,
                intervals,
                samples,
                burn_in,
                ess,
                rng: rng.clone(),
            }
        })
        .collect())
}

/// `sum_{r != 0} exp(-|r|^p eta)`, or `(q-1) exp(-zeta)` for finite spins.
pub fn site_series<F: Real>(interaction: &Interaction<F>, eta: F) -> Result<F> {
    match interaction {
        Interaction::Psos { p } => Ok(deviation_sum(*p, eta)?.upper()),
        Interaction::FiniteSpin { q, .. } => Ok(F::from_usize_lossy(q - 1) * (-eta).exp()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub n: usize,
    pub count: u64,
    pub empirical: f64,
    pub ci_upper: f64,
    pub t0: f64,
    pub l_t0: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub vertex: usize,
    pub samples: u64,
    pub burn_in: u64,
    pub rows: Vec<TailRow>,
    pub rng: Vec<RngInfo>,
}

impl TailReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

/// Empirical `P(N_v >= N)` for `N = 1..=n_max` against `L(t0) e^{-N t0}`,
/// `t0` optimised separately for each `N`. `eta` is the activity rate.
pub fn contour_size_tail<F: Real>(model: &ModelSpec<F>, ball: &TreeBall, gs: &GroundState, k: Option<Spin>, v: usize, n_max: usize, eta: F, opts: RunOptions) -> Result<TailReport> {
    if !ball.is_interior(v) {
        return invalid(format!("vertex {v} is not interior"));
    }
    let s = site_series(&model.interaction, eta)?;
    let outs = run_chains(model, ball, gs, k, &[], opts, n_max + 1, |chain, extra| {
        let n = contour_size_at(chain.ball, &chain.config.values, &chain.omega0.values, v).min(n_max);
        for slot in extra.iter_mut().take(n + 1).skip(1) {
            *slot += 1;
        }
    })?;
    let samples = opts.sweeps * opts.chains as u64;
    let mut rows = Vec::new();
    for n in 1..=n_max {
        let count: u64 = outs.iter().map(|o| o.extra[n]).sum();
        let (t0, l) = optimal_t0(ball.degree(), s, n)?;
        let (t0, l) = (t0.to_f64_lossy(), l.to_f64_lossy());
        let bound = l * (-(n as f64) * t0).exp();
        let (_, hi) = wilson_interval(count, samples, opts.z);
        let empirical = count as f64 / samples as f64;
        rows.push(TailRow { n, count, empirical, ci_upper: hi, t0, l_t0: l, bound, pass: empirical <= bound + (hi - empirical) });
    }
    Ok(TailReport {
        vertex: v,
        samples,
        burn_in: outs.iter().map(|o| o.burn_in).max().unwrap_or(0),
        rows,
        rng: outs.into_iter().map(|o| o.rng).collect(),
    })
}

/// Whether every path from distance `r` to distance `outer` from `v` meets a
/// vertex agreeing with the ground state at distance in `r..=outer`.
pub fn has_cutset(ball: &TreeBall, omega: &[Spin], omega0: &[Spin], v: usize, r: usize, outer: usize) -> bool {
    let dist = ball.distances_from(v);
    let good = |w: usize| omega[w] == omega0[w];
    for leaf in ball.interior().filter(|&w| dist[w] == outer) {
        let path = ball.path(v, leaf);
        if !path[r..].iter().any(|&w| good(w)) {
            return false;
        }
    }
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutsetReport {
    pub vertex: usize,
    pub r: usize,
    pub outer: usize,
    pub sphere_size: usize,
    pub t0: f64,
    pub l_t0: f64,
    pub bound: f64,
    pub count: u64,
    pub samples: u64,
    pub empirical: f64,
    pub ci_lower: f64,
    pub pass: bool,
    pub burn_in: u64,
    pub rng: Vec<RngInfo>,
}

/// Empirical probability that the annulus `r..=outer` around `v` holds a
/// cutset of correct spins, against `1 - |dB(r)| L(t0) e^{-(outer - r) t0}`.
pub fn cutset_probability<F: Real>(model: &ModelSpec<F>, ball: &TreeBall, gs: &GroundState, k: Option<Spin>, v: usize, r: usize, outer: usize, eta: F, opts: RunOptions) -> Result<CutsetReport> {
    if !ball.is_interior(v) {
        return invalid(format!("vertex {v} is not interior"));
    }
    if !(r < outer) || ball.depth(v) + outer > ball.radius() {
        return invalid(format!("annulus {r}..{outer} around {v} leaves the ball"));
    }
    let dist = ball.distances_from(v);
    let sphere_size = ball.interior().filter(|&w| dist[w] == r).count();
    let s = site_series(&model.interaction, eta)?;
    let (t0, l) = optimal_t0(ball.degree(), s, outer - r)?;
    let (t0, l) = (t0.to_f64_lossy(), l.to_f64_lossy());
    let bound = 1.0 - sphere_size as f64 * l * (-((outer - r) as f64) * t0).exp();
    let outs = run_chains(model, ball, gs, k, &[], opts, 1, |chain, extra| {
        if has_cutset(chain.ball, &chain.config.values, &chain.omega0.values, v, r, outer) {
            extra[0] += 1;
        }
    })?;
    let samples = opts.sweeps * opts.chains as u64;
    let count: u64 = outs.iter().map(|o| o.extra[0]).sum();
    let empirical = count as f64 / samples as f64;
    let (lo, _) = wilson_interval(count, samples, opts.z);
    Ok(CutsetReport {
        vertex: v,
        r,
        outer,
        sphere_size,
        t0,
        l_t0: l,
        bound,
        count,
        samples,
        empirical,
        ci_lower: lo,
        pass: empirical >= bound - (empirical - lo),
        burn_in: outs.iter().map(|o| o.burn_in).max().unwrap_or(0),
        rng: outs.into_iter().map(|o| o.rng).collect(),
    })
}
