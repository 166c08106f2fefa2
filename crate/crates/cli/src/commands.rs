use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::{json, Value};
use treegibbs::contour::VerifyOptions;
use treegibbs::exact::{concentration_check, family_peierls_constant};
use treegibbs::ground::{c_p, StabilityReport};
use treegibbs::mc::{chi_square_effective, estimate_marginals, RunOptions, RNG_ALGORITHM};
use treegibbs::model::{Interaction, ModelSpec, SitePotential, Spin};
use treegibbs::polymer::bz::{bz_condition_check_finite, bz_condition_check_psos, eta_threshold, threshold_scale_finite, BzParams};
use treegibbs::polymer::series::{peierls_constant, peierls_constant_finite};
use treegibbs::{verify_excess_bound, Error, PolymerSystem, TreeRecursion};

use crate::config::{Experiment, PerturbKind};

pub enum Failure {
    Usage(String),
    Budget(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::BudgetExceeded { .. } => Failure::Budget(e.to_string()),
            other => Failure::Usage(other.to_string()),
        }
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

pub struct Output {
    pub passed: bool,
    pub result: Value,
    pub warnings: Vec<String>,
    /// file name under `tables/` and its CSV bytes
    pub tables: Vec<(String, Vec<u8>)>,
}

type CmdResult = Result<Output, Failure>;

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("report types serialize")
}

fn csv_table(header: &[&str], rows: Vec<Vec<String>>) -> Result<Vec<u8>, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| Failure::Usage(e.to_string()))
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

fn bz_params(exp: &Experiment) -> BzParams<f64> {
    BzParams { a: exp.config.cluster.a, delta: exp.config.cluster.delta }
}

/// Peierls constant at the model's own rate, `None` if the series diverges there.
fn peierls_at_rate(exp: &Experiment) -> Option<f64> {
    family_peierls_constant(&exp.model, exp.ball.degree(), exp.resolved.rate).ok()
}

pub fn constants(exp: &Experiment) -> CmdResult {
    let d = exp.ball.degree();
    let rate = exp.resolved.rate;
    let params = bz_params(exp);
    let stability = StabilityReport::compute(&exp.model, &exp.ball, &exp.gs)?;
    let mut warnings = Vec::new();
    let mut rows = vec![
        vec!["stability_constant".into(), num(stability.stability_constant)],
        vec!["minimal_degree".into(), stability.minimal_degree.to_string()],
        vec!["rate".into(), num(rate)],
    ];
    let family = match &exp.model.interaction {
        Interaction::Psos { p } => {
            let eta0 = eta_threshold(d, *p, params)?;
            let cp = c_p(*p)?;
            rows.push(vec!["c_p".into(), num(cp)]);
            rows.push(vec!["eta0".into(), num(eta0)]);
            let peierls = peierls_constant(d, *p, rate).ok();
            let bz = bz_condition_check_psos(d, *p, rate, params).ok();
            json!({ "c_p": cp, "eta0": eta0, "peierls_constant": peierls, "bz": bz })
        }
        Interaction::FiniteSpin { q, .. } => {
            let scale = threshold_scale_finite(d, *q, stability.stability_constant, params)?;
            rows.push(vec!["zeta0".into(), num(scale.zeta0)]);
            rows.push(vec!["log_q_minus_1".into(), num(scale.log_q_minus_1)]);
            let peierls = peierls_constant_finite(d, *q, rate).ok();
            let bz = bz_condition_check_finite(d, *q, rate, params).ok();
            json!({ "threshold": scale, "scale_note": "zeta0 grows on the order of log(q-1)", "peierls_constant": peierls, "bz": bz })
        }
    };
    if family["peierls_constant"].is_null() {
        warnings.push(format!("Peierls series diverges at rate {rate}"));
    }
    if stability.stability_constant <= 0.0 {
        warnings.push(format!("ground state is not stable at degree {d}"));
    }
    let table = csv_table(&["quantity", "value"], rows)?;
    Ok(Output {
        passed: true,
        result: json!({ "stability": stability, "family": family }),
        warnings,
        tables: vec![("constants.csv".into(), table)],
    })
}

fn verify_options(exp: &Experiment) -> VerifyOptions<f64> {
    let v = &exp.config.verification;
    let mut opts = VerifyOptions::new(v.l_max, exp.resolved.k);
    opts.tolerance = v.tolerance;
    opts.forced_constant = v.forced_constant;
    opts.budget = v.budget;
    opts.max_reported = v.max_reported;
    opts
}

fn run_verify(exp: &Experiment, model: &ModelSpec<f64>) -> CmdResult {
    let report = verify_excess_bound(model, &exp.ball, &exp.gs, &verify_options(exp))?;
    let mut warnings = Vec::new();
    if report.vacuous {
        warnings.push("no contours within l_max: verification is vacuous".into());
    }
    let rows = report
        .by_check
        .iter()
        .map(|(k, r)| vec![to_value(k).as_str().unwrap_or_default().to_string(), num(r.min_slack), r.violations.to_string()])
        .collect();
    let table = csv_table(&["check", "min_slack", "violations"], rows)?;
    // without a positive constant the ground state is outside the stable class
    let unstable = report.stability_constant.is_none();
    let passed = report.passed() && !unstable;
    let mut result = json!({ "passed": passed, "report": report });
    if unstable {
        let min_degree = StabilityReport::compute(model, &exp.ball, &exp.gs)?.minimal_degree;
        warnings.push(format!("no positive stability constant at degree {}", exp.ball.degree()));
        result["counterexamples"] = json!([{
            "check": "stability_constant",
            "degree": exp.ball.degree(),
            "minimal_degree": min_degree,
            "tightest_contour": report.argmin_contour,
            "min_slack": report.min_slack,
        }]);
    } else if !passed {
        result["counterexamples"] = to_value(&report.violations);
    }
    Ok(Output { passed, result, warnings, tables: vec![("slack.csv".into(), table)] })
}

pub fn verify(exp: &Experiment) -> CmdResult {
    run_verify(exp, &exp.model)
}

pub fn exact(exp: &Experiment) -> CmdResult {
    let rec = TreeRecursion::around(&exp.model, &exp.ball, &exp.gs, exp.resolved.k)?;
    let window = &exp.config.exact.window;
    let table = rec.window_marginal(window)?;
    let mut buf = Vec::new();
    table.write_csv(&mut buf)?;
    let mut tables = vec![("marginal.csv".to_string(), buf)];
    let mut warnings = Vec::new();
    let mut concentration = BTreeMap::new();
    let mut passed = true;
    if peierls_at_rate(exp).is_some() {
        for &v in window {
            let t = concentration_check(&rec, v, exp.resolved.rate)?;
            passed &= t.passes(1e-12);
            let mut buf = Vec::new();
            t.write_csv(&mut buf)?;
            tables.push((format!("concentration_v{v}.csv"), buf));
            concentration.insert(v, t);
        }
    } else {
        warnings.push(format!("Peierls series diverges at rate {}: no concentration bounds", exp.resolved.rate));
    }
    Ok(Output {
        passed,
        result: json!({ "log_partition": rec.log_partition(), "marginal": table, "concentration": concentration }),
        warnings,
        tables,
    })
}

pub fn mc(exp: &Experiment) -> CmdResult {
    let m = &exp.config.mc;
    let opts = RunOptions { sweeps: m.sweeps, burn_in: m.burn_in, chains: m.chains, seed: m.seed, z: m.z };
    let estimates = estimate_marginals(&exp.model, &exp.ball, &exp.gs, exp.resolved.k, &m.vertices, opts)?;
    let rec = TreeRecursion::around(&exp.model, &exp.ball, &exp.gs, exp.resolved.k)?;
    let level = m.alpha / m.vertices.len().max(1) as f64;
    let mut tables = Vec::new();
    let mut checks = Vec::new();
    let mut passed = true;
    for est in &estimates {
        let v = est.vertex;
        let center = rec.window().center(v);
        let exact: Vec<f64> = est.table.deviations.iter().map(|d| rec.prob(v, center + d[0])).collect();
        let chi = chi_square_effective(&est.counts, &exact, est.ess)?;
        let ok = chi.p_value >= level;
        passed &= ok;
        let rows = (0..est.counts.len())
            .map(|i| {
                vec![
                    est.table.deviations[i][0].to_string(),
                    est.counts[i].to_string(),
                    num(est.table.probabilities[i]),
                    num(est.intervals[i].0),
                    num(est.intervals[i].1),
                    num(exact[i]),
                ]
            })
            .collect();
        tables.push((format!("mc_v{v}.csv"), csv_table(&["deviation", "count", "estimate", "lower", "upper", "exact"], rows)?));
        checks.push(json!({ "vertex": v, "chi_square": chi, "level": level, "pass": ok }));
    }
    Ok(Output {
        passed,
        result: json!({ "rng_algorithm": RNG_ALGORITHM, "estimates": estimates, "checks": checks }),
        warnings: Vec::new(),
        tables,
    })
}

pub fn cluster(exp: &Experiment) -> CmdResult {
    let c = &exp.config.cluster;
    let params = bz_params(exp);
    let sys = PolymerSystem::build(&exp.model, &exp.ball, &exp.gs, c.l_max, exp.resolved.k)?;
    let rate = sys.activity_rate();
    let eta0 = match &exp.model.interaction {
        Interaction::Psos { p } => eta_threshold(exp.ball.degree(), *p, params)?,
        Interaction::FiniteSpin { q, .. } => treegibbs::polymer::bz::zeta_threshold(exp.ball.degree(), *q, params)?,
    };
    let sums = sys.cluster_sums(c.order)?;
    let exhaustive = if c.exhaustive { Some(sys.log_partition_exhaustive()?) } else { None };
    let mut warnings = Vec::new();
    if rate <= eta0 {
        warnings.push(format!("activity rate {rate} <= threshold {eta0}: no remainder bound"));
    }
    let violations = sys.activity_violations(exp.resolved.rate, 1e-12);
    let mut passed = violations == 0;
    let mut partial = 0.0;
    let mut rows = Vec::new();
    let mut orders = Vec::new();
    for (n, s) in sums.iter().enumerate() {
        partial += s;
        let bound = sys.remainder_bound(n + 1, rate, eta0, params.a, params.delta)?;
        let err = exhaustive.map(|x| (partial - x).abs());
        if let (Some(e), Some(b), Some(x)) = (err, bound, exhaustive) {
            passed &= e <= b + 8.0 * f64::EPSILON * x.abs();
        }
        let opt = |x: Option<f64>| x.map(num).unwrap_or_default();
        rows.push(vec![(n + 1).to_string(), num(*s), num(partial), opt(bound), opt(err)]);
        orders.push(json!({ "order": n + 1, "term": s, "partial": partial, "remainder_bound": bound, "error": err }));
    }
    let table = csv_table(&["order", "term", "partial", "remainder_bound", "error"], rows)?;
    Ok(Output {
        passed,
        result: json!({
            "polymers": sys.len(),
            "complete": sys.is_complete(),
            "activity_rate": rate,
            "activity_violations": violations,
            "threshold": eta0,
            "log_partition_exhaustive": exhaustive,
            "orders": orders,
        }),
        warnings,
        tables: vec![("cluster.csv".into(), table)],
    })
}

/// Site potentials of the requested kind and size on every interior vertex.
fn perturbation_potentials(exp: &Experiment, kind: PerturbKind, size: f64) -> BTreeMap<usize, SitePotential<f64>> {
    let w0 = exp.gs.values();
    exp.ball
        .interior()
        .map(|v| {
            let pot = match kind {
                PerturbKind::LinearField => {
                    let sign = if exp.ball.depth(v) % 2 == 0 { 1.0 } else { -1.0 };
                    SitePotential::Linear { eta: sign * size }
                }
                PerturbKind::Oscillation => {
                    let (offset, len) = match (exp.model.interaction.num_states(), exp.resolved.k) {
                        (Some(q), _) => (0, q),
                        (None, k) => {
                            let k = k.unwrap_or(0);
                            (w0[v] - k, (2 * k + 1) as usize)
                        }
                    };
                    let values = (0..len).map(|i| if (i as Spin + offset + v as Spin) % 2 == 0 { 0.0 } else { size }).collect();
                    SitePotential::Table { offset, values }
                }
            };
            (v, pot)
        })
        .collect()
}

pub fn perturb(exp: &Experiment) -> CmdResult {
    let Some(block) = &exp.config.perturbation else {
        return Err(Failure::Usage("config: perturb needs a `perturbation` block".into()));
    };
    let c = exp.resolved.stability_constant;
    let size = match (block.value, block.relative) {
        (Some(x), None) => x,
        (None, Some(r)) => r * c,
        _ => return Err(Failure::Usage("config: give exactly one of perturbation `value`, `relative`".into())),
    };
    let mut pots = exp.model.potentials.clone();
    pots.extend(perturbation_potentials(exp, block.kind, size));
    let model = ModelSpec::with_potentials(exp.model.interaction.clone(), exp.model.beta, pots)?;
    let stability = StabilityReport::compute(&model, &exp.ball, &exp.gs)?;
    let reduced = stability.reduced.expect("perturbed model has potentials");
    let mut out = if reduced.stable {
        run_verify(exp, &model)?
    } else {
        Output {
            passed: false,
            result: json!({ "passed": false }),
            warnings: vec![format!("reduced constant {} <= 0: stability lost", reduced.value)],
            tables: Vec::new(),
        }
    };
    out.result["perturbation_size"] = json!(size);
    out.result["reduced"] = to_value(&reduced);
    out.result["stability_lost"] = json!(!reduced.stable);
    Ok(out)
}
