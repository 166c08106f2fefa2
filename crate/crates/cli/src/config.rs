//! Experiment configuration: one strictly validated JSON document.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use treegibbs::ground::stability_constant;
use treegibbs::model::{Interaction, ModelSpec, SitePotential, Spin};
use treegibbs::{GroundState, TreeBall};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelBlock,
    pub tree: TreeBlock,
    #[serde(default)]
    pub ground_state: GroundBlock,
    #[serde(default)]
    pub verification: VerifyBlock,
    #[serde(default)]
    pub exact: ExactBlock,
    #[serde(default)]
    pub mc: McBlock,
    #[serde(default)]
    pub cluster: ClusterBlock,
    #[serde(default)]
    pub perturbation: Option<PerturbBlock>,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Psos,
    Potts,
    FiniteSpin,
}

/// Exactly one of `beta`, `eta` (p-SOS) or `zeta` (finite spins) fixes the
/// temperature; a rate is converted through the ground state's constant.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta: Option<f64>,
    #[serde(default)]
    pub potentials: BTreeMap<usize, SitePotential<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeBlock {
    pub degree: usize,
    pub radius: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "builder", rename_all = "snake_case", deny_unknown_fields)]
pub enum GroundBlock {
    Homogeneous { value: Spin },
    Comb { base: Spin, teeth: Vec<Spin> },
    Staircase { base: Spin, increments: Vec<Spin> },
    Explicit { values: Vec<Spin> },
}

impl Default for GroundBlock {
    fn default() -> Self {
        GroundBlock::Homogeneous { value: 0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyBlock {
    pub l_max: usize,
    /// height cutoff around the ground state, ignored for finite spins
    pub k: Spin,
    pub tolerance: f64,
    pub forced_constant: Option<f64>,
    pub budget: u64,
    pub max_reported: usize,
}

impl Default for VerifyBlock {
    fn default() -> Self {
        VerifyBlock { l_max: 3, k: 2, tolerance: 1e-9, forced_constant: None, budget: 50_000_000, max_reported: 32 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExactBlock {
    pub window: Vec<usize>,
}

impl Default for ExactBlock {
    fn default() -> Self {
        ExactBlock { window: vec![0] }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McBlock {
    pub sweeps: u64,
    pub burn_in: Option<u64>,
    pub seed: u64,
    pub chains: usize,
    pub vertices: Vec<usize>,
    /// family-wise significance of the chi-square checks
    pub alpha: f64,
    /// normal quantile for the intervals
    pub z: f64,
}

impl Default for McBlock {
    fn default() -> Self {
        McBlock { sweeps: 10_000, burn_in: None, seed: 0, chains: 1, vertices: vec![0], alpha: 1e-3, z: 3.0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterBlock {
    pub order: usize,
    pub l_max: usize,
    pub a: f64,
    pub delta: f64,
    /// also sum every compatible family directly
    pub exhaustive: bool,
}

impl Default for ClusterBlock {
    fn default() -> Self {
        ClusterBlock { order: 4, l_max: 3, a: 1.0, delta: 0.5, exhaustive: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbKind {
    /// `eta_v = +-delta` on interior sites, sign alternating with depth (p-SOS, p >= 1)
    LinearField,
    /// site tables alternating between 0 and `eps` over the spin window
    Oscillation,
}

/// Size given absolutely (`value`) or as a multiple of the stability constant (`relative`).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbBlock {
    pub kind: PerturbKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    pub dir: PathBuf,
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock { dir: PathBuf::from("out") }
    }
}

/// Everything derived from the config before a command runs.
#[derive(Clone, Debug, Serialize)]
pub struct Resolved {
    pub beta: f64,
    /// ground-state constant of the unperturbed model
    pub stability_constant: f64,
    /// `beta * c`
    pub rate: f64,
    /// height cutoff actually used (`None` for finite spins)
    pub k: Option<Spin>,
    pub n_interior: usize,
    pub n_total: usize,
}

pub struct Experiment {
    pub config: ExperimentConfig,
    pub resolved: Resolved,
    pub model: ModelSpec<f64>,
    pub ball: TreeBall,
    pub gs: GroundState,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| format!("config: {e}"))
    }

    fn interaction(&self) -> Result<Interaction<f64>, String> {
        let m = &self.model;
        let unused = |name: &str, present: bool| if present { Err(format!("config: `{name}` does not apply to {:?}", m.family)) } else { Ok(()) };
        match m.family {
            Family::Psos => {
                unused("q", m.q.is_some())?;
                unused("u", m.u.is_some())?;
                unused("zeta", m.zeta.is_some())?;
                Ok(Interaction::psos(m.p.ok_or("config: p-SOS needs `p`")?))
            }
            Family::Potts => {
                unused("p", m.p.is_some())?;
                unused("u", m.u.is_some())?;
                unused("eta", m.eta.is_some())?;
                Ok(Interaction::potts(m.q.ok_or("config: Potts needs `q`")?))
            }
            Family::FiniteSpin => {
                unused("p", m.p.is_some())?;
                unused("eta", m.eta.is_some())?;
                let u = m.u.clone().ok_or("config: finite_spin needs `u`")?;
                if m.q.is_some_and(|q| q != u.len()) {
                    return Err("config: `q` disagrees with the size of `u`".into());
                }
                Ok(Interaction::FiniteSpin { q: u.len(), u })
            }
        }
    }

    pub fn ground_state(&self, ball: &TreeBall) -> treegibbs::Result<GroundState> {
        match &self.ground_state {
            GroundBlock::Homogeneous { value } => Ok(GroundState::homogeneous(ball, *value)),
            GroundBlock::Comb { base, teeth } => GroundState::comb(ball, *base, teeth),
            GroundBlock::Staircase { base, increments } => GroundState::staircase(ball, *base, increments),
            GroundBlock::Explicit { values } => GroundState::explicit(ball, values.clone()),
        }
    }

    /// Builds the ball, ground state and model, fixing beta from a rate if needed.
    pub fn resolve(self) -> Result<Experiment, String> {
        let inter = self.interaction()?;
        let ball = TreeBall::new(self.tree.degree, self.tree.radius).map_err(|e| e.to_string())?;
        let gs = self.ground_state(&ball).map_err(|e| e.to_string())?;
        let m = &self.model;
        let given = [m.beta, m.eta, m.zeta].iter().filter(|x| x.is_some()).count();
        if given != 1 {
            return Err("config: give exactly one of `beta`, `eta`, `zeta`".into());
        }
        let unit = ModelSpec::new(inter.clone(), 1.0).map_err(|e| e.to_string())?;
        let c = stability_constant(&unit, &gs, ball.degree()).map_err(|e| e.to_string())?;
        let beta = match (m.beta, m.eta.or(m.zeta)) {
            (Some(b), _) => b,
            (None, Some(rate)) if c > 0.0 => rate / c,
            (None, Some(_)) => return Err(format!("config: rate given but the ground state has constant {c} <= 0")),
            (None, None) => unreachable!(),
        };
        let model = ModelSpec::with_potentials(inter, beta, m.potentials.clone()).map_err(|e| e.to_string())?;
        let k = model.interaction.is_psos().then_some(self.verification.k);
        let resolved = Resolved { beta, stability_constant: c, rate: beta * c, k, n_interior: ball.n_interior(), n_total: ball.n_total() };
        Ok(Experiment { config: self, resolved, model, ball, gs })
    }
}
