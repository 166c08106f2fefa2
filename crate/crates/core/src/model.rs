//! Nearest-neighbour interactions, single-site perturbations, Hamiltonians with
//! boundary conditions and unnormalised Gibbs weights.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Real;
use crate::tree::TreeBall;

pub type Spin = i64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Interaction<F> {
    /// `|a - b|^p` on integer heights.
    Psos { p: F },
    /// `u[a][b]` on spins `0..q`.
    FiniteSpin { q: usize, u: Vec<Vec<F>> },
}

impl<F: Real> Interaction<F> {
    pub fn psos(p: F) -> Self {
        Interaction::Psos { p }
    }

    pub fn potts(q: usize) -> Self {
        let u = (0..q).map(|k| (0..q).map(|l| if k == l { F::zero() } else { F::one() }).collect()).collect();
        Interaction::FiniteSpin { q, u }
    }

    pub fn is_psos(&self) -> bool {
        matches!(self, Interaction::Psos { .. })
    }

    pub fn exponent(&self) -> Option<F> {
        match self {
            Interaction::Psos { p } => Some(*p),
            Interaction::FiniteSpin { .. } => None,
        }
    }

    pub fn num_states(&self) -> Option<usize> {
        match self {
            Interaction::Psos { .. } => None,
            Interaction::FiniteSpin { q, .. } => Some(*q),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Interaction::Psos { p } => {
                if !(p.is_finite() && *p > F::zero()) {
                    return invalid(format!("p-SOS exponent must be positive, got {p}"));
                }
            }
            Interaction::FiniteSpin { q, u } => {
                if *q < 2 {
                    return invalid(format!("finite-spin models need q >= 2, got {q}"));
                }
                if u.len() != *q || u.iter().any(|row| row.len() != *q) {
                    return invalid("interaction matrix must be q x q");
                }
                for (k, row) in u.iter().enumerate() {
                    for (l, &x) in row.iter().enumerate() {
                        if !(x.is_finite() && x >= F::zero()) {
                            return invalid(format!("u[{k}][{l}] = {x} must be finite and non-negative"));
                        }
                        if k == l && x != F::zero() {
                            return invalid(format!("u[{k}][{k}] must vanish"));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Smallest off-diagonal entry `u` and largest entry `U` of a finite-spin matrix.
    pub fn coupling_range(&self) -> Option<(F, F)> {
        match self {
            Interaction::Psos { .. } => None,
            Interaction::FiniteSpin { q, u } => {
                let mut lo = F::infinity();
                let mut hi = F::zero();
                for k in 0..*q {
                    for l in 0..*q {
                        hi = hi.max(u[k][l]);
                        if k != l {
                            lo = lo.min(u[k][l]);
                        }
                    }
                }
                Some((lo, hi))
            }
        }
    }

    pub fn check_spin(&self, vertex: usize, value: Spin) -> Result<()> {
        if let Interaction::FiniteSpin { q, .. } = self {
            if value < 0 || value as usize >= *q {
                return Err(Error::SpinOutOfRange { vertex, value });
            }
        }
        Ok(())
    }

    pub fn pair_energy(&self, a: Spin, b: Spin) -> Result<F> {
        self.check_spin(usize::MAX, a)?;
        self.check_spin(usize::MAX, b)?;
        Ok(self.pair_unchecked(a, b))
    }

    pub(crate) fn pair_unchecked(&self, a: Spin, b: Spin) -> F {
        match self {
            Interaction::Psos { p } => {
                let n = (a - b).abs();
                if n == 0 {
                    F::zero()
                } else {
                    F::from_i64_lossy(n).powf(*p)
                }
            }
            Interaction::FiniteSpin { u, .. } => u[a as usize][b as usize],
        }
    }
}

/// Pair energies with `|n|^p` cached for small increments; used in hot loops.
#[derive(Clone, Debug)]
pub struct PairTable<F> {
    interaction: Interaction<F>,
    powers: Vec<F>,
}

impl<F: Real> PairTable<F> {
    const CACHE: usize = 512;

    pub fn new(interaction: &Interaction<F>) -> Self {
        let powers = match interaction {
            Interaction::Psos { p } => (0..Self::CACHE)
                .map(|n| if n == 0 { F::zero() } else { F::from_usize_lossy(n).powf(*p) })
                .collect(),
            Interaction::FiniteSpin { .. } => Vec::new(),
        };
        PairTable { interaction: interaction.clone(), powers }
    }

    /// `|n|^p` for p-SOS; the indicator `n != 0` for finite spins.
    #[inline]
    pub fn power(&self, n: Spin) -> F {
        let n = n.unsigned_abs() as usize;
        match &self.interaction {
            Interaction::Psos { p } => {
                if n < self.powers.len() {
                    self.powers[n]
                } else {
                    F::from_usize_lossy(n).powf(*p)
                }
            }
            Interaction::FiniteSpin { .. } => {
                if n == 0 {
                    F::zero()
                } else {
                    F::one()
                }
            }
        }
    }

    #[inline]
    pub fn pair(&self, a: Spin, b: Spin) -> F {
        match &self.interaction {
            Interaction::Psos { .. } => self.power(a - b),
            Interaction::FiniteSpin { u, .. } => u[a as usize][b as usize],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SitePotential<F> {
    /// `eta * a`, a random-field term.
    Linear { eta: F },
    /// `values[a - offset]`; spins outside the table are rejected.
    Table { offset: Spin, values: Vec<F> },
}

impl<F: Real> SitePotential<F> {
    pub fn eval(&self, a: Spin) -> Option<F> {
        match self {
            SitePotential::Linear { eta } => Some(*eta * F::from_i64_lossy(a)),
            SitePotential::Table { offset, values } => {
                let i = a.checked_sub(*offset)?;
                usize::try_from(i).ok().and_then(|i| values.get(i).copied())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    /// `sup_v sup_{k,l} |Psi_v(k) - Psi_v(l)|`
    Oscillation,
    /// `sup_v |eta_v|` for purely linear fields on p-SOS
    LinearField,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Perturbation<F> {
    pub kind: PerturbationKind,
    pub value: F,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    /// Edges into the shell count, with the shell spins as boundary condition.
    #[default]
    Fixed,
    /// Only edges between interior vertices count.
    Free,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec<F> {
    pub interaction: Interaction<F>,
    pub beta: F,
    #[serde(default = "BTreeMap::new")]
    pub potentials: BTreeMap<usize, SitePotential<F>>,
}

impl<F: Real> ModelSpec<F> {
    pub fn new(interaction: Interaction<F>, beta: F) -> Result<Self> {
        Self::with_potentials(interaction, beta, BTreeMap::new())
    }

    pub fn with_potentials(
        interaction: Interaction<F>,
        beta: F,
        potentials: BTreeMap<usize, SitePotential<F>>,
    ) -> Result<Self> {
        let m = ModelSpec { interaction, beta, potentials };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.interaction.validate()?;
        if !(self.beta.is_finite() && self.beta > F::zero()) {
            return invalid(format!("inverse temperature must be positive, got {}", self.beta));
        }
        if let Interaction::Psos { p } = &self.interaction {
            let has_field = self
                .potentials
                .values()
                .any(|s| matches!(s, SitePotential::Linear { eta } if *eta != F::zero()));
            if has_field && *p < F::one() {
                return invalid("p-SOS with a linear field is only defined for p >= 1");
            }
        }
        Ok(())
    }

    pub fn with_beta(&self, beta: F) -> Result<Self> {
        let mut m = self.clone();
        m.beta = beta;
        m.validate()?;
        Ok(m)
    }

    pub fn pair_table(&self) -> PairTable<F> {
        PairTable::new(&self.interaction)
    }

    pub fn pair_energy(&self, a: Spin, b: Spin) -> Result<F> {
        self.interaction.pair_energy(a, b)
    }

    /// `Psi_v(a)`, zero where no potential is attached.
    pub fn site_energy(&self, v: usize, a: Spin) -> Result<F> {
        match self.potentials.get(&v) {
            None => Ok(F::zero()),
            Some(s) => s.eval(a).ok_or(Error::SpinOutOfRange { vertex: v, value: a }),
        }
    }

    pub fn has_potentials(&self) -> bool {
        !self.potentials.is_empty()
    }

    pub fn hamiltonian(&self, ball: &TreeBall, config: &SpinConfig) -> Result<F> {
        self.hamiltonian_with(ball, config, BoundaryMode::Fixed)
    }

    pub fn hamiltonian_with(&self, ball: &TreeBall, config: &SpinConfig, mode: BoundaryMode) -> Result<F> {
        config.check(ball, &self.interaction)?;
        let s = &config.values;
        let mut h = F::zero();
        for (a, b) in ball.edges() {
            if mode == BoundaryMode::Free && !ball.is_interior(b) {
                continue;
            }
            h = h + self.interaction.pair_unchecked(s[a], s[b]);
        }
        for v in ball.interior() {
            h = h + self.site_energy(v, s[v])?;
        }
        Ok(h)
    }

    /// `H(omega) - H(omega0)`; the two configurations must share the shell.
    pub fn excess_energy(&self, ball: &TreeBall, omega: &SpinConfig, omega0: &SpinConfig) -> Result<F> {
        omega.check(ball, &self.interaction)?;
        omega0.check(ball, &self.interaction)?;
        for v in ball.shell() {
            if omega.values[v] != omega0.values[v] {
                return Err(Error::ShellMismatch(v));
            }
        }
        let full = self.hamiltonian(ball, omega)? - self.hamiltonian(ball, omega0)?;

        let (s, s0) = (&omega.values, &omega0.values);
        let mut local = F::zero();
        for (a, b) in ball.edges() {
            if s[a] != s0[a] || s[b] != s0[b] {
                local = local + self.interaction.pair_unchecked(s[a], s[b]) - self.interaction.pair_unchecked(s0[a], s0[b]);
            }
        }
        for v in ball.interior() {
            if s[v] != s0[v] {
                local = local + self.site_energy(v, s[v])? - self.site_energy(v, s0[v])?;
            }
        }
        let scale = F::one() + full.abs();
        debug_assert!((full - local).abs() <= F::lit(1e-9) * scale, "excess energy not local: {full} vs {local}");
        Ok(local)
    }

    /// Unnormalised Gibbs weight `exp(-beta * energy)`.
    pub fn boltzmann_weight(&self, energy: F) -> F {
        (-self.beta * energy).exp()
    }

    pub fn kernel_weight(&self, ball: &TreeBall, config: &SpinConfig) -> Result<F> {
        Ok(self.boltzmann_weight(self.hamiltonian(ball, config)?))
    }

    /// Size of the single-site perturbation. Purely linear fields on a p-SOS model
    /// report `sup |eta_v|`; otherwise the oscillation over each site's alphabet.
    /// `alphabet_width` is `max - min` of the spins a linear term is evaluated on
    /// (taken as `q - 1` for finite spins).
    pub fn perturbation_oscillation(&self, alphabet_width: Option<Spin>) -> Perturbation<F> {
        let all_linear = !self.potentials.is_empty()
            && self.potentials.values().all(|s| matches!(s, SitePotential::Linear { .. }));
        if all_linear && self.interaction.is_psos() {
            let delta = self
                .potentials
                .values()
                .map(|s| match s {
                    SitePotential::Linear { eta } => eta.abs(),
                    SitePotential::Table { .. } => F::zero(),
                })
                .fold(F::zero(), F::max);
            return Perturbation { kind: PerturbationKind::LinearField, value: delta };
        }
        let width = alphabet_width.or(self.interaction.num_states().map(|q| q as Spin - 1));
        let eps = self
            .potentials
            .values()
            .map(|s| match s {
                SitePotential::Linear { eta } => match width {
                    Some(w) => eta.abs() * F::from_i64_lossy(w),
                    None => F::infinity(),
                },
                SitePotential::Table { values, .. } => {
                    let hi = values.iter().copied().fold(F::neg_infinity(), F::max);
                    let lo = values.iter().copied().fold(F::infinity(), F::min);
                    if values.is_empty() {
                        F::zero()
                    } else {
                        hi - lo
                    }
                }
            })
            .fold(F::zero(), F::max);
        Perturbation { kind: PerturbationKind::Oscillation, value: eps }
    }
}

/// Spins on the interior and the boundary shell, indexed like the ball.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpinConfig {
    pub values: Vec<Spin>,
}

impl SpinConfig {
    pub fn new(values: Vec<Spin>) -> Self {
        SpinConfig { values }
    }

    pub fn constant(ball: &TreeBall, value: Spin) -> Self {
        SpinConfig { values: vec![value; ball.n_total()] }
    }

    pub fn check<F: Real>(&self, ball: &TreeBall, interaction: &Interaction<F>) -> Result<()> {
        if self.values.len() != ball.n_total() {
            return Err(Error::ConfigSize { expected: ball.n_total(), got: self.values.len() });
        }
        for (v, &a) in self.values.iter().enumerate() {
            interaction.check_spin(v, a).map_err(|_| Error::SpinOutOfRange { vertex: v, value: a })?;
        }
        Ok(())
    }

    pub fn get(&self, v: usize) -> Spin {
        self.values[v]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn psos(p: f64, beta: f64) -> ModelSpec<f64> {
        ModelSpec::new(Interaction::psos(p), beta).unwrap()
    }

    #[test]
    fn pair_energies() {
        assert_eq!(psos(2.0, 1.0).pair_energy(3, 1).unwrap(), 4.0);
        let potts = ModelSpec::new(Interaction::potts(3), 1.0).unwrap();
        assert_eq!(potts.pair_energy(0, 0).unwrap(), 0.0);
        assert_eq!(potts.pair_energy(0, 2).unwrap(), 1.0);
        assert!(potts.pair_energy(0, 3).is_err());
        assert!((psos(0.5, 1.0).pair_energy(0, 4).unwrap() - 2.0).abs() < 1e-15);
        let t = PairTable::new(&Interaction::psos(1.5f64));
        assert!((t.pair(-700, 3) - 703f64.powf(1.5)).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_models() {
        assert!(ModelSpec::new(Interaction::psos(0.0f64), 1.0).is_err());
        assert!(ModelSpec::new(Interaction::psos(1.0f64), 0.0).is_err());
        let bad = Interaction::FiniteSpin { q: 2, u: vec![vec![0.5, 1.0], vec![1.0, 0.0]] };
        assert!(ModelSpec::new(bad, 1.0f64).is_err());
        let neg = Interaction::FiniteSpin { q: 2, u: vec![vec![0.0, -1.0], vec![1.0, 0.0]] };
        assert!(ModelSpec::new(neg, 1.0f64).is_err());
        let mut pot = BTreeMap::new();
        pot.insert(0, SitePotential::Linear { eta: 0.1 });
        assert!(ModelSpec::with_potentials(Interaction::psos(0.5f64), 1.0, pot.clone()).is_err());
        assert!(ModelSpec::with_potentials(Interaction::psos(1.0f64), 1.0, pot).is_ok());
    }

    #[test]
    fn hamiltonian_examples() {
        let ball = TreeBall::new(2, 0).unwrap();
        let mut c = SpinConfig::constant(&ball, 0);
        c.values[0] = 2;
        assert_eq!(psos(1.0, 1.0).hamiltonian(&ball, &c).unwrap(), 6.0);
        assert_eq!(psos(1.0, 1.0).hamiltonian_with(&ball, &c, BoundaryMode::Free).unwrap(), 0.0);

        let mut pot = BTreeMap::new();
        pot.insert(0, SitePotential::Linear { eta: 0.1 });
        let field = ModelSpec::with_potentials(Interaction::psos(1.0f64), 1.0, pot).unwrap();
        assert!((field.hamiltonian(&ball, &c).unwrap() - 6.2).abs() < 1e-12);

        let ball4 = TreeBall::new(4, 1).unwrap();
        let potts = ModelSpec::new(Interaction::potts(3), 1.0f64).unwrap();
        assert_eq!(potts.hamiltonian(&ball4, &SpinConfig::constant(&ball4, 0)).unwrap(), 0.0);
        assert!(psos(1.0, 1.0).hamiltonian(&ball4, &SpinConfig::new(vec![0; 3])).is_err());
    }

    #[test]
    fn excess_energy_examples() {
        let ball = TreeBall::new(4, 2).unwrap();
        let potts = ModelSpec::new(Interaction::potts(3), 1.0f64).unwrap();
        let w0 = SpinConfig::constant(&ball, 0);
        assert_eq!(potts.excess_energy(&ball, &w0, &w0).unwrap(), 0.0);
        let mut w = w0.clone();
        w.values[3] = 1;
        assert_eq!(potts.excess_energy(&ball, &w, &w0).unwrap(), 5.0);
        // brute-force Hamiltonian difference agrees
        let full = potts.hamiltonian(&ball, &w).unwrap() - potts.hamiltonian(&ball, &w0).unwrap();
        assert_eq!(full, 5.0);

        let ball2 = TreeBall::new(2, 1).unwrap();
        let z = SpinConfig::constant(&ball2, 0);
        let mut up = z.clone();
        up.values[0] = 3;
        assert_eq!(psos(2.0, 1.0).excess_energy(&ball2, &up, &z).unwrap(), 27.0);

        let mut shell = z.clone();
        shell.values[ball2.n_total() - 1] = 1;
        assert!(matches!(psos(2.0, 1.0).excess_energy(&ball2, &shell, &z), Err(Error::ShellMismatch(_))));
    }

    #[test]
    fn weights() {
        let m = psos(1.0, 2.0);
        assert_eq!(m.boltzmann_weight(0.0), 1.0);
        assert!((m.boltzmann_weight(3.0) - (-6.0f64).exp()).abs() < 1e-18);
    }

    #[test]
    fn oscillation() {
        let potts = ModelSpec::new(Interaction::potts(3), 1.0f64).unwrap();
        assert_eq!(potts.perturbation_oscillation(None).value, 0.0);
        let mut pot = BTreeMap::new();
        for v in 0..5 {
            pot.insert(v, SitePotential::Table { offset: 0, values: vec![0.0, 0.2, 0.05] });
        }
        let m = ModelSpec::with_potentials(Interaction::potts(3), 1.0f64, pot).unwrap();
        let p = m.perturbation_oscillation(None);
        assert_eq!(p.kind, PerturbationKind::Oscillation);
        assert!((p.value - 0.2).abs() < 1e-15);

        let mut pot = BTreeMap::new();
        pot.insert(0, SitePotential::Linear { eta: -0.1 });
        pot.insert(1, SitePotential::Linear { eta: 0.3 });
        let m = ModelSpec::with_potentials(Interaction::psos(1.0f64), 1.0, pot).unwrap();
        let p = m.perturbation_oscillation(Some(8));
        assert_eq!(p.kind, PerturbationKind::LinearField);
        assert!((p.value - 0.3).abs() < 1e-15);
    }

    #[test]
    fn generic_over_f32() {
        let ball = TreeBall::new(2, 0).unwrap();
        let m = ModelSpec::new(Interaction::psos(2.0f32), 1.0f32).unwrap();
        let mut c = SpinConfig::constant(&ball, 0);
        c.values[0] = 1;
        assert_eq!(m.hamiltonian(&ball, &c).unwrap(), 3.0f32);
    }

    fn arb_config(n: usize) -> impl Strategy<Value = Vec<i64>> {
        proptest::collection::vec(-3i64..=3, n)
    }

    proptest! {
        #[test]
        fn gauge_invariance(values in arb_config(17), shift in -5i64..=5, p in 0.3f64..3.0) {
            let ball = TreeBall::new(3, 1).unwrap();
            let m = psos(p, 1.0);
            let c = SpinConfig::new(values.clone());
            let shifted = SpinConfig::new(values.iter().map(|x| x + shift).collect());
            let (h, hs) = (m.hamiltonian(&ball, &c).unwrap(), m.hamiltonian(&ball, &shifted).unwrap());
            prop_assert!((h - hs).abs() < 1e-9 * (1.0 + h.abs()));
        }

        #[test]
        fn excess_antisymmetric(a in arb_config(17), b in arb_config(5), p in 0.3f64..3.0) {
            let ball = TreeBall::new(3, 1).unwrap();
            let m = psos(p, 1.0);
            let mut x = a.clone();
            x[..5].copy_from_slice(&b[..5]);
            // shells agree: 5 interior vertices, 12 shell vertices
            let (w, w0) = (SpinConfig::new(x), SpinConfig::new(a));
            let e1 = m.excess_energy(&ball, &w, &w0).unwrap();
            let e2 = m.excess_energy(&ball, &w0, &w).unwrap();
            prop_assert!((e1 + e2).abs() < 1e-9);
        }

        #[test]
        fn locality(values in arb_config(17), v in 0usize..5, new in -4i64..=4) {
            let ball = TreeBall::new(3, 1).unwrap();
            let mut pot = BTreeMap::new();
            pot.insert(v, SitePotential::Linear { eta: 0.37 });
            let m = ModelSpec::with_potentials(Interaction::psos(1.0f64), 1.0, pot).unwrap();
            let c = SpinConfig::new(values.clone());
            let mut c2 = c.clone();
            c2.values[v] = new;
            let full = m.hamiltonian(&ball, &c2).unwrap() - m.hamiltonian(&ball, &c).unwrap();
            let mut incident = m.site_energy(v, new).unwrap() - m.site_energy(v, values[v]).unwrap();
            for w in ball.neighbors(v) {
                incident += m.pair_energy(new, values[w]).unwrap() - m.pair_energy(values[v], values[w]).unwrap();
            }
            prop_assert!((full - incident).abs() < 1e-9);
        }
    }
}
