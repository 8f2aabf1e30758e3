//! Mass-action reaction networks.
//!
//! States are concentrations (molecule count divided by the volume `V`);
//! the volume only enters in the simulators.

mod config;
mod presets;

pub use config::{load_network, network_to_config};
pub use presets::{preset, Preset};

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One reaction `Σ c_i S_i → Σ c'_i S_i` with rate constant `κ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reaction {
    consumed: Vec<u32>,
    produced: Vec<u32>,
    rate: f64,
    #[serde(skip)]
    change: Vec<i32>,
}

impl Reaction {
    pub fn new(consumed: Vec<u32>, produced: Vec<u32>, rate: f64) -> Result<Self> {
        if consumed.len() != produced.len() {
            return Err(Error::InvalidNetwork(format!(
                "consumed has {} entries but produced has {}",
                consumed.len(),
                produced.len()
            )));
        }
        if !(rate.is_finite() && rate > 0.0) {
            return Err(Error::InvalidNetwork(format!(
                "rate constant must be positive and finite, got {rate}"
            )));
        }
        let change: Vec<i32> = consumed
            .iter()
            .zip(&produced)
            .map(|(&c, &p)| p as i32 - c as i32)
            .collect();
        if change.iter().all(|&l| l == 0) {
            return Err(Error::InvalidNetwork(
                "reaction has no net effect (produced == consumed)".into(),
            ));
        }
        Ok(Reaction {
            consumed,
            produced,
            rate,
            change,
        })
    }

    pub fn consumed(&self) -> &[u32] {
        &self.consumed
    }

    pub fn produced(&self) -> &[u32] {
        &self.produced
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Net change `l = c' − c`.
    pub fn change(&self) -> &[i32] {
        &self.change
    }

    /// Reaction order `Σ c_i`.
    pub fn order(&self) -> u32 {
        self.consumed.iter().sum()
    }

    /// `κ ∏ x_i^{c_i}`. A reaction with no reactants has constant propensity κ.
    #[inline]
    pub fn propensity(&self, x: &[f64]) -> f64 {
        let mut f = self.rate;
        for (&c, &xi) in self.consumed.iter().zip(x) {
            match c {
                0 => {}
                1 => f *= xi,
                2 => f *= xi * xi,
                c => f *= xi.powi(c as i32),
            }
        }
        f
    }
}

/// An immutable mass-action network.
#[derive(Debug, Clone, PartialEq)]
pub struct ReactionNetwork {
    name: String,
    species: Vec<String>,
    reactions: Vec<Reaction>,
}

impl ReactionNetwork {
    pub fn new(name: impl Into<String>, species: Vec<String>, reactions: Vec<Reaction>) -> Result<Self> {
        if species.is_empty() {
            return Err(Error::InvalidNetwork("at least one species is required".into()));
        }
        if reactions.is_empty() {
            return Err(Error::InvalidNetwork("at least one reaction is required".into()));
        }
        for (k, r) in reactions.iter().enumerate() {
            if r.consumed.len() != species.len() {
                return Err(Error::InvalidNetwork(format!(
                    "reaction {k} has {} stoichiometric entries, expected {}",
                    r.consumed.len(),
                    species.len()
                )));
            }
        }
        Ok(ReactionNetwork {
            name: name.into(),
            species,
            reactions,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn species(&self) -> &[String] {
        &self.species
    }

    pub fn reactions(&self) -> &[Reaction] {
        &self.reactions
    }

    /// Number of species `d`.
    pub fn dim(&self) -> usize {
        self.species.len()
    }

    /// Number of reactions `K`.
    pub fn num_reactions(&self) -> usize {
        self.reactions.len()
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: len,
            });
        }
        Ok(())
    }

    /// Propensities `f_k(x)` for every reaction.
    pub fn propensities(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        let mut out = vec![0.0; self.num_reactions()];
        self.propensities_into(x, &mut out);
        Ok(out)
    }

    /// Unchecked variant of [`propensities`](Self::propensities) writing into
    /// a caller buffer of length `K`.
    #[inline]
    pub fn propensities_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim());
        for (o, r) in out.iter_mut().zip(&self.reactions) {
            *o = r.propensity(x);
        }
    }

    /// Stoichiometric change `l_k` of reaction `k` (zero-based).
    pub fn stoich_vector(&self, k: usize) -> Result<&[i32]> {
        self.reactions.get(k).map(Reaction::change).ok_or(Error::ReactionIndex {
            index: k,
            count: self.num_reactions(),
        })
    }

    /// Deterministic rate equation `dx/dt = Σ_k l_k f_k(x)`.
    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for r in &self.reactions {
            let f = r.propensity(x);
            for (o, &l) in out.iter_mut().zip(&r.change) {
                *o += f64::from(l) * f;
            }
        }
    }

    /// Integrate the rate equations with classical RK4.
    pub fn integrate_ode(&self, x0: &[f64], dt: f64, steps: usize) -> Result<Vec<f64>> {
        self.check_dim(x0.len())?;
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!("ODE step must be positive, got {dt}")));
        }
        let d = self.dim();
        let mut x = x0.to_vec();
        let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
            (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
        for _ in 0..steps {
            self.drift_into(&x, &mut k1);
            for i in 0..d {
                tmp[i] = x[i] + 0.5 * dt * k1[i];
            }
            self.drift_into(&tmp, &mut k2);
            for i in 0..d {
                tmp[i] = x[i] + 0.5 * dt * k2[i];
            }
            self.drift_into(&tmp, &mut k3);
            for i in 0..d {
                tmp[i] = x[i] + dt * k3[i];
            }
            self.drift_into(&tmp, &mut k4);
            for i in 0..d {
                x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        Ok(x)
    }
}

/// A concentration vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateVector(pub Vec<f64>);

impl StateVector {
    pub fn is_interior(&self) -> bool {
        self.0.iter().all(|&x| x > 0.0)
    }
}

impl Deref for StateVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for StateVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for StateVector {
    fn from(v: Vec<f64>) -> Self {
        StateVector(v)
    }
}

/// Which process a state belongs to; both use the same closure of the
/// absorbing set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProcessKind {
    Poisson,
    Diffusion,
}

/// Membership in `∂X = R^d \ R^d_+`.
///
/// Poisson states live on the lattice `Z^d / V` and reach zero exactly;
/// diffusion states may overshoot below zero within a step. Both are
/// absorbed as soon as any coordinate is `≤ 0`.
#[inline]
pub fn in_absorbing(x: &[f64], _kind: ProcessKind) -> bool {
    x.iter().any(|&xi| xi <= 0.0)
}
