//! The three benchmark networks: an SIR epidemic, the Oregonator and a
//! chaotic four-species competitive Lotka–Volterra system.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Reaction, ReactionNetwork};
use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Sir,
    Oregonator,
    Lv4,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Sir, Preset::Oregonator, Preset::Lv4];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Sir => "sir",
            Preset::Oregonator => "oregonator",
            Preset::Lv4 => "lv4",
        }
    }

    pub fn network(self) -> ReactionNetwork {
        match self {
            Preset::Sir => sir(SirParams::default()),
            Preset::Oregonator => oregonator(),
            Preset::Lv4 => lv4(),
        }
    }

    /// Interior starting point on (or near) the deterministic attractor.
    ///
    /// SIR uses its endemic equilibrium in closed form; the other two are
    /// integrated from a fixed interior point until transients have died out.
    pub fn initial_state(self) -> Vec<f64> {
        match self {
            Preset::Sir => {
                let p = SirParams::default();
                let s = (p.mu + p.rho + p.gamma) / p.beta;
                let i = (p.alpha - p.mu * s) / (p.beta * s);
                vec![s, i]
            }
            Preset::Oregonator => self
                .network()
                .integrate_ode(&[1.0, 1.0, 1.0], 1e-7, 200_000)
                .expect("preset dimensions are consistent"),
            Preset::Lv4 => self
                .network()
                .integrate_ode(&[0.3, 0.3, 0.3, 0.3], 1e-2, 100_000)
                .expect("preset dimensions are consistent"),
        }
    }

    /// Time step used for this system in the reference experiments.
    pub fn default_step(self) -> f64 {
        match self {
            Preset::Sir | Preset::Lv4 => 1e-3,
            Preset::Oregonator => 1e-8,
        }
    }

    /// Fixed time `T` of the reference experiments. The Oregonator scales it
    /// with the volume; other volumes interpolate on a log scale.
    pub fn default_horizon(self, volume: f64) -> f64 {
        match self {
            Preset::Sir => 0.5,
            Preset::Lv4 => 1.0,
            Preset::Oregonator => {
                const TABLE: [(f64, f64); 4] = [(10.0, 2e-6), (100.0, 1e-5), (400.0, 4e-5), (1000.0, 2e-4)];
                if volume <= TABLE[0].0 {
                    return TABLE[0].1;
                }
                for w in TABLE.windows(2) {
                    let ((v0, t0), (v1, t1)) = (w[0], w[1]);
                    if volume == v1 {
                        return t1;
                    }
                    if volume < v1 {
                        let s = (volume.ln() - v0.ln()) / (v1.ln() - v0.ln());
                        return (t0.ln() + s * (t1.ln() - t0.ln())).exp();
                    }
                }
                TABLE[3].1
            }
        }
    }

    /// Box `(lo, hi)` for QSD histograms, if the preset fixes one. The SIR
    /// box is offset by half a lattice spacing at `V = 10` and `V = 1000` so
    /// lattice states never sit on a bin edge of the 40- or 400-bin mesh.
    pub fn default_mesh_box(self) -> Option<(Vec<f64>, Vec<f64>)> {
        match self {
            Preset::Sir => Some((vec![-0.0505; 2], vec![3.9495; 2])),
            _ => None,
        }
    }

    /// Grid step `Δ` of the paired skeletons.
    pub fn default_grid_step(self) -> f64 {
        0.01
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "sir" => Ok(Preset::Sir),
            "oregonator" | "oreg" => Ok(Preset::Oregonator),
            "lv4" | "lotka-volterra" => Ok(Preset::Lv4),
            _ => Err(Error::UnknownPreset(s.to_string())),
        }
    }
}

/// Build a preset by name.
pub fn preset(p: Preset) -> ReactionNetwork {
    p.network()
}

#[derive(Debug, Clone, Copy)]
pub struct SirParams {
    pub alpha: f64,
    pub beta: f64,
    pub mu: f64,
    pub rho: f64,
    pub gamma: f64,
}

impl Default for SirParams {
    fn default() -> Self {
        SirParams {
            alpha: 7.0,
            beta: 3.0,
            mu: 1.0,
            rho: 1.0,
            gamma: 2.0,
        }
    }
}

fn rx(consumed: &[u32], produced: &[u32], rate: f64) -> Reaction {
    Reaction::new(consumed.to_vec(), produced.to_vec(), rate).expect("preset reaction is valid")
}

/// Species (S, I); reactions in order: `∅ → S`, `S + I → 2I`, `S → ∅`,
/// `I → ∅` (the last at rate μ + ρ + γ).
pub fn sir(p: SirParams) -> ReactionNetwork {
    let reactions = vec![
        rx(&[0, 0], &[1, 0], p.alpha),
        rx(&[1, 1], &[0, 2], p.beta),
        rx(&[1, 0], &[0, 0], p.mu),
        rx(&[0, 1], &[0, 0], p.mu + p.rho + p.gamma),
    ];
    ReactionNetwork::new("sir", vec!["S".into(), "I".into()], reactions).expect("valid preset")
}

/// Reactions in order: `S2 → S1`, `S1 + S2 → ∅`, `S1 → 2S1 + 2S3`,
/// `2S1 → ∅`, `S3 → S2` (rate C5·δ), `S3 → ∅` (rate C5·(1 − δ)).
pub fn oregonator() -> ReactionNetwork {
    let (c1, c2, c3, c4, c5, delta) = (2560.0, 800_000.0, 16_000.0, 2000.0, 9000.0, 0.4);
    let reactions = vec![
        rx(&[0, 1, 0], &[1, 0, 0], c1),
        rx(&[1, 1, 0], &[0, 0, 0], c2),
        rx(&[1, 0, 0], &[2, 0, 2], c3),
        rx(&[2, 0, 0], &[0, 0, 0], c4),
        rx(&[0, 0, 1], &[0, 1, 0], c5 * delta),
        rx(&[0, 0, 1], &[0, 0, 0], c5 * (1.0 - delta)),
    ];
    ReactionNetwork::new("oregonator", vec!["S1".into(), "S2".into(), "S3".into()], reactions).expect("valid preset")
}

pub const LV4_GROWTH: [f64; 4] = [1.0, 0.72, 1.53, 1.27];
pub const LV4_COMPETITION: [[f64; 4]; 4] = [
    [1.0, 1.09, 1.52, 0.0],
    [0.0, 1.0, 0.44, 1.36],
    [2.33, 0.0, 1.0, 0.47],
    [1.21, 0.51, 0.35, 1.0],
];

/// Canonical ordering: for each species `i = 1..4`, first the birth
/// `S_i → 2S_i` (rate r_i), then for `j = 1..4` the competition
/// `S_j + S_i → S_j` (rate a_ij·r_i; `2S_i → S_i` when j = i), skipping
/// zero entries of A. The three zeros a14, a21, a32 leave 17 reactions:
/// four for S1, four for S2, four for S3 and five for S4.
pub fn lv4() -> ReactionNetwork {
    let mut reactions = Vec::with_capacity(17);
    for i in 0..4 {
        let mut single = [0u32; 4];
        single[i] = 1;
        let mut double = [0u32; 4];
        double[i] = 2;
        reactions.push(rx(&single, &double, LV4_GROWTH[i]));
        for j in 0..4 {
            let a = LV4_COMPETITION[i][j];
            if a == 0.0 {
                continue;
            }
            let mut consumed = [0u32; 4];
            consumed[i] += 1;
            consumed[j] += 1;
            let mut produced = [0u32; 4];
            produced[j] = 1;
            reactions.push(rx(&consumed, &produced, a * LV4_GROWTH[i]));
        }
    }
    let species = (1..=4).map(|i| format!("S{i}")).collect();
    ReactionNetwork::new("lv4", species, reactions).expect("valid preset")
}
