//! Paired discretized trajectories of a unit-rate Poisson process `P` and a
//! standard Wiener process `B` on a common grid `iΔ`.
//!
//! Both paths are built from shared uniforms through monotone quantile maps,
//! so that `P(s) − s` tracks `B(s)` trajectory by trajectory. Two pairings
//! are available:
//!
//! * [`Pairing::Dyadic`] (default) draws the totals over the whole horizon
//!   from one uniform, then repeatedly splits every block in two, coupling the
//!   binomial split of the Poisson count with the Brownian-bridge split of the
//!   Wiener increment through a fresh shared uniform. This is the KMT
//!   construction; `|P(s) − s − B(s)|` grows like `log s`.
//! * [`Pairing::PerCell`] couples each cell's Poisson(Δ) and N(0, Δ)
//!   increments through one uniform per cell. Simple, but the deviation grows
//!   like `√s` at small `Δ`.

use std::io::{Read, Write};

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantile;
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pairing {
    #[default]
    Dyadic,
    PerCell,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathKind {
    Poisson,
    Wiener,
}

/// Where a skeleton's randomness came from: the stream is keyed by
/// `base ^ channel`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkeletonSeed {
    pub base: u64,
    pub channel: u64,
}

impl SkeletonSeed {
    pub fn rng(self) -> ChaCha8Rng {
        rng::stream(self.base ^ self.channel, Purpose::Skeleton, 0)
    }
}

/// Cumulative values `P(iΔ)` and `B(iΔ)` for `i = 0..=L`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSkeleton {
    grid_step: f64,
    cum_poisson: Vec<u32>,
    cum_wiener: Vec<f64>,
    seed: SkeletonSeed,
    pairing: Pairing,
}

/// Shared-uniform pair for one cell of width `delta`: the Poisson(Δ) quantile
/// and `√Δ·Φ⁻¹(u)`.
#[inline]
pub fn quantile_pair(u: f64, delta: f64) -> (u64, f64) {
    (quantile::poisson(u, delta), delta.sqrt() * quantile::normal(u))
}

/// Convenience wrapper: dyadic pairing, channel 0.
pub fn generate_paired_skeleton(grid_step: f64, cells: usize, seed: u64) -> Result<PairedSkeleton> {
    PairedSkeleton::generate(
        grid_step,
        cells,
        SkeletonSeed { base: seed, channel: 0 },
        Pairing::Dyadic,
    )
}

impl PairedSkeleton {
    pub fn generate(grid_step: f64, cells: usize, seed: SkeletonSeed, pairing: Pairing) -> Result<Self> {
        if !(grid_step > 0.0 && grid_step.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "grid step must be positive, got {grid_step}"
            )));
        }
        if cells == 0 {
            return Err(Error::InvalidParameter("skeleton needs at least one cell".into()));
        }
        let mut rng = seed.rng();
        let mut inc_p = vec![0u32; cells];
        let mut inc_w = vec![0.0f64; cells];
        match pairing {
            Pairing::PerCell => {
                for (p, w) in inc_p.iter_mut().zip(inc_w.iter_mut()) {
                    let (a, b) = quantile_pair(rng::open_unit(&mut rng), grid_step);
                    *p = a as u32;
                    *w = b;
                }
            }
            Pairing::Dyadic => fill_dyadic(&mut inc_p, &mut inc_w, grid_step, &mut rng),
        }
        Ok(Self::from_increments(grid_step, &inc_p, &inc_w, seed, pairing))
    }

    /// Build from per-cell increments (used by tests and the cache reader).
    pub fn from_increments(
        grid_step: f64,
        inc_poisson: &[u32],
        inc_wiener: &[f64],
        seed: SkeletonSeed,
        pairing: Pairing,
    ) -> Self {
        assert_eq!(inc_poisson.len(), inc_wiener.len());
        let mut cum_poisson = Vec::with_capacity(inc_poisson.len() + 1);
        let mut cum_wiener = Vec::with_capacity(inc_wiener.len() + 1);
        let (mut p, mut w) = (0u32, 0.0f64);
        cum_poisson.push(0);
        cum_wiener.push(0.0);
        for (&a, &b) in inc_poisson.iter().zip(inc_wiener) {
            p += a;
            w += b;
            cum_poisson.push(p);
            cum_wiener.push(w);
        }
        PairedSkeleton {
            grid_step,
            cum_poisson,
            cum_wiener,
            seed,
            pairing,
        }
    }

    pub fn grid_step(&self) -> f64 {
        self.grid_step
    }

    /// Number of cells `L`.
    pub fn cells(&self) -> usize {
        self.cum_poisson.len() - 1
    }

    /// Internal-time horizon `L·Δ`.
    pub fn horizon(&self) -> f64 {
        self.cells() as f64 * self.grid_step
    }

    pub fn seed(&self) -> SkeletonSeed {
        self.seed
    }

    pub fn pairing(&self) -> Pairing {
        self.pairing
    }

    pub fn cum_poisson(&self) -> &[u32] {
        &self.cum_poisson
    }

    pub fn cum_wiener(&self) -> &[f64] {
        &self.cum_wiener
    }

    #[inline]
    fn index(&self, s: f64) -> Result<usize> {
        let idx = (s / self.grid_step).floor();
        let last = self.cells();
        if idx >= 0.0 && idx <= last as f64 {
            Ok(idx as usize)
        } else if s >= 0.0 && s <= self.horizon() * (1.0 + 1e-12) {
            Ok(last)
        } else {
            Err(Error::HorizonExceeded {
                channel: self.seed.channel as usize,
                requested: s,
                available: self.horizon(),
                hint_cells: (s / self.grid_step * 1.5).ceil() as usize,
            })
        }
    }

    #[inline]
    pub fn poisson_at(&self, s: f64) -> Result<u32> {
        Ok(self.cum_poisson[self.index(s)?])
    }

    #[inline]
    pub fn wiener_at(&self, s: f64) -> Result<f64> {
        Ok(self.cum_wiener[self.index(s)?])
    }

    /// Piecewise-constant lookup at internal time `s`: the value at grid
    /// index `⌊s/Δ⌋`.
    pub fn path_value(&self, kind: PathKind, s: f64) -> Result<f64> {
        match kind {
            PathKind::Poisson => self.poisson_at(s).map(f64::from),
            PathKind::Wiener => self.wiener_at(s),
        }
    }

    /// Observable proxy for the strong-approximation constant:
    /// `max_i |P(iΔ) − iΔ − B(iΔ)| / log(max(iΔ, 2))`.
    pub fn empirical_kmt_gamma(&self) -> KmtGammaEstimate {
        let mut best = KmtGammaEstimate {
            gamma_hat: 0.0,
            argmax_time: 0.0,
        };
        for (i, (&p, &w)) in self.cum_poisson.iter().zip(&self.cum_wiener).enumerate().skip(1) {
            let s = i as f64 * self.grid_step;
            let ratio = (f64::from(p) - s - w).abs() / s.max(2.0).ln();
            if ratio > best.gamma_hat {
                best = KmtGammaEstimate {
                    gamma_hat: ratio,
                    argmax_time: s,
                };
            }
        }
        best
    }

    const MAGIC: &'static [u8; 8] = b"QSDSKEL\0";
    const VERSION: u32 = 1;

    /// Binary dump: little-endian header (magic, version, pairing, Δ, L,
    /// seed base, channel) followed by `L+1` u32 Poisson values and `L+1`
    /// f64 Wiener values.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(Self::MAGIC)?;
        out.write_all(&Self::VERSION.to_le_bytes())?;
        let pairing: u32 = match self.pairing {
            Pairing::Dyadic => 0,
            Pairing::PerCell => 1,
        };
        out.write_all(&pairing.to_le_bytes())?;
        out.write_all(&self.grid_step.to_le_bytes())?;
        out.write_all(&(self.cells() as u64).to_le_bytes())?;
        out.write_all(&self.seed.base.to_le_bytes())?;
        out.write_all(&self.seed.channel.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.cum_poisson.len() * 12);
        for p in &self.cum_poisson {
            buf.extend_from_slice(&p.to_le_bytes());
        }
        for w in &self.cum_wiener {
            buf.extend_from_slice(&w.to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(Error::CacheFormat("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        input.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != Self::VERSION {
            return Err(Error::CacheFormat(format!("unsupported version {version}")));
        }
        input.read_exact(&mut b4)?;
        let pairing = match u32::from_le_bytes(b4) {
            0 => Pairing::Dyadic,
            1 => Pairing::PerCell,
            other => return Err(Error::CacheFormat(format!("unknown pairing tag {other}"))),
        };
        input.read_exact(&mut b8)?;
        let grid_step = f64::from_le_bytes(b8);
        input.read_exact(&mut b8)?;
        let cells = u64::from_le_bytes(b8) as usize;
        input.read_exact(&mut b8)?;
        let base = u64::from_le_bytes(b8);
        input.read_exact(&mut b8)?;
        let channel = u64::from_le_bytes(b8);
        let mut cum_poisson = Vec::with_capacity(cells + 1);
        for _ in 0..=cells {
            input.read_exact(&mut b4)?;
            cum_poisson.push(u32::from_le_bytes(b4));
        }
        let mut cum_wiener = Vec::with_capacity(cells + 1);
        for _ in 0..=cells {
            input.read_exact(&mut b8)?;
            cum_wiener.push(f64::from_le_bytes(b8));
        }
        Ok(PairedSkeleton {
            grid_step,
            cum_poisson,
            cum_wiener,
            seed: SkeletonSeed { base, channel },
            pairing,
        })
    }
}

fn fill_dyadic(inc_p: &mut [u32], inc_w: &mut [f64], delta: f64, rng: &mut ChaCha8Rng) {
    let cells = inc_p.len();
    let total = cells as f64 * delta;
    let u = rng::open_unit(rng);
    let p_total = quantile::poisson(u, total);
    let w_total = total.sqrt() * quantile::normal(u);
    // Pre-order traversal; each internal node consumes exactly one uniform.
    let mut stack: Vec<(usize, usize, u64, f64)> = Vec::with_capacity(64);
    stack.push((0, cells, p_total, w_total));
    while let Some((start, len, p, w)) = stack.pop() {
        if len == 1 {
            inc_p[start] = p as u32;
            inc_w[start] = w;
            continue;
        }
        let left = len / 2;
        let right = len - left;
        let frac = left as f64 / len as f64;
        let u = rng::open_unit(rng);
        let p_left = quantile::binomial(u, p, frac);
        let sd = (delta * (left * right) as f64 / len as f64).sqrt();
        let w_left = w * frac + sd * quantile::normal(u);
        stack.push((start + left, right, p - p_left, w - w_left));
        stack.push((start, left, p_left, w_left));
    }
}

/// Non-negative proxy of the random constant in the strong approximation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KmtGammaEstimate {
    pub gamma_hat: f64,
    pub argmax_time: f64,
}

/// One skeleton per reaction channel, sharing `Δ`; channel `k` is seeded
/// with `base ^ k`.
#[derive(Debug, Clone)]
pub struct SkeletonSet {
    channels: Vec<PairedSkeleton>,
}

impl SkeletonSet {
    /// Generate `cells[k]` cells for every channel `k`.
    pub fn generate(grid_step: f64, cells: &[usize], base_seed: u64, pairing: Pairing) -> Result<Self> {
        let channels = cells
            .par_iter()
            .enumerate()
            .map(|(k, &n)| {
                PairedSkeleton::generate(
                    grid_step,
                    n,
                    SkeletonSeed {
                        base: base_seed,
                        channel: k as u64,
                    },
                    pairing,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SkeletonSet { channels })
    }

    pub fn from_channels(channels: Vec<PairedSkeleton>) -> Self {
        SkeletonSet { channels }
    }

    pub fn channel(&self, k: usize) -> &PairedSkeleton {
        &self.channels[k]
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &PairedSkeleton> {
        self.channels.iter()
    }
}
