//! Tau-leaping and Euler–Maruyama simulators with regeneration from the
//! occupation measure.
//!
//! Both schemes advance an internal clock per channel, `q_k += V·h·f_k(x)`,
//! and read the channel noise over `[q_k, q_k′]` from a [`ChannelNoise`]
//! source: either a [`SkeletonSet`] (paired mode, so a Poisson and a
//! diffusion copy see the same driving paths) or a fresh RNG (free mode).

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{in_absorbing, ProcessKind, ReactionNetwork};
use crate::paired::SkeletonSet;
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Paired,
    #[default]
    Free,
}

/// Layout of the free-mode diffusion noise: `M·W` with one normal per
/// channel, or `√(MMᵀ)·W` with one per species.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseForm {
    #[default]
    Rectangular,
    Square,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub volume: f64,
    pub step: f64,
    /// Steps per segment; `T = step·steps`.
    pub steps: usize,
    pub seed: u64,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub noise_form: NoiseForm,
    /// Store every `thinning`-th state in the occupation reservoir.
    #[serde(default = "one")]
    pub thinning: usize,
    /// Clear reservoirs at the start of each finite-time-error segment.
    #[serde(default)]
    pub reset_reservoir: bool,
}

fn one() -> usize {
    1
}

impl SimConfig {
    pub fn new(volume: f64, step: f64, steps: usize, seed: u64) -> Result<Self> {
        let cfg = SimConfig {
            volume,
            step,
            steps,
            seed,
            mode: Mode::Free,
            noise_form: NoiseForm::Rectangular,
            thinning: 1,
            reset_reservoir: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Config whose segment length is `round(horizon / step)`.
    pub fn with_horizon(volume: f64, step: f64, horizon: f64, seed: u64) -> Result<Self> {
        if !(horizon > 0.0 && step > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "horizon {horizon} and step {step} must be positive"
            )));
        }
        Self::new(volume, step, (horizon / step).round().max(1.0) as usize, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.volume > 0.0 && self.volume.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "volume must be positive, got {}",
                self.volume
            )));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "step must be positive, got {}",
                self.step
            )));
        }
        if self.steps == 0 {
            return Err(Error::InvalidParameter("steps per segment must be at least 1".into()));
        }
        if self.thinning == 0 {
            return Err(Error::InvalidParameter("thinning must be at least 1".into()));
        }
        Ok(())
    }

    pub fn horizon(&self) -> f64 {
        self.step * self.steps as f64
    }

    pub fn paired(mut self) -> Self {
        self.mode = Mode::Paired;
        self
    }

    pub fn with_noise_form(mut self, form: NoiseForm) -> Self {
        self.noise_form = form;
        self
    }

    pub fn with_thinning(mut self, thinning: usize) -> Self {
        self.thinning = thinning;
        self
    }
}

/// Cumulative internal intensities `q_k = V·h·Σ_{m<n} f_k(X_m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelClock {
    q: Vec<f64>,
    rates: Vec<f64>,
}

impl ChannelClock {
    pub fn new(channels: usize) -> Self {
        ChannelClock {
            q: vec![0.0; channels],
            rates: vec![0.0; channels],
        }
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    /// Propensities evaluated at the start of the last step.
    pub fn last_rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn reset(&mut self) {
        self.q.iter_mut().for_each(|q| *q = 0.0);
    }

    fn load_rates(&mut self, net: &ReactionNetwork, x: &[f64]) {
        let mut clipped = [0.0f64; 16];
        if x.len() <= clipped.len() {
            for (c, &v) in clipped.iter_mut().zip(x) {
                *c = v.max(0.0);
            }
            net.propensities_into(&clipped[..x.len()], &mut self.rates);
        } else {
            let clipped: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
            net.propensities_into(&clipped, &mut self.rates);
        }
    }
}

/// Source of channel increments over internal-time intervals.
pub trait ChannelNoise {
    /// `P_k(q1) − P_k(q0)`.
    fn poisson(&mut self, k: usize, q0: f64, q1: f64) -> Result<f64>;
    /// `B_k(q1) − B_k(q0)`.
    fn wiener(&mut self, k: usize, q0: f64, q1: f64) -> Result<f64>;
    /// A standard normal not tied to any channel (square-form noise).
    fn normal(&mut self) -> Result<f64> {
        Err(Error::InvalidParameter(
            "square-form noise needs a free-running source".into(),
        ))
    }
}

impl ChannelNoise for &SkeletonSet {
    #[inline]
    fn poisson(&mut self, k: usize, q0: f64, q1: f64) -> Result<f64> {
        let sk = self.channel(k);
        Ok(f64::from(sk.poisson_at(q1)? - sk.poisson_at(q0)?))
    }

    #[inline]
    fn wiener(&mut self, k: usize, q0: f64, q1: f64) -> Result<f64> {
        let sk = self.channel(k);
        Ok(sk.wiener_at(q1)? - sk.wiener_at(q0)?)
    }
}

/// Fresh randomness: independent increments over disjoint intervals.
#[derive(Debug, Clone)]
pub struct FreeNoise {
    rng: ChaCha8Rng,
}

impl FreeNoise {
    pub fn new(rng: ChaCha8Rng) -> Self {
        FreeNoise { rng }
    }

    pub fn from_seed(seed: u64, index: u64) -> Self {
        FreeNoise::new(rng::stream(seed, Purpose::FreeRun, index))
    }

    pub fn uniform(&mut self) -> f64 {
        rng::open_unit(&mut self.rng)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

impl ChannelNoise for FreeNoise {
    #[inline]
    fn poisson(&mut self, _k: usize, q0: f64, q1: f64) -> Result<f64> {
        let lambda = q1 - q0;
        if lambda <= 0.0 {
            return Ok(0.0);
        }
        let dist = Poisson::new(lambda).map_err(|e| Error::InvalidParameter(format!("poisson mean {lambda}: {e}")))?;
        Ok(dist.sample(&mut self.rng))
    }

    #[inline]
    fn wiener(&mut self, _k: usize, q0: f64, q1: f64) -> Result<f64> {
        let var = (q1 - q0).max(0.0);
        let z: f64 = self.rng.sample(StandardNormal);
        Ok(var.sqrt() * z)
    }

    #[inline]
    fn normal(&mut self) -> Result<f64> {
        Ok(self.rng.sample(StandardNormal))
    }
}

/// One tau-leaping step in place. Returns whether the new state is absorbed.
pub fn tau_leap_step<N: ChannelNoise>(
    net: &ReactionNetwork,
    x: &mut [f64],
    clock: &mut ChannelClock,
    cfg: &SimConfig,
    noise: &mut N,
) -> Result<bool> {
    clock.load_rates(net, x);
    let scale = cfg.volume * cfg.step;
    let inv_v = 1.0 / cfg.volume;
    for (k, r) in net.reactions().iter().enumerate() {
        let f = clock.rates[k];
        if f <= 0.0 {
            continue;
        }
        let q0 = clock.q[k];
        let q1 = q0 + scale * f;
        let fired = noise.poisson(k, q0, q1)?;
        clock.q[k] = q1;
        if fired != 0.0 {
            for (xi, &l) in x.iter_mut().zip(r.change()) {
                if l != 0 {
                    *xi += f64::from(l) * inv_v * fired;
                }
            }
        }
    }
    Ok(in_absorbing(x, ProcessKind::Poisson))
}

/// Diffusion matrix: column `k` is `l_k·√(V·h·f_k(x⁺))`.
pub fn diffusion_matrix(net: &ReactionNetwork, x: &[f64], cfg: &SimConfig) -> Result<DMatrix<f64>> {
    let xp: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
    let f = net.propensities(&xp)?;
    let mut m = DMatrix::zeros(net.dim(), net.num_reactions());
    for (k, r) in net.reactions().iter().enumerate() {
        debug_assert!(f[k] >= 0.0);
        let s = (cfg.volume * cfg.step * f[k]).sqrt();
        for (i, &l) in r.change().iter().enumerate() {
            m[(i, k)] = f64::from(l) * s;
        }
    }
    Ok(m)
}

/// `M·Mᵀ = V·h·Σ_k f_k(x⁺)·l_k·l_kᵀ`, built without forming `M`.
pub fn noise_covariance(net: &ReactionNetwork, x: &[f64], cfg: &SimConfig) -> Result<DMatrix<f64>> {
    let xp: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
    let f = net.propensities(&xp)?;
    let d = net.dim();
    let mut n = DMatrix::zeros(d, d);
    for (k, r) in net.reactions().iter().enumerate() {
        let w = cfg.volume * cfg.step * f[k];
        if w == 0.0 {
            continue;
        }
        let l = r.change();
        for i in 0..d {
            if l[i] == 0 {
                continue;
            }
            for j in 0..d {
                n[(i, j)] += w * f64::from(l[i] * l[j]);
            }
        }
    }
    Ok(n)
}

/// Spectral square root of a symmetric PSD matrix, kept in factored form so
/// it can also be applied inversely.
#[derive(Debug, Clone)]
pub struct CovarianceRoot {
    vectors: DMatrix<f64>,
    /// Square roots of the (clipped) eigenvalues.
    roots: DVector<f64>,
}

impl CovarianceRoot {
    pub fn new(n: &DMatrix<f64>) -> Result<Self> {
        if !n.is_square() {
            return Err(Error::InvalidCovariance(format!(
                "{}×{} matrix is not square",
                n.nrows(),
                n.ncols()
            )));
        }
        let scale = n.amax().max(1.0);
        for i in 0..n.nrows() {
            for j in 0..i {
                if (n[(i, j)] - n[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidCovariance(format!("not symmetric at ({i}, {j})")));
                }
            }
        }
        let eig = SymmetricEigen::new(n.clone());
        let mut roots = eig.eigenvalues.clone();
        for v in roots.iter_mut() {
            if *v < -1e-8 * scale {
                return Err(Error::InvalidCovariance(format!("eigenvalue {v} is negative")));
            }
            *v = v.max(0.0).sqrt();
        }
        Ok(CovarianceRoot {
            vectors: eig.eigenvectors,
            roots,
        })
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        &self.vectors * DMatrix::from_diagonal(&self.roots) * self.vectors.transpose()
    }

    /// `Σeq·w`.
    pub fn apply(&self, w: &DVector<f64>) -> DVector<f64> {
        let mut t = self.vectors.tr_mul(w);
        t.component_mul_assign(&self.roots);
        &self.vectors * t
    }

    /// `Σeq⁻¹·v`; only meaningful when [`Self::min_singular`] is positive.
    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut t = self.vectors.tr_mul(v);
        t.component_div_assign(&self.roots);
        &self.vectors * t
    }

    pub fn min_singular(&self) -> f64 {
        self.roots.min()
    }

    /// Eigenvalues of the original matrix `N`.
    pub fn eigenvalues(&self) -> DVector<f64> {
        self.roots.component_mul(&self.roots)
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }
}

/// Symmetric PSD square root `Σeq` with `Σeq·Σeq = N`.
pub fn covariance_sqrt(n: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(CovarianceRoot::new(n)?.matrix())
}

/// Closed-form root of a 2×2 PSD matrix: `(N + √det·I)/√(tr + 2√det)`.
pub fn sqrt_2x2(n: &DMatrix<f64>) -> DMatrix<f64> {
    let s = (n[(0, 0)] * n[(1, 1)] - n[(0, 1)] * n[(1, 0)]).max(0.0).sqrt();
    let t = (n.trace() + 2.0 * s).sqrt();
    (n + DMatrix::identity(2, 2) * s) / t
}

/// Drift `h·Σ_k l_k·f_k(x⁺)` of the Euler–Maruyama step.
pub fn em_drift(net: &ReactionNetwork, x: &[f64], h: f64) -> Vec<f64> {
    let xp: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
    let mut out = vec![0.0; x.len()];
    net.drift_into(&xp, &mut out);
    out.iter_mut().for_each(|v| *v *= h);
    out
}

/// One Euler–Maruyama step in place. Returns whether the new state is
/// absorbed.
pub fn em_step<N: ChannelNoise>(
    net: &ReactionNetwork,
    x: &mut [f64],
    clock: &mut ChannelClock,
    cfg: &SimConfig,
    noise: &mut N,
    form: NoiseForm,
) -> Result<bool> {
    clock.load_rates(net, x);
    let scale = cfg.volume * cfg.step;
    let inv_v = 1.0 / cfg.volume;
    match form {
        NoiseForm::Rectangular => {
            for (k, r) in net.reactions().iter().enumerate() {
                let f = clock.rates[k];
                if f <= 0.0 {
                    continue;
                }
                let q0 = clock.q[k];
                let q1 = q0 + scale * f;
                let dw = noise.wiener(k, q0, q1)?;
                clock.q[k] = q1;
                let inc = cfg.step * f + inv_v * dw;
                for (xi, &l) in x.iter_mut().zip(r.change()) {
                    if l != 0 {
                        *xi += f64::from(l) * inc;
                    }
                }
            }
        }
        NoiseForm::Square => {
            let d = x.len();
            let mut cov = DMatrix::zeros(d, d);
            let mut drift = vec![0.0; d];
            for (k, r) in net.reactions().iter().enumerate() {
                let f = clock.rates[k];
                if f <= 0.0 {
                    continue;
                }
                clock.q[k] += scale * f;
                let l = r.change();
                for i in 0..d {
                    if l[i] == 0 {
                        continue;
                    }
                    drift[i] += cfg.step * f * f64::from(l[i]);
                    for j in 0..d {
                        cov[(i, j)] += scale * f * f64::from(l[i] * l[j]);
                    }
                }
            }
            let w = DVector::from_iterator(d, (0..d).map(|_| noise.normal()).collect::<Result<Vec<_>>>()?);
            let root = CovarianceRoot::new(&cov)?;
            let z = root.apply(&w);
            for i in 0..d {
                x[i] += drift[i] + inv_v * z[i];
            }
        }
    }
    Ok(in_absorbing(x, ProcessKind::Diffusion))
}

/// Temporal occupation measure `μ_n`: the states visited so far (optionally
/// thinned), used as the regeneration pool and for histograms.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupationReservoir {
    dim: usize,
    thinning: usize,
    offered: u64,
    data: Vec<f64>,
}

impl OccupationReservoir {
    pub fn new(dim: usize, thinning: usize) -> Self {
        OccupationReservoir {
            dim,
            thinning: thinning.max(1),
            offered: 0,
            data: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored states `n`.
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn push(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.dim);
        if self.offered.is_multiple_of(self.thinning as u64) {
            self.data.extend_from_slice(x);
        }
        self.offered += 1;
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Index `⌊z·n⌋`, clamped into `[0, n−1]`.
    pub fn sample_index(&self, z: f64) -> usize {
        let n = self.len();
        ((z * n as f64).floor() as usize).min(n.saturating_sub(1))
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    /// Drop the first `fraction` of stored states (burn-in).
    pub fn discard_prefix(&mut self, fraction: f64) {
        let drop = ((self.len() as f64) * fraction.clamp(0.0, 1.0)).floor() as usize;
        self.data.drain(..drop * self.dim);
    }

    pub fn clear(&mut self) {
        self.data.clear();
        self.offered = 0;
    }

    fn truncate(&mut self, offered: u64, stored: usize) {
        self.data.truncate(stored * self.dim);
        self.offered = offered;
    }
}

/// Shared regeneration uniforms `S = (Z_1, …, Z_N)` with one cursor per
/// copy, so paired copies that regenerate for the `j`-th time use the same
/// `Z_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegenSequence {
    uniforms: Vec<f64>,
    n_x: usize,
    n_y: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lane {
    X,
    Y,
}

impl RegenSequence {
    pub fn generate(len: usize, seed: u64) -> Self {
        let mut rng = rng::stream(seed, Purpose::Regeneration, 0);
        RegenSequence::from_uniforms((0..len).map(|_| rng::open_unit(&mut rng)).collect())
    }

    pub fn from_uniforms(uniforms: Vec<f64>) -> Self {
        RegenSequence {
            uniforms,
            n_x: 0,
            n_y: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.uniforms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.uniforms.is_empty()
    }

    pub fn counters(&self) -> (usize, usize) {
        (self.n_x, self.n_y)
    }

    pub fn reset_counters(&mut self) {
        self.n_x = 0;
        self.n_y = 0;
    }

    pub fn next(&mut self, lane: Lane) -> Result<f64> {
        let counter = match lane {
            Lane::X => &mut self.n_x,
            Lane::Y => &mut self.n_y,
        };
        let z = *self
            .uniforms
            .get(*counter)
            .ok_or(Error::RegenExhausted(self.uniforms.len()))?;
        *counter += 1;
        Ok(z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainMark {
    offered: u64,
    stored: usize,
    regen_count: usize,
}

/// A single regenerating copy: current state, clock and reservoir.
#[derive(Debug, Clone)]
pub struct Chain {
    kind: ProcessKind,
    x: Vec<f64>,
    initial: Vec<f64>,
    clock: ChannelClock,
    reservoir: OccupationReservoir,
    regen_count: usize,
}

impl Chain {
    pub fn new(net: &ReactionNetwork, kind: ProcessKind, x0: &[f64], thinning: usize) -> Result<Self> {
        if x0.len() != net.dim() {
            return Err(Error::DimensionMismatch {
                expected: net.dim(),
                got: x0.len(),
            });
        }
        if in_absorbing(x0, kind) {
            return Err(Error::InvalidParameter(format!("initial state {x0:?} is not interior")));
        }
        Ok(Chain {
            kind,
            x: x0.to_vec(),
            initial: x0.to_vec(),
            clock: ChannelClock::new(net.num_reactions()),
            reservoir: OccupationReservoir::new(net.dim(), thinning),
            regen_count: 0,
        })
    }

    pub fn state(&self) -> &[f64] {
        &self.x
    }

    pub fn clock(&self) -> &ChannelClock {
        &self.clock
    }

    pub fn reservoir(&self) -> &OccupationReservoir {
        &self.reservoir
    }

    pub fn into_reservoir(self) -> OccupationReservoir {
        self.reservoir
    }

    pub fn regen_count(&self) -> usize {
        self.regen_count
    }

    /// Start a new segment at `x`: clocks restart at zero and `x` becomes the
    /// fallback state for an absorption with an empty reservoir.
    /// Snapshot of the reservoir and regeneration count, for [`Self::rewind`].
    pub fn mark(&self) -> ChainMark {
        ChainMark {
            offered: self.reservoir.offered,
            stored: self.reservoir.len(),
            regen_count: self.regen_count,
        }
    }

    /// Forget everything recorded since `mark`. The state itself is set by
    /// the next [`Self::restart`].
    pub fn rewind(&mut self, mark: ChainMark) {
        self.reservoir.truncate(mark.offered, mark.stored);
        self.regen_count = mark.regen_count;
    }

    pub fn restart(&mut self, x: &[f64], reset_reservoir: bool) {
        self.x.copy_from_slice(x);
        self.initial.copy_from_slice(x);
        self.clock.reset();
        if reset_reservoir {
            self.reservoir.clear();
        }
    }

    /// Advance one step; returns `true` when the step was absorbed, leaving
    /// the absorbed state in place for [`Self::regenerate`].
    pub fn step<N: ChannelNoise>(&mut self, net: &ReactionNetwork, cfg: &SimConfig, noise: &mut N) -> Result<bool> {
        let absorbed = match self.kind {
            ProcessKind::Poisson => tau_leap_step(net, &mut self.x, &mut self.clock, cfg, noise)?,
            ProcessKind::Diffusion => em_step(net, &mut self.x, &mut self.clock, cfg, noise, cfg.noise_form)?,
        };
        if !absorbed {
            self.reservoir.push(&self.x);
        }
        Ok(absorbed)
    }

    /// Replace an absorbed state by reservoir entry `⌊Z·n⌋`, or by the
    /// segment's initial state when nothing has been stored yet. `draw` is
    /// only called in the former case.
    pub fn regenerate(&mut self, draw: impl FnOnce() -> Result<f64>) -> Result<()> {
        if self.reservoir.is_empty() {
            self.x.copy_from_slice(&self.initial);
        } else {
            let z = draw()?;
            let i = self.reservoir.sample_index(z);
            self.x.copy_from_slice(self.reservoir.get(i));
            self.regen_count += 1;
        }
        self.reservoir.push(&self.x);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub step: usize,
    pub state: Vec<f64>,
    pub regenerated: bool,
}

#[derive(Debug, Clone)]
pub struct SimulationRun {
    pub trajectory: Vec<TrajectoryRow>,
    pub reservoir: OccupationReservoir,
    pub regen_count: usize,
    pub final_state: Vec<f64>,
}

/// Paired-mode inputs: the driving skeletons and the shared regeneration
/// sequence with the lane this copy draws from.
pub struct PairedInputs<'a> {
    pub skeletons: &'a SkeletonSet,
    pub regen: &'a mut RegenSequence,
    pub lane: Lane,
}

/// Run `cfg.steps` steps from `x0`, regenerating on absorption.
///
/// Free mode draws everything, including regeneration uniforms, from the
/// stream `(cfg.seed, FreeRun, 0)`. When `record` is set the full
/// trajectory (initial state included as step 0) is returned.
pub fn simulate_with_regeneration(
    net: &ReactionNetwork,
    cfg: &SimConfig,
    kind: ProcessKind,
    x0: &[f64],
    paired: Option<PairedInputs<'_>>,
    record: bool,
) -> Result<SimulationRun> {
    cfg.validate()?;
    let mut chain = Chain::new(net, kind, x0, cfg.thinning)?;
    let mut trajectory = Vec::new();
    if record {
        trajectory.push(TrajectoryRow {
            step: 0,
            state: x0.to_vec(),
            regenerated: false,
        });
    }
    let mut log = |chain: &Chain, step: usize, regenerated: bool| {
        if record {
            trajectory.push(TrajectoryRow {
                step,
                state: chain.state().to_vec(),
                regenerated,
            });
        }
    };
    match (cfg.mode, paired) {
        (Mode::Paired, Some(PairedInputs { skeletons, regen, lane })) => {
            let mut noise = skeletons;
            for n in 1..=cfg.steps {
                let absorbed = chain.step(net, cfg, &mut noise)?;
                if absorbed {
                    chain.regenerate(|| regen.next(lane))?;
                }
                log(&chain, n, absorbed);
            }
        }
        (Mode::Free, None) => {
            let mut noise = FreeNoise::from_seed(cfg.seed, 0);
            for n in 1..=cfg.steps {
                let absorbed = chain.step(net, cfg, &mut noise)?;
                if absorbed {
                    chain.regenerate(|| Ok(noise.uniform()))?;
                }
                log(&chain, n, absorbed);
            }
        }
        (Mode::Paired, None) => {
            return Err(Error::InvalidParameter(
                "paired mode needs skeletons and a regeneration sequence".into(),
            ))
        }
        (Mode::Free, Some(_)) => {
            return Err(Error::InvalidParameter("free mode does not take skeletons".into()));
        }
    }
    Ok(SimulationRun {
        trajectory,
        regen_count: chain.regen_count(),
        final_state: chain.state().to_vec(),
        reservoir: chain.into_reservoir(),
    })
}

/// Write `step,time,<species…>,regen` rows.
pub fn write_trajectory_csv<W: Write>(mut out: W, species: &[String], h: f64, rows: &[TrajectoryRow]) -> Result<()> {
    write!(out, "step,time")?;
    for s in species {
        write!(out, ",{s}")?;
    }
    writeln!(out, ",regen")?;
    for row in rows {
        write!(out, "{},{}", row.step, row.step as f64 * h)?;
        for v in &row.state {
            write!(out, ",{v}")?;
        }
        writeln!(out, ",{}", u8::from(row.regenerated))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{preset, Preset, Reaction};
    use approx::assert_relative_eq;

    struct Forced(Vec<f64>);

    impl ChannelNoise for Forced {
        fn poisson(&mut self, k: usize, _q0: f64, _q1: f64) -> Result<f64> {
            Ok(self.0[k])
        }
        fn wiener(&mut self, k: usize, _q0: f64, _q1: f64) -> Result<f64> {
            Ok(self.0[k])
        }
        fn normal(&mut self) -> Result<f64> {
            Ok(0.0)
        }
    }

    fn sir_cfg() -> SimConfig {
        SimConfig::new(1000.0, 0.001, 10, 1).unwrap()
    }

    #[test]
    fn forced_tau_leap_increment() {
        let net = preset(Preset::Sir);
        let mut x = vec![1.0, 1.0];
        let mut clock = ChannelClock::new(4);
        let absorbed = tau_leap_step(
            &net,
            &mut x,
            &mut clock,
            &sir_cfg(),
            &mut Forced(vec![1.0, 0.0, 0.0, 0.0]),
        )
        .unwrap();
        assert!(!absorbed);
        assert_relative_eq!(x[0], 1.001, epsilon = 1e-15);
        assert_eq!(x[1], 1.0);
        // V·h·(7, 3, 1, 4)
        for (q, want) in clock.q().iter().zip([7.0, 3.0, 1.0, 4.0]) {
            assert_relative_eq!(*q, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_intensity_is_a_no_op() {
        let r = Reaction::new(vec![1], vec![0], 1.0).unwrap();
        let net = ReactionNetwork::new("decay", vec!["A".into()], vec![r]).unwrap();
        let cfg = sir_cfg();
        let mut x = vec![0.0];
        let mut clock = ChannelClock::new(1);
        tau_leap_step(&net, &mut x, &mut clock, &cfg, &mut Forced(vec![5.0])).unwrap();
        assert_eq!((x[0], clock.q()[0]), (0.0, 0.0));
        em_step(
            &net,
            &mut x,
            &mut clock,
            &cfg,
            &mut Forced(vec![5.0]),
            NoiseForm::Rectangular,
        )
        .unwrap();
        assert_eq!((x[0], clock.q()[0]), (0.0, 0.0));
    }

    #[test]
    fn euler_drift_without_noise() {
        let net = preset(Preset::Sir);
        let cfg = sir_cfg();
        for form in [NoiseForm::Rectangular, NoiseForm::Square] {
            let mut x = vec![1.0, 1.0];
            let mut clock = ChannelClock::new(4);
            em_step(&net, &mut x, &mut clock, &cfg, &mut Forced(vec![0.0; 4]), form).unwrap();
            assert_relative_eq!(x[0], 1.003, epsilon = 1e-14);
            assert_relative_eq!(x[1], 0.999, epsilon = 1e-14);
        }
    }

    #[test]
    fn diffusion_matrix_layout() {
        let net = preset(Preset::Sir);
        let m = diffusion_matrix(&net, &[1.0, 1.0], &sir_cfg()).unwrap();
        assert_eq!(m.shape(), (2, 4));
        assert_relative_eq!(m[(0, 1)], -3f64.sqrt(), epsilon = 1e-14);
        assert_relative_eq!(m[(1, 1)], 3f64.sqrt(), epsilon = 1e-14);
        let m0 = diffusion_matrix(&net, &[0.0, 0.0], &sir_cfg()).unwrap();
        assert!(m0.columns(1, 3).iter().all(|&v| v == 0.0));
        let n = noise_covariance(&net, &[1.3, 0.4], &sir_cfg()).unwrap();
        let m = diffusion_matrix(&net, &[1.3, 0.4], &sir_cfg()).unwrap();
        assert!((n - &m * m.transpose()).amax() < 1e-12);
    }

    #[test]
    fn covariance_roots() {
        let id = DMatrix::<f64>::identity(3, 3);
        assert!((covariance_sqrt(&id).unwrap() - &id).amax() < 1e-14);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let r = covariance_sqrt(&d).unwrap();
        assert!((r - DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]))).amax() < 1e-14);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(covariance_sqrt(&bad), Err(Error::InvalidCovariance(_))));
        let neg = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.1]));
        assert!(matches!(covariance_sqrt(&neg), Err(Error::InvalidCovariance(_))));
        let tiny = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1e-13]));
        assert!(covariance_sqrt(&tiny).is_ok());
    }

    #[test]
    fn root_solve_inverts_apply() {
        let n = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.5]);
        let root = CovarianceRoot::new(&n).unwrap();
        let v = DVector::from_vec(vec![0.7, -1.1]);
        assert!((root.solve(&root.apply(&v)) - v).amax() < 1e-12);
    }

    #[test]
    fn regeneration_picks_floor_index() {
        let net = preset(Preset::Sir);
        let mut chain = Chain::new(&net, ProcessKind::Poisson, &[1.0, 1.0], 1).unwrap();
        for i in 0..5 {
            chain.reservoir.push(&[i as f64 + 1.0, 1.0]);
        }
        chain.regenerate(|| Ok(0.5)).unwrap();
        assert_eq!(chain.state(), &[3.0, 1.0]);
        assert_eq!(chain.regen_count(), 1);
    }

    #[test]
    fn regeneration_with_empty_reservoir_reuses_initial() {
        let net = preset(Preset::Sir);
        let mut chain = Chain::new(&net, ProcessKind::Poisson, &[1.0, 2.0], 1).unwrap();
        chain.x = vec![0.0, 2.0];
        chain.regenerate(|| panic!("no uniform needed")).unwrap();
        assert_eq!(chain.state(), &[1.0, 2.0]);
        assert_eq!(chain.regen_count(), 0);
    }

    #[test]
    fn regen_sequence_lanes_and_exhaustion() {
        let mut s = RegenSequence::from_uniforms(vec![0.1, 0.2]);
        assert_eq!(s.next(Lane::X).unwrap(), 0.1);
        assert_eq!(s.next(Lane::Y).unwrap(), 0.1);
        assert_eq!(s.next(Lane::X).unwrap(), 0.2);
        assert!(matches!(s.next(Lane::X), Err(Error::RegenExhausted(2))));
        s.reset_counters();
        assert_eq!(s.counters(), (0, 0));
    }

    #[test]
    fn thinning_stores_every_sth_state() {
        let mut r = OccupationReservoir::new(1, 3);
        for i in 0..10 {
            r.push(&[i as f64]);
        }
        assert_eq!(r.iter().map(|s| s[0]).collect::<Vec<_>>(), vec![0.0, 3.0, 6.0, 9.0]);
        assert_eq!(r.sample_index(0.999_999), 3);
    }

    #[test]
    fn long_run_without_absorption() {
        let net = preset(Preset::Sir);
        let cfg = SimConfig::new(1e4, 1e-3, 500, 3).unwrap();
        let run = simulate_with_regeneration(
            &net,
            &cfg,
            ProcessKind::Poisson,
            &Preset::Sir.initial_state(),
            None,
            true,
        )
        .unwrap();
        assert_eq!(run.regen_count, 0);
        assert_eq!(run.reservoir.len(), 500);
        assert_eq!(run.trajectory.len(), 501);
        let mut csv = Vec::new();
        write_trajectory_csv(&mut csv, net.species(), cfg.step, &run.trajectory[..3]).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("step,time,S,I,regen\n0,0,"));
    }

    #[test]
    fn mode_mismatch_rejected() {
        let net = preset(Preset::Sir);
        let cfg = SimConfig::new(10.0, 1e-3, 5, 3).unwrap().paired();
        assert!(simulate_with_regeneration(&net, &cfg, ProcessKind::Poisson, &[1.0, 1.0], None, false).is_err());
    }
}
