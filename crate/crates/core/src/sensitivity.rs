//! The bound `d_w(π_X, π_Y) ≲ fte / (1 − α)`: finite-time error between
//! paired Poisson and diffusion chains, exponential-tail fit of coupling
//! times, and assembly into table rows.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::coupling::{
    collect_coupling_times, default_threshold, tally, CouplingConfig, CouplingOutcome, StartPairs, Status,
};
use crate::error::{Error, Result};
use crate::network::{ProcessKind, ReactionNetwork};
use crate::paired::{Pairing, SkeletonSet};
use crate::qsd::capped_distance;
use crate::rng::{self, Purpose};
use crate::simulate::{
    simulate_with_regeneration, Chain, Lane, NoiseForm, OccupationReservoir, RegenSequence, SimConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiniteTimeErrorEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub segments: usize,
    pub horizon: f64,
    pub volume: f64,
}

impl FiniteTimeErrorEstimate {
    /// A bare point value, e.g. a published number.
    pub fn point(mean: f64, horizon: f64) -> Self {
        FiniteTimeErrorEstimate {
            mean,
            std_error: 0.0,
            segments: 0,
            horizon,
            volume: f64::NAN,
        }
    }
}

/// How the per-channel skeletons of each segment are produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonPlan {
    pub grid_step: f64,
    /// Cells per channel.
    pub cells: Vec<usize>,
    pub pairing: Pairing,
    pub seed: u64,
    /// Use one skeleton set for every segment instead of fresh ones.
    pub reuse: bool,
    /// On a horizon overrun, lengthen the short channel and rerun the
    /// segment instead of failing.
    #[serde(default)]
    pub grow: bool,
}

impl SkeletonPlan {
    /// Size every channel for `safety·V·T·f_k^max` of internal time, where
    /// `f_k^max` is the largest propensity seen in `pool`.
    pub fn sized_from(
        net: &ReactionNetwork,
        cfg: &SimConfig,
        pool: &OccupationReservoir,
        grid_step: f64,
        safety: f64,
    ) -> Result<Vec<usize>> {
        if pool.is_empty() {
            return Err(Error::Empty("cannot size skeletons from an empty pool"));
        }
        let mut fmax = vec![0.0f64; net.num_reactions()];
        let mut f = vec![0.0; net.num_reactions()];
        for x in pool.iter() {
            net.propensities_into(x, &mut f);
            for (m, v) in fmax.iter_mut().zip(&f) {
                *m = m.max(*v);
            }
        }
        Ok(fmax
            .iter()
            .map(|m| ((safety * cfg.volume * cfg.horizon() * m / grid_step).ceil() as usize).max(1) + 64)
            .collect())
    }

    pub fn generate(&self, segment: usize) -> Result<SkeletonSet> {
        let index = if self.reuse { 0 } else { segment as u64 };
        let base = self.seed ^ rng::stream_id(Purpose::Skeleton, index);
        SkeletonSet::generate(self.grid_step, &self.cells, base, self.pairing)
    }

    /// Lengthen `channel` to at least `hint` cells, and at least double it.
    fn grow_channel(&mut self, channel: usize, hint: usize) {
        let c = &mut self.cells[channel];
        *c = hint.max(2 * *c);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentOutcome {
    /// `min(1, ‖X_T − Y_T‖)`.
    pub distance: f64,
    /// `max_n ‖X_n − Y_n‖` over the segment.
    pub sup_distance: f64,
    pub regenerations: usize,
}

/// One paired segment: both chains restart at `start` with clocks
/// at zero and step `cfg.steps` times on the shared skeletons; each lane
/// draws its regeneration uniforms from `regen`, whose counters restart.
pub fn paired_segment(
    net: &ReactionNetwork,
    cfg: &SimConfig,
    x: &mut Chain,
    y: &mut Chain,
    start: &[f64],
    skeletons: &SkeletonSet,
    regen: &mut RegenSequence,
) -> Result<SegmentOutcome> {
    x.restart(start, cfg.reset_reservoir);
    y.restart(start, cfg.reset_reservoir);
    regen.reset_counters();
    let regens_before = x.regen_count() + y.regen_count();
    let mut noise = skeletons;
    let mut sup = 0.0f64;
    for _ in 0..cfg.steps {
        if x.step(net, cfg, &mut noise)? {
            x.regenerate(|| regen.next(Lane::X))?;
        }
        if y.step(net, cfg, &mut noise)? {
            y.regenerate(|| regen.next(Lane::Y))?;
        }
        let d: f64 = x
            .state()
            .iter()
            .zip(y.state())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        sup = sup.max(d);
    }
    Ok(SegmentOutcome {
        distance: capped_distance(x.state(), y.state()),
        sup_distance: sup,
        regenerations: x.regen_count() + y.regen_count() - regens_before,
    })
}

/// Finite-time error: chain `segments` paired segments, segment `m` starting
/// from the Poisson state at the end of segment `m − 1`, and average the
/// capped end-point distances.
pub fn finite_time_error(
    net: &ReactionNetwork,
    cfg: &SimConfig,
    x0: &[f64],
    segments: usize,
    plan: &SkeletonPlan,
    regen: &mut RegenSequence,
) -> Result<FiniteTimeErrorEstimate> {
    let outcomes = finite_time_error_segments(net, cfg, x0, segments, plan, regen)?;
    let distances: Vec<f64> = outcomes.iter().map(|o| o.distance).collect();
    let (mean, std_error) = mean_and_se(&distances);
    Ok(FiniteTimeErrorEstimate {
        mean,
        std_error,
        segments,
        horizon: cfg.horizon(),
        volume: cfg.volume,
    })
}

/// Per-segment outcomes behind [`finite_time_error`].
pub fn finite_time_error_segments(
    net: &ReactionNetwork,
    cfg: &SimConfig,
    x0: &[f64],
    segments: usize,
    plan: &SkeletonPlan,
    regen: &mut RegenSequence,
) -> Result<Vec<SegmentOutcome>> {
    cfg.validate()?;
    if segments == 0 {
        return Err(Error::InvalidParameter("need at least one segment".into()));
    }
    if plan.cells.len() != net.num_reactions() {
        return Err(Error::DimensionMismatch {
            expected: net.num_reactions(),
            got: plan.cells.len(),
        });
    }
    let mut x = Chain::new(net, ProcessKind::Poisson, x0, cfg.thinning)?;
    let mut y = Chain::new(net, ProcessKind::Diffusion, x0, cfg.thinning)?;
    let mut plan = plan.clone();
    let mut start = x0.to_vec();
    let mut shared = if plan.reuse { Some(plan.generate(0)?) } else { None };
    let mut outcomes = Vec::with_capacity(segments);
    for m in 0..segments {
        let marks = (x.mark(), y.mark());
        let out = loop {
            let fresh;
            let skeletons = match &shared {
                Some(s) => s,
                None => {
                    fresh = plan.generate(m)?;
                    &fresh
                }
            };
            match paired_segment(net, cfg, &mut x, &mut y, &start, skeletons, regen) {
                Err(Error::HorizonExceeded {
                    channel, hint_cells, ..
                }) if plan.grow => {
                    plan.grow_channel(channel, hint_cells);
                    log::debug!("segment {m}: channel {channel} grown to {} cells", plan.cells[channel]);
                    x.rewind(marks.0);
                    y.rewind(marks.1);
                    if plan.reuse {
                        shared = Some(plan.generate(0)?);
                    }
                }
                r => break r?,
            }
        };
        outcomes.push(out);
        start.copy_from_slice(x.state());
    }
    Ok(outcomes)
}

fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub const Z_95: f64 = 1.96;

/// Empirical conditional survival `P(τ_c > t_i | no extinction)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub times: Vec<f64>,
    pub survivors: Vec<usize>,
    pub p: Vec<f64>,
    /// Non-extinct runs.
    pub trials: usize,
}

/// Survival over the non-extinct runs. Censored runs count as survivors at
/// every grid time, which is exact as long as the grid stays below the
/// censoring time.
pub fn survival_curve(outcomes: &[CouplingOutcome], times: &[f64], h: f64) -> Result<SurvivalCurve> {
    if times.is_empty() {
        return Err(Error::Empty("survival time grid"));
    }
    let live: Vec<&CouplingOutcome> = outcomes.iter().filter(|o| o.status != Status::Extinct).collect();
    if live.is_empty() {
        return Err(Error::Empty("every coupling run went extinct"));
    }
    if !live.iter().any(|o| o.status == Status::Coupled) {
        return Err(Error::Empty("no coupling run coupled"));
    }
    let trials = live.len();
    let survivors: Vec<usize> = times
        .iter()
        .map(|&t| {
            live.iter()
                .filter(|o| match o.tau() {
                    Some(tau) => tau as f64 * h > t,
                    None => true,
                })
                .count()
        })
        .collect();
    let p = survivors.iter().map(|&n| n as f64 / trials as f64).collect();
    Ok(SurvivalCurve {
        times: times.to_vec(),
        survivors,
        p,
        trials,
    })
}

/// `points` evenly spaced times from `h` to the 99th percentile of the
/// coupled times.
pub fn default_time_grid(outcomes: &[CouplingOutcome], h: f64, points: usize) -> Result<Vec<f64>> {
    let mut taus: Vec<usize> = outcomes.iter().filter_map(CouplingOutcome::tau).collect();
    if taus.is_empty() {
        return Err(Error::Empty("no coupling run coupled"));
    }
    taus.sort_unstable();
    let idx = ((0.99 * taus.len() as f64).ceil() as usize).clamp(1, taus.len()) - 1;
    let end = (taus[idx] as f64 * h).max(2.0 * h);
    let points = points.max(2);
    Ok((0..points)
        .map(|i| h + (end - h) * i as f64 / (points - 1) as f64)
        .collect())
}

/// Agresti–Coull interval for `successes` out of `trials`, clipped to
/// `[0, 1]`. The adjusted count is the standard `trials + z²`, or
/// `successes + z²` with `compat`.
pub fn agresti_coull(successes: usize, trials: usize, z: f64, compat: bool) -> (f64, f64) {
    let z2 = z * z;
    let n_tilde = if compat {
        successes as f64 + z2
    } else {
        trials as f64 + z2
    };
    let p_tilde = ((successes as f64 + 0.5 * z2) / n_tilde).min(1.0);
    let half = z * (p_tilde * (1.0 - p_tilde) / n_tilde).sqrt();
    ((p_tilde - half).max(0.0), (p_tilde + half).min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    /// Decay rate per unit time.
    pub gamma: f64,
    /// Intercept `C` of the fitted `C·e^{−γt}`.
    pub prefactor: f64,
    pub tail_start: Option<usize>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub accepted: bool,
    pub diagnostic: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TailFitOptions {
    pub z: f64,
    pub width_threshold: f64,
    pub compat_ac: bool,
}

impl Default for TailFitOptions {
    fn default() -> Self {
        TailFitOptions {
            z: Z_95,
            width_threshold: 0.1,
            compat_ac: false,
        }
    }
}

/// Weighted least squares of `ln p_i` on `t_i` over the points `i ≥ from`
/// with `n_i > 0`; returns `(γ, C)` for `C·e^{−γt}`. Each point is weighted
/// by the inverse of the delta-method variance of `ln p̂_i`,
/// `M·p_i/(1 − p_i)`, so the sparse far tail does not dominate the slope.
fn regress(curve: &SurvivalCurve, from: usize) -> Option<(f64, f64)> {
    let m = curve.trials as f64;
    let pts: Vec<(f64, f64, f64)> = (from..curve.times.len())
        .filter(|&i| curve.survivors[i] > 0)
        .map(|i| {
            let p = curve.p[i];
            (curve.times[i], p.ln(), m * p / (1.0 - p).max(1.0 / m))
        })
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let sw: f64 = pts.iter().map(|p| p.2).sum();
    let mt = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
    let ml = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
    let stt: f64 = pts.iter().map(|p| p.2 * (p.0 - mt) * (p.0 - mt)).sum();
    if stt == 0.0 {
        return None;
    }
    let slope = pts.iter().map(|p| p.2 * (p.0 - mt) * (p.1 - ml)).sum::<f64>() / stt;
    Some((-slope, (ml - slope * mt).exp()))
}

/// Fit `C·e^{−γt}` to the tail of a survival curve.
///
/// The tail start `i₀` is the smallest index for which the curve fitted on
/// `i ≥ i₀` stays inside the Agresti–Coull band at every `i ≥ i₀`. The fit
/// is accepted when `γ > 0` and the band at `i₀` is narrower than the
/// threshold.
pub fn fit_exponential_tail(curve: &SurvivalCurve, opts: &TailFitOptions) -> Result<TailFit> {
    let (lower, upper): (Vec<f64>, Vec<f64>) = curve
        .survivors
        .iter()
        .map(|&n| agresti_coull(n, curve.trials, opts.z, opts.compat_ac))
        .unzip();
    for i0 in 0..curve.times.len() {
        let Some((gamma, prefactor)) = regress(curve, i0) else {
            break;
        };
        let inside = (i0..curve.times.len()).all(|i| {
            let fit = prefactor * (-gamma * curve.times[i]).exp();
            lower[i] <= fit && fit <= upper[i]
        });
        if inside {
            let width = upper[i0] - lower[i0];
            let accepted = gamma > 0.0 && width < opts.width_threshold;
            let diagnostic = if accepted {
                String::new()
            } else if gamma <= 0.0 {
                format!("no decay in the tail (gamma = {gamma})")
            } else {
                format!(
                    "band width {width:.4} at tail start exceeds {}; run the coupling for longer",
                    opts.width_threshold
                )
            };
            return Ok(TailFit {
                gamma,
                prefactor,
                tail_start: Some(i0),
                lower,
                upper,
                accepted,
                diagnostic,
            });
        }
    }
    let (gamma, prefactor) = regress(curve, 0).unwrap_or((0.0, 1.0));
    Ok(TailFit {
        gamma,
        prefactor,
        tail_start: None,
        lower,
        upper,
        accepted: false,
        diagnostic: "no tail start keeps the fit inside the confidence band; run the coupling for longer".into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub fte: FiniteTimeErrorEstimate,
    pub gamma: f64,
    pub alpha: f64,
    pub bound: f64,
    pub horizon: f64,
    /// The discretization terms of order `h` that the bound leaves out.
    pub omitted: String,
}

/// `α = e^{−γT}` and `bound = fte/(1 − α)`.
pub fn assemble_bound(fte: FiniteTimeErrorEstimate, gamma: f64, horizon: f64) -> Result<BoundReport> {
    if !(horizon > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    if !(gamma > 0.0) {
        return Err(Error::DivergentBound(gamma));
    }
    let alpha = (-gamma * horizon).exp();
    Ok(BoundReport {
        fte,
        gamma,
        alpha,
        bound: fte.mean / (1.0 - alpha),
        horizon,
        omitted: "+ O(h) from the tau-leaping and Euler-Maruyama discretizations".into(),
    })
}

/// Monte Carlo budgets of one table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budgets {
    pub segments: usize,
    pub runs: usize,
    /// Coupling runs still apart after this many steps are censored.
    pub max_coupling_steps: usize,
    /// Length `N` of the regeneration sequence.
    pub regen_len: usize,
    /// Burn-in, in multiples of `T`, discarded before anything is measured.
    pub burn_in_horizons: usize,
    /// Length of the start-pair pool, in multiples of `T`.
    pub pool_horizons: usize,
    pub grid_step: f64,
    pub pairing: Pairing,
    pub reuse_skeletons: bool,
    /// Fixed cells per channel; sized from the pool when absent.
    pub skeleton_cells: Option<usize>,
    pub skeleton_safety: f64,
    pub threshold: Option<f64>,
    pub survival_points: usize,
    pub tail: TailFitOptions,
    pub thinning: usize,
    pub reset_reservoir: bool,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets {
            segments: 2000,
            runs: 5000,
            max_coupling_steps: 0,
            regen_len: 100_000,
            burn_in_horizons: 10,
            pool_horizons: 20,
            grid_step: 0.01,
            pairing: Pairing::Dyadic,
            reuse_skeletons: false,
            skeleton_cells: None,
            skeleton_safety: 1.5,
            threshold: None,
            survival_points: 40,
            tail: TailFitOptions::default(),
            thinning: 1,
            reset_reservoir: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub network: String,
    pub volume: f64,
    pub step: f64,
    pub horizon: f64,
    pub fte: FiniteTimeErrorEstimate,
    pub tail: TailFit,
    pub curve: SurvivalCurve,
    /// `None` when the fitted rate does not decay.
    pub report: Option<BoundReport>,
    pub threshold: f64,
    pub coupled: usize,
    pub extinct: usize,
    pub censored: usize,
}

impl TableRow {
    pub fn bound(&self) -> Option<f64> {
        self.report.as_ref().map(|r| r.bound)
    }
}

/// Free diffusion run from `x_init`: the first `burn_in_horizons·T` are
/// dropped and the next `pool_horizons·T` kept as a pool of approximate
/// QSD draws. Returns the pool and the final state.
pub fn burn_in_pool(
    net: &ReactionNetwork,
    cfg: &SimConfig,
    x_init: &[f64],
    budgets: &Budgets,
    seed: u64,
) -> Result<(OccupationReservoir, Vec<f64>)> {
    let total = (budgets.burn_in_horizons + budgets.pool_horizons.max(1)) * cfg.steps;
    let mut free = cfg.clone();
    free.steps = total;
    free.seed = rng::stream_id(Purpose::Burnin, seed);
    free.mode = crate::simulate::Mode::Free;
    free.noise_form = NoiseForm::Rectangular;
    free.thinning = budgets.thinning.max(1);
    let run = simulate_with_regeneration(net, &free, ProcessKind::Diffusion, x_init, None, false)?;
    let mut pool = run.reservoir;
    pool.discard_prefix(
        budgets.burn_in_horizons as f64 / (budgets.burn_in_horizons + budgets.pool_horizons.max(1)) as f64,
    );
    if pool.is_empty() {
        return Err(Error::Empty("burn-in pool is empty"));
    }
    Ok((pool, run.final_state))
}

/// Nearest point of the lattice `ℕ^d/V` with every coordinate at least
/// `1/V`.
pub fn snap_to_lattice(x: &[f64], volume: f64) -> Vec<f64> {
    x.iter().map(|v| (v * volume).round().max(1.0) / volume).collect()
}

/// Burn-in shared by the stages of one table row.
#[derive(Debug, Clone)]
pub struct RowSetup {
    pub cfg: SimConfig,
    pub pool: OccupationReservoir,
    /// Final burn-in state, snapped to the lattice; the finite-time error
    /// chain starts here.
    pub start: Vec<f64>,
    pub seed: u64,
}

pub fn row_setup(
    net: &ReactionNetwork,
    x_init: &[f64],
    volume: f64,
    step: f64,
    horizon: f64,
    budgets: &Budgets,
    seed: u64,
) -> Result<RowSetup> {
    let mut cfg = SimConfig::with_horizon(volume, step, horizon, seed)?;
    cfg.thinning = budgets.thinning.max(1);
    cfg.reset_reservoir = budgets.reset_reservoir;
    log::info!("{} V={volume}: burn-in", net.name());
    let (pool, last) = burn_in_pool(net, &cfg, x_init, budgets, seed)?;
    Ok(RowSetup {
        start: snap_to_lattice(&last, volume),
        cfg,
        pool,
        seed,
    })
}

/// Finite-time error stage of a table row.
pub fn row_fte(net: &ReactionNetwork, setup: &RowSetup, budgets: &Budgets) -> Result<FiniteTimeErrorEstimate> {
    let cells = match budgets.skeleton_cells {
        Some(c) => vec![c; net.num_reactions()],
        None => SkeletonPlan::sized_from(net, &setup.cfg, &setup.pool, budgets.grid_step, budgets.skeleton_safety)?,
    };
    let plan = SkeletonPlan {
        grid_step: budgets.grid_step,
        cells,
        pairing: budgets.pairing,
        seed: rng::stream_id(Purpose::Skeleton, setup.seed),
        reuse: budgets.reuse_skeletons,
        grow: budgets.skeleton_cells.is_none(),
    };
    let mut regen = RegenSequence::generate(budgets.regen_len, setup.seed);
    log::info!(
        "{} V={}: finite-time error over {} segments",
        net.name(),
        setup.cfg.volume,
        budgets.segments
    );
    let paired_cfg = setup.cfg.clone().paired();
    finite_time_error(net, &paired_cfg, &setup.start, budgets.segments, &plan, &mut regen)
}

/// Coupling times of a table row, drawn from the burn-in pool.
#[derive(Debug, Clone)]
pub struct Contraction {
    pub outcomes: Vec<CouplingOutcome>,
    pub threshold: f64,
    pub curve: SurvivalCurve,
    pub tail: TailFit,
}

pub fn row_contraction(net: &ReactionNetwork, setup: &RowSetup, budgets: &Budgets) -> Result<Contraction> {
    let cfg = &setup.cfg;
    let threshold = match budgets.threshold {
        Some(t) => t,
        None => default_threshold(net, cfg, &pool_mean(&setup.pool))?,
    };
    let max_steps = if budgets.max_coupling_steps > 0 {
        budgets.max_coupling_steps
    } else {
        40 * cfg.steps
    };
    let cc = CouplingConfig {
        runs: budgets.runs,
        threshold,
        max_steps,
        seed: rng::stream_id(Purpose::Pairs, setup.seed),
    };
    log::info!("{} V={}: {} coupling runs", net.name(), cfg.volume, budgets.runs);
    let outcomes = collect_coupling_times(net, cfg, StartPairs::Reservoir(&setup.pool), &cc)?;
    let grid = default_time_grid(&outcomes, cfg.step, budgets.survival_points)?;
    let curve = survival_curve(&outcomes, &grid, cfg.step)?;
    let tail = fit_exponential_tail(&curve, &budgets.tail)?;
    Ok(Contraction {
        outcomes,
        threshold,
        curve,
        tail,
    })
}

/// One row of the results table: burn-in, finite-time error, coupling
/// times, tail fit and bound.
pub fn table_row(
    net: &ReactionNetwork,
    x_init: &[f64],
    volume: f64,
    step: f64,
    horizon: f64,
    budgets: &Budgets,
    seed: u64,
) -> Result<TableRow> {
    let setup = row_setup(net, x_init, volume, step, horizon, budgets, seed)?;
    let fte = row_fte(net, &setup, budgets)?;
    let c = row_contraction(net, &setup, budgets)?;
    let (coupled, extinct, censored) = tally(&c.outcomes);
    let report = match assemble_bound(fte, c.tail.gamma, setup.cfg.horizon()) {
        Ok(r) => Some(r),
        Err(Error::DivergentBound(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(TableRow {
        network: net.name().to_string(),
        volume,
        step,
        horizon: setup.cfg.horizon(),
        fte,
        tail: c.tail,
        curve: c.curve,
        report,
        threshold: c.threshold,
        coupled,
        extinct,
        censored,
    })
}

pub fn pool_mean(pool: &OccupationReservoir) -> Vec<f64> {
    let mut m = vec![0.0; pool.dim()];
    for x in pool.iter() {
        for (a, b) in m.iter_mut().zip(x) {
            *a += b;
        }
    }
    let n = pool.len() as f64;
    m.iter_mut().for_each(|a| *a /= n);
    m
}

pub const TABLE_HEADER: &str = "network,V,h,T,fte,fte_se,gamma,alpha,bound,accepted,coupled,extinct,censored";

/// Rows in the layout of the results tables (`V, fte, γ, bound`) plus
/// diagnostics.
pub fn write_table_csv<W: Write>(mut out: W, rows: &[TableRow]) -> Result<()> {
    writeln!(out, "{TABLE_HEADER}")?;
    for r in rows {
        let (alpha, bound) = r.report.as_ref().map_or((f64::NAN, f64::NAN), |b| (b.alpha, b.bound));
        writeln!(
            out,
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{},{}",
            r.network,
            r.volume,
            r.step,
            r.horizon,
            r.fte.mean,
            r.fte.std_error,
            r.tail.gamma,
            alpha,
            bound,
            r.tail.accepted,
            r.coupled,
            r.extinct,
            r.censored
        )?;
    }
    Ok(())
}

/// `t,n,p,lower,upper` rows of a survival curve and its band.
pub fn write_survival_csv<W: Write>(mut out: W, curve: &SurvivalCurve, fit: &TailFit) -> Result<()> {
    writeln!(out, "t,n,p,lower,upper,fit")?;
    for i in 0..curve.times.len() {
        let t = curve.times[i];
        writeln!(
            out,
            "{t},{},{},{},{},{}",
            curve.survivors[i],
            curve.p[i],
            fit.lower[i],
            fit.upper[i],
            fit.prefactor * (-fit.gamma * t).exp()
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{preset, Preset};
    use proptest::prelude::*;

    fn coupled_at(steps: &[usize]) -> Vec<CouplingOutcome> {
        steps
            .iter()
            .enumerate()
            .map(|(run, &s)| CouplingOutcome {
                run,
                status: Status::Coupled,
                steps: s,
                fallbacks: 0,
            })
            .collect()
    }

    #[test]
    fn bound_arithmetic() {
        let r = assemble_bound(FiniteTimeErrorEstimate::point(0.0026, 0.5), 1.2853, 0.5).unwrap();
        assert!((r.bound - 0.0026 / (1.0 - (-1.2853f64 * 0.5).exp())).abs() < 1e-15);
        assert!(r.bound >= 0.0026 && r.alpha < 1.0);
        let big = assemble_bound(FiniteTimeErrorEstimate::point(0.01, 1.0), 1e6, 1.0).unwrap();
        assert_eq!(big.bound, 0.01);
        assert_eq!(
            assemble_bound(FiniteTimeErrorEstimate::point(0.0, 1.0), 2.0, 1.0)
                .unwrap()
                .bound,
            0.0
        );
        assert!(matches!(
            assemble_bound(FiniteTimeErrorEstimate::point(0.1, 1.0), 0.0, 1.0),
            Err(Error::DivergentBound(_))
        ));
    }

    #[test]
    fn survival_of_constant_times() {
        let h = 1e-3;
        let outs = coupled_at(&[5; 10]);
        let c = survival_curve(&outs, &[h, 10.0 * h], h).unwrap();
        assert_eq!(c.p, vec![1.0, 0.0]);
        assert!(survival_curve(&outs, &[], h).is_err());
    }

    #[test]
    fn extinct_runs_are_excluded() {
        let mut outs = coupled_at(&[1, 3, 3, 10]);
        outs[0].status = Status::Extinct;
        let c = survival_curve(&outs, &[2.0], 1.0).unwrap();
        assert_eq!((c.trials, c.survivors[0]), (3, 3));
        outs.iter_mut().for_each(|o| o.status = Status::Extinct);
        assert!(survival_curve(&outs, &[2.0], 1.0).is_err());
    }

    #[test]
    fn flat_curve_rejected() {
        let curve = SurvivalCurve {
            times: (1..=10).map(f64::from).collect(),
            survivors: vec![100; 10],
            p: vec![1.0; 10],
            trials: 100,
        };
        assert!(
            !fit_exponential_tail(&curve, &TailFitOptions::default())
                .unwrap()
                .accepted
        );
    }

    #[test]
    fn compat_interval_uses_success_count() {
        let (l, u) = agresti_coull(10, 1000, Z_95, false);
        let (lc, uc) = agresti_coull(10, 1000, Z_95, true);
        assert!(u - l < uc - lc);
    }

    proptest! {
        #[test]
        fn interval_contains_estimate(trials in 1usize..5000, frac in 0.0f64..1.0) {
            let n = ((trials as f64) * frac) as usize;
            prop_assume!(n > 0 && n < trials);
            let (l, u) = agresti_coull(n, trials, Z_95, false);
            let p = n as f64 / trials as f64;
            prop_assert!(l <= p && p <= u && l >= 0.0 && u <= 1.0);
        }

        #[test]
        fn survival_is_non_increasing(steps in proptest::collection::vec(1usize..500, 1..60)) {
            let outs = coupled_at(&steps);
            let grid: Vec<f64> = (1..=30).map(|i| i as f64 * 0.02).collect();
            let c = survival_curve(&outs, &grid, 1e-3).unwrap();
            prop_assert!(c.p.windows(2).all(|w| w[0] >= w[1]) && c.p[0] <= 1.0);
        }
    }

    #[test]
    fn finite_time_error_is_deterministic() {
        let net = preset(Preset::Sir);
        let cfg = SimConfig::new(50.0, 1e-3, 100, 4).unwrap().paired();
        let x0 = snap_to_lattice(&Preset::Sir.initial_state(), 50.0);
        let plan = SkeletonPlan {
            grid_step: 0.01,
            cells: vec![6_000; 4],
            pairing: Pairing::Dyadic,
            seed: 17,
            reuse: false,
            grow: false,
        };
        let run = || finite_time_error(&net, &cfg, &x0, 5, &plan, &mut RegenSequence::generate(100, 3)).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert!(a.mean > 0.0 && a.mean <= 1.0);
    }

    #[test]
    fn short_skeletons_report_horizon() {
        let net = preset(Preset::Sir);
        let cfg = SimConfig::new(1000.0, 1e-3, 100, 4).unwrap().paired();
        let plan = SkeletonPlan {
            grid_step: 0.01,
            cells: vec![10; 4],
            pairing: Pairing::Dyadic,
            seed: 1,
            reuse: true,
            grow: false,
        };
        let err =
            finite_time_error(&net, &cfg, &[1.3, 1.4], 1, &plan, &mut RegenSequence::generate(10, 3)).unwrap_err();
        assert!(matches!(err, Error::HorizonExceeded { .. }), "{err}");
    }

    #[test]
    fn growing_skeletons_recover_deterministically() {
        let net = preset(Preset::Sir);
        let cfg = SimConfig::new(100.0, 1e-3, 100, 4).unwrap().paired();
        let x0 = snap_to_lattice(&Preset::Sir.initial_state(), 100.0);
        let mut plan = SkeletonPlan {
            grid_step: 0.01,
            cells: vec![10; 4],
            pairing: Pairing::Dyadic,
            seed: 5,
            reuse: false,
            grow: true,
        };
        let run = |p: &SkeletonPlan| finite_time_error(&net, &cfg, &x0, 4, p, &mut RegenSequence::generate(100, 3));
        let a = run(&plan).unwrap();
        assert_eq!(a.mean.to_bits(), run(&plan).unwrap().mean.to_bits());
        plan.reuse = true;
        assert!(run(&plan).is_ok());
    }
}
