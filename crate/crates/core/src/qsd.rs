//! Histogram estimates of quasi-stationary distributions, distances between
//! them, and a finite-state oracle for the `O(h)` discretization error.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{ProcessKind, ReactionNetwork};
use crate::simulate::{simulate_with_regeneration, OccupationReservoir, SimConfig};

/// Fraction of every free run discarded as burn-in before histogramming.
pub const BURN_IN_FRACTION: f64 = 0.1;

/// Uniform bins on `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if !(hi > lo && lo.is_finite() && hi.is_finite()) || bins == 0 {
            return Err(Error::InvalidParameter(format!(
                "bad axis [{lo}, {hi}) with {bins} bins"
            )));
        }
        Ok(Axis { lo, hi, bins })
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.width()
    }

    /// Bin of `v`, and whether it had to be clipped into range.
    #[inline]
    pub fn locate(&self, v: f64) -> (usize, bool) {
        let t = ((v - self.lo) / (self.hi - self.lo) * self.bins as f64).floor();
        if t < 0.0 || t.is_nan() {
            (0, true)
        } else if t >= self.bins as f64 {
            (self.bins - 1, true)
        } else {
            (t as usize, false)
        }
    }
}

/// Product mesh, one [`Axis`] per species; bins are stored row-major with
/// the last axis fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    axes: Vec<Axis>,
}

impl Mesh {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidParameter("mesh needs at least one axis".into()));
        }
        Ok(Mesh { axes })
    }

    /// Same `bins` on every axis of a box.
    pub fn uniform(lo: &[f64], hi: &[f64], bins: usize) -> Result<Self> {
        Mesh::new(
            lo.iter()
                .zip(hi)
                .map(|(&l, &h)| Axis::new(l, h, bins))
                .collect::<Result<_>>()?,
        )
    }

    /// Smallest box holding every state of `reservoirs`, widened by `pad`
    /// of its extent on each side.
    pub fn covering(reservoirs: &[&OccupationReservoir], bins: usize, pad: f64) -> Result<Self> {
        let d = reservoirs.first().ok_or(Error::Empty("no reservoirs"))?.dim();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for x in reservoirs.iter().flat_map(|r| r.iter()) {
            for i in 0..d {
                lo[i] = lo[i].min(x[i]);
                hi[i] = hi[i].max(x[i]);
            }
        }
        if lo.iter().any(|v| !v.is_finite()) {
            return Err(Error::Empty("reservoirs are empty"));
        }
        for (l, h) in lo.iter_mut().zip(hi.iter_mut()) {
            let w = (*h - *l).max(1e-9);
            *l -= pad * w;
            *h += pad * w;
        }
        Mesh::uniform(&lo, &hi, bins)
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn cells(&self) -> usize {
        self.axes.iter().map(|a| a.bins).product()
    }

    /// Flat index of the bin holding `x`, and whether any coordinate was
    /// clipped.
    pub fn locate(&self, x: &[f64]) -> (usize, bool) {
        let mut idx = 0;
        let mut clipped = false;
        for (a, &v) in self.axes.iter().zip(x) {
            let (i, c) = a.locate(v);
            idx = idx * a.bins + i;
            clipped |= c;
        }
        (idx, clipped)
    }

    fn unflatten(&self, mut flat: usize, out: &mut [usize]) {
        for (slot, a) in out.iter_mut().zip(&self.axes).rev() {
            *slot = flat % a.bins;
            flat /= a.bins;
        }
    }

    pub fn center(&self, flat: usize) -> Vec<f64> {
        let mut ix = vec![0; self.dim()];
        self.unflatten(flat, &mut ix);
        ix.iter().zip(&self.axes).map(|(&i, a)| a.center(i)).collect()
    }

    /// Per-axis subdivision factors if `fine` nests `self`.
    fn subdivision(&self, fine: &Mesh) -> Result<Vec<usize>> {
        if self.dim() != fine.dim() {
            return Err(Error::MeshMismatch(format!("{} vs {} axes", self.dim(), fine.dim())));
        }
        self.axes
            .iter()
            .zip(&fine.axes)
            .map(|(c, f)| {
                let tol = 1e-12 * (c.hi - c.lo).abs().max(1.0);
                if (c.lo - f.lo).abs() > tol || (c.hi - f.hi).abs() > tol || f.bins % c.bins != 0 {
                    Err(Error::MeshMismatch(format!(
                        "[{}, {})/{} does not nest into [{}, {})/{}",
                        c.lo, c.hi, c.bins, f.lo, f.hi, f.bins
                    )))
                } else {
                    Ok(f.bins / c.bins)
                }
            })
            .collect()
    }

    fn same_as(&self, other: &Mesh) -> bool {
        self.subdivision(other)
            .map(|s| s.iter().all(|&k| k == 1))
            .unwrap_or(false)
    }
}

/// Mergeable bin counts; partial accumulators from parallel replicas can be
/// combined in any order.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramAccumulator {
    mesh: Mesh,
    counts: Vec<u64>,
    clipped: u64,
}

impl HistogramAccumulator {
    pub fn new(mesh: Mesh) -> Self {
        let cells = mesh.cells();
        HistogramAccumulator {
            mesh,
            counts: vec![0; cells],
            clipped: 0,
        }
    }

    pub fn add(&mut self, x: &[f64]) {
        let (i, c) = self.mesh.locate(x);
        self.counts[i] += 1;
        self.clipped += u64::from(c);
    }

    pub fn extend<'a>(&mut self, states: impl IntoIterator<Item = &'a [f64]>) {
        for x in states {
            self.add(x);
        }
    }

    pub fn merge(&mut self, other: &HistogramAccumulator) -> Result<()> {
        if !self.mesh.same_as(&other.mesh) {
            return Err(Error::MeshMismatch(
                "cannot merge histograms on different meshes".into(),
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.clipped += other.clipped;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn finish(&self) -> Result<HistogramMeasure> {
        let total = self.total();
        if total == 0 {
            return Err(Error::Empty("histogram has no samples"));
        }
        let inv = 1.0 / total as f64;
        Ok(HistogramMeasure {
            mesh: self.mesh.clone(),
            probabilities: self.counts.iter().map(|&c| c as f64 * inv).collect(),
            clip_fraction: self.clipped as f64 * inv,
        })
    }
}

/// Normalized bin masses on a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramMeasure {
    mesh: Mesh,
    probabilities: Vec<f64>,
    clip_fraction: f64,
}

impl HistogramMeasure {
    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    /// Share of samples that fell outside the mesh and were clipped to a
    /// boundary bin.
    pub fn clip_fraction(&self) -> f64 {
        self.clip_fraction
    }

    /// Write `<species…>,probability` rows, one per bin, centers first.
    pub fn write_csv<W: Write>(&self, mut out: W, species: &[String]) -> Result<()> {
        writeln!(out, "{},probability", species.join(","))?;
        for (i, p) in self.probabilities.iter().enumerate() {
            let c = self.mesh.center(i);
            let coords: Vec<String> = c.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{},{p}", coords.join(","))?;
        }
        Ok(())
    }
}

/// Histogram of every state in a reservoir.
pub fn histogram(reservoir: &OccupationReservoir, mesh: &Mesh) -> Result<HistogramMeasure> {
    if reservoir.is_empty() {
        return Err(Error::Empty("reservoir is empty"));
    }
    if reservoir.dim() != mesh.dim() {
        return Err(Error::DimensionMismatch {
            expected: mesh.dim(),
            got: reservoir.dim(),
        });
    }
    let mut acc = HistogramAccumulator::new(mesh.clone());
    acc.extend(reservoir.iter());
    acc.finish()
}

/// Occupation measure of one free regenerating run of `cfg.steps` steps,
/// with the first [`BURN_IN_FRACTION`] dropped. Returns the reservoir and the
/// number of regenerations.
pub fn free_qsd_samples(
    net: &ReactionNetwork,
    kind: ProcessKind,
    cfg: &SimConfig,
    x0: &[f64],
) -> Result<(OccupationReservoir, usize)> {
    let run = simulate_with_regeneration(net, cfg, kind, x0, None, false)?;
    let mut r = run.reservoir;
    r.discard_prefix(BURN_IN_FRACTION);
    if r.is_empty() {
        return Err(Error::Empty("no states left after burn-in"));
    }
    Ok((r, run.regen_count))
}

/// `n` states spread evenly through a reservoir.
pub fn evenly_spaced(reservoir: &OccupationReservoir, n: usize) -> Vec<Vec<f64>> {
    let len = reservoir.len();
    (0..n.min(len))
        .map(|i| reservoir.get(i * len / n.min(len)).to_vec())
        .collect()
}

/// Spread every coarse bin's mass evenly over the fine bins inside it.
pub fn refine_to_common_mesh(coarse: &HistogramMeasure, fine: &Mesh) -> Result<HistogramMeasure> {
    let factors = coarse.mesh.subdivision(fine)?;
    let share = 1.0 / factors.iter().product::<usize>() as f64;
    let d = fine.dim();
    let mut probabilities = vec![0.0; fine.cells()];
    let mut ix = vec![0usize; d];
    for (flat, p) in probabilities.iter_mut().enumerate() {
        fine.unflatten(flat, &mut ix);
        let mut c = 0;
        for ((&i, &k), a) in ix.iter().zip(&factors).zip(&coarse.mesh.axes) {
            c = c * a.bins + i / k;
        }
        *p = coarse.probabilities[c] * share;
    }
    Ok(HistogramMeasure {
        mesh: fine.clone(),
        probabilities,
        clip_fraction: coarse.clip_fraction,
    })
}

/// `½·Σ|a_i − b_i|` on a common mesh.
pub fn tv_distance(a: &HistogramMeasure, b: &HistogramMeasure) -> Result<f64> {
    if !a.mesh.same_as(&b.mesh) {
        return Err(Error::MeshMismatch("total variation needs a common mesh".into()));
    }
    let s: f64 = a
        .probabilities
        .iter()
        .zip(&b.probabilities)
        .map(|(x, y)| (x - y).abs())
        .sum();
    Ok((0.5 * s).min(1.0))
}

pub const MAX_ASSIGNMENT: usize = 512;

/// Capped metric `min(1, ‖x − y‖)`.
pub fn capped_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
        .min(1.0)
}

/// Exact `W1` between two equal-size empirical measures under the capped
/// metric, by optimal assignment.
pub fn empirical_w1(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let n = a.len();
    if n != b.len() {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: b.len(),
        });
    }
    if n == 0 {
        return Err(Error::Empty("no samples"));
    }
    if n > MAX_ASSIGNMENT {
        return Err(Error::TooManySamples(n));
    }
    let cost: Vec<f64> = a
        .iter()
        .flat_map(|x| b.iter().map(move |y| capped_distance(x, y)))
        .collect();
    let assignment = min_cost_assignment(n, &cost);
    let total: f64 = assignment.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    Ok(total / n as f64)
}

/// Hungarian algorithm with potentials on a dense `n×n` row-major cost
/// matrix; returns the column assigned to each row.
fn min_cost_assignment(n: usize, cost: &[f64]) -> Vec<usize> {
    // 1-based rows/columns; column 0 is a sentinel.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=n {
        out[owner[j] - 1] = j - 1;
    }
    out
}

/// Sub-generator of a continuous-time chain on a finite transient class:
/// off-diagonal rates ≥ 0 and row sums ≤ 0, the deficit being the killing
/// rate into the absorbing state.
#[derive(Debug, Clone, PartialEq)]
pub struct SmallChainSpec {
    q: DMatrix<f64>,
}

impl SmallChainSpec {
    pub fn new(q: DMatrix<f64>) -> Result<Self> {
        let n = q.nrows();
        if n == 0 || !q.is_square() {
            return Err(Error::InvalidParameter(
                "generator must be a non-empty square matrix".into(),
            ));
        }
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                let v = q[(i, j)];
                if !v.is_finite() || (i != j && v < 0.0) {
                    return Err(Error::InvalidParameter(format!("bad generator entry ({i}, {j}) = {v}")));
                }
                row += v;
            }
            if row > 1e-12 * q.amax().max(1.0) {
                return Err(Error::InvalidParameter(format!("row {i} sums to {row} > 0")));
            }
        }
        if !strongly_connected(&q) {
            return Err(Error::Reducible);
        }
        Ok(SmallChainSpec { q })
    }

    pub fn generator(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn killing_rates(&self) -> Vec<f64> {
        self.q.row_iter().map(|r| (-r.sum()).max(0.0)).collect()
    }

    /// One-step kernel of tau-leaping on the index lattice: every
    /// off-diagonal channel `i → j` fires Poisson(h·Q_ij) times, each firing
    /// moving the index by `j − i`; a killing firing or a move off the
    /// lattice is absorbed. Firings are enumerated up to `max_firings` in
    /// total per step.
    pub fn tau_leap_kernel(&self, h: f64, max_firings: u32) -> DMatrix<f64> {
        let n = self.q.nrows();
        let kill = self.killing_rates();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            let chans: Vec<(i64, f64)> = (0..n)
                .filter(|&j| j != i && self.q[(i, j)] > 0.0)
                .map(|j| (j as i64 - i as i64, h * self.q[(i, j)]))
                .collect();
            let survive = (-h * kill[i]).exp();
            enumerate_firings(&chans, 0, max_firings, survive, 0, &mut |disp, p| {
                let t = i as i64 + disp;
                if (0..n as i64).contains(&t) {
                    k[(i, t as usize)] += p;
                }
            });
        }
        k
    }
}

fn enumerate_firings(
    chans: &[(i64, f64)],
    idx: usize,
    budget: u32,
    prob: f64,
    disp: i64,
    sink: &mut impl FnMut(i64, f64),
) {
    if idx == chans.len() {
        sink(disp, prob);
        return;
    }
    let (step, mean) = chans[idx];
    let mut pk = (-mean).exp();
    for c in 0..=budget {
        if c > 0 {
            pk *= mean / f64::from(c);
        }
        enumerate_firings(chans, idx + 1, budget - c, prob * pk, disp + step * i64::from(c), sink);
    }
}

fn strongly_connected(q: &DMatrix<f64>) -> bool {
    let n = q.nrows();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let rate = if forward { q[(i, j)] } else { q[(j, i)] };
                if i != j && rate > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// `e^{A}` by scaling and squaring with a Taylor series.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let norm = a
        .row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let s = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a / 2f64.powi(s);
    let n = a.nrows();
    let mut result = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..40 {
        term = &term * &scaled / k as f64;
        result += &term;
        if term.amax() < 1e-18 * result.amax() {
            break;
        }
    }
    for _ in 0..s {
        result = &result * &result;
    }
    result
}

/// l1-normalized dominant left eigenvector of a non-negative matrix by
/// power iteration.
pub fn dominant_left_eigenvector(a: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<(Vec<f64>, f64)> {
    let n = a.nrows();
    let mut pi = DMatrix::from_element(1, n, 1.0 / n as f64);
    for _ in 0..max_iter {
        let next = &pi * a;
        let lambda = next.sum();
        if !(lambda > 0.0) {
            return Err(Error::Degenerate("power iteration collapsed to zero".into()));
        }
        let next = next / lambda;
        let diff = (&next - &pi).abs().sum();
        pi = next;
        if diff < tol {
            return Ok((pi.iter().copied().collect(), lambda));
        }
    }
    Err(Error::NoConvergence(format!(
        "power iteration did not reach {tol} in {max_iter} iterations"
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmallChainQsd {
    /// QSD of the continuous-time chain (left Perron vector of `e^{hQ}`).
    pub pi_exact: Vec<f64>,
    /// QSD of the tau-leaped chain.
    pub pi_tau_leap: Vec<f64>,
    /// Left Perron vector of `I + hQ`.
    pub pi_euler: Vec<f64>,
    /// `‖π − π̂‖₁` with `π̂` the tau-leap QSD.
    pub l1_error: f64,
    /// `‖π − π_euler‖₁`; zero up to rounding since `e^{hQ}` and `I + hQ`
    /// share eigenvectors.
    pub euler_l1_error: f64,
    pub lambda_exact: f64,
    pub lambda_tau_leap: f64,
}

const POWER_TOL: f64 = 1e-12;
const POWER_ITERS: usize = 100_000;
const MAX_FIRINGS: u32 = 7;

/// Exact and discretized QSDs of a finite chain at step `h`.
///
/// Power iteration runs on `A^m` with `m = 2^⌈log₂(1/h)⌉`, which has the
/// same Perron vector as `A` but a gap of order one.
pub fn small_chain_qsd(spec: &SmallChainSpec, h: f64) -> Result<SmallChainQsd> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidParameter(format!("step must be positive, got {h}")));
    }
    let n = spec.q.nrows();
    let power = (1.0 / h).log2().ceil().max(0.0) as u32;
    let accelerate = |a: &DMatrix<f64>| {
        let mut m = a.clone();
        for _ in 0..power {
            m = &m * &m;
        }
        m
    };
    let solve = |a: &DMatrix<f64>| -> Result<(Vec<f64>, f64)> {
        let (pi, lambda_m) = dominant_left_eigenvector(&accelerate(a), POWER_TOL, POWER_ITERS)?;
        Ok((pi, lambda_m.powf(0.5f64.powi(power as i32))))
    };
    let hq = &spec.q * h;
    let (pi_exact, lambda_exact) = solve(&expm(&hq))?;
    let euler = DMatrix::identity(n, n) + &hq;
    if euler.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidParameter(format!(
            "I + hQ has negative entries at h = {h}"
        )));
    }
    let (pi_euler, _) = solve(&euler)?;
    let (pi_tau_leap, lambda_tau_leap) = solve(&spec.tau_leap_kernel(h, MAX_FIRINGS))?;
    let l1 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>();
    Ok(SmallChainQsd {
        l1_error: l1(&pi_exact, &pi_tau_leap),
        euler_l1_error: l1(&pi_exact, &pi_euler),
        pi_exact,
        pi_tau_leap,
        pi_euler,
        lambda_exact,
        lambda_tau_leap,
    })
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(bins: usize) -> Mesh {
        Mesh::uniform(&[0.0], &[1.0], bins).unwrap()
    }

    fn measure(mesh: &Mesh, points: &[f64]) -> HistogramMeasure {
        let mut acc = HistogramAccumulator::new(mesh.clone());
        for &p in points {
            acc.add(&[p]);
        }
        acc.finish().unwrap()
    }

    #[test]
    fn single_state_fills_one_bin() {
        let mut r = OccupationReservoir::new(2, 1);
        r.push(&[0.3, 0.7]);
        let mesh = Mesh::uniform(&[0.0, 0.0], &[1.0, 1.0], 4).unwrap();
        let h = histogram(&r, &mesh).unwrap();
        assert_eq!(h.probabilities().iter().filter(|&&p| p == 1.0).count(), 1);
        assert_eq!(h.probabilities()[4 + 2], 1.0);
        r.push(&[0.26, 0.74]);
        assert_eq!(histogram(&r, &mesh).unwrap().probabilities()[6], 1.0);
        assert!(histogram(&OccupationReservoir::new(2, 1), &mesh).is_err());
    }

    #[test]
    fn clipping_is_recorded() {
        let h = measure(&line(4), &[-1.0, 0.5, 2.0, 0.1]);
        assert_eq!(h.clip_fraction(), 0.5);
        assert_eq!(h.probabilities(), &[0.5, 0.0, 0.25, 0.25]);
    }

    #[test]
    fn refinement_splits_mass() {
        let coarse = measure(&line(1), &[0.4]);
        let fine = refine_to_common_mesh(&coarse, &line(4)).unwrap();
        assert_eq!(fine.probabilities(), &[0.25; 4]);
        let h = measure(&line(3), &[0.1, 0.5, 0.5]);
        assert_eq!(refine_to_common_mesh(&h, &line(3)).unwrap(), h);
        assert!(refine_to_common_mesh(&h, &line(4)).is_err());
        let mesh2 = Mesh::uniform(&[0.0, 0.0], &[1.0, 1.0], 2).unwrap();
        let mut acc = HistogramAccumulator::new(mesh2);
        acc.add(&[0.2, 0.9]);
        acc.add(&[0.7, 0.1]);
        let fine = refine_to_common_mesh(
            &acc.finish().unwrap(),
            &Mesh::uniform(&[0.0, 0.0], &[1.0, 1.0], 6).unwrap(),
        )
        .unwrap();
        assert!((fine.probabilities().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        // bin (0, 1) of the coarse mesh covers fine rows 0..3, columns 3..6
        assert!((fine.probabilities()[2 * 6 + 4] - 0.5 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn tv_basics() {
        let m = line(2);
        let a = measure(&m, &[0.1]);
        let b = measure(&m, &[0.9]);
        assert_eq!(tv_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(tv_distance(&a, &b).unwrap(), 1.0);
        assert!(tv_distance(&a, &measure(&line(3), &[0.1])).is_err());
    }

    #[test]
    fn accumulators_merge() {
        let mut a = HistogramAccumulator::new(line(5));
        let mut b = HistogramAccumulator::new(line(5));
        a.add(&[0.1]);
        b.add(&[0.9]);
        b.add(&[0.95]);
        a.merge(&b).unwrap();
        assert_eq!(a.finish().unwrap().probabilities()[4], 2.0 / 3.0);
        assert!(a.merge(&HistogramAccumulator::new(line(4))).is_err());
    }

    #[test]
    fn w1_examples() {
        let a: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64 * 0.37 % 1.0]).collect();
        assert_eq!(empirical_w1(&a, &a).unwrap(), 0.0);
        assert_eq!(empirical_w1(&[vec![0.0]], &[vec![3.0]]).unwrap(), 1.0);
        let shifted: Vec<Vec<f64>> = a.iter().rev().map(|x| vec![x[0] + 0.1]).collect();
        assert!((empirical_w1(&a, &shifted).unwrap() - 0.1).abs() < 1e-12);
        let big = vec![vec![0.0]; 513];
        assert!(matches!(empirical_w1(&big, &big), Err(Error::TooManySamples(513))));
    }

    // Brute force over all permutations for small n.
    fn brute_assignment(n: usize, cost: &[f64]) -> f64 {
        fn rec(n: usize, row: usize, used: &mut Vec<bool>, cost: &[f64]) -> f64 {
            if row == n {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    best = best.min(cost[row * n + j] + rec(n, row + 1, used, cost));
                    used[j] = false;
                }
            }
            best
        }
        rec(n, 0, &mut vec![false; n], cost)
    }

    proptest! {
        #[test]
        fn hungarian_matches_brute_force(cost in proptest::collection::vec(0.0f64..1.0, 36)) {
            let n = 6;
            let assign = min_cost_assignment(n, &cost);
            let got: f64 = assign.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
            prop_assert!((got - brute_assignment(n, &cost)).abs() < 1e-12);
        }

        #[test]
        fn tv_is_a_metric(a in proptest::collection::vec(0.0f64..1.0, 1..40),
                          b in proptest::collection::vec(0.0f64..1.0, 1..40),
                          c in proptest::collection::vec(0.0f64..1.0, 1..40)) {
            let m = line(8);
            let (a, b, c) = (measure(&m, &a), measure(&m, &b), measure(&m, &c));
            let ab = tv_distance(&a, &b).unwrap();
            prop_assert!((ab - tv_distance(&b, &a).unwrap()).abs() < 1e-15);
            prop_assert!(ab <= tv_distance(&a, &c).unwrap() + tv_distance(&c, &b).unwrap() + 1e-12);
        }
    }

    fn cyclic(n: usize, kill: f64) -> SmallChainSpec {
        let mut q = DMatrix::zeros(n, n);
        for i in 0..n {
            q[(i, (i + 1) % n)] = 1.0;
            q[(i, (i + n - 1) % n)] = 1.0;
            q[(i, i)] = -2.0 - kill;
        }
        SmallChainSpec::new(q).unwrap()
    }

    #[test]
    fn expm_matches_scalar_and_rotation() {
        let a = DMatrix::from_row_slice(1, 1, &[3.0]);
        assert!((expm(&a)[(0, 0)] - 3f64.exp()).abs() < 1e-12 * 3f64.exp());
        let r = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let e = expm(&r);
        assert!((e[(0, 0)] - 1f64.cos()).abs() < 1e-14);
        assert!((e[(1, 0)] - 1f64.sin()).abs() < 1e-14);
    }

    #[test]
    fn uniform_qsd_by_symmetry() {
        let out = small_chain_qsd(&cyclic(5, 0.3), 1e-2).unwrap();
        for p in out.pi_exact.iter().chain(&out.pi_euler) {
            assert!((p - 0.2).abs() < 1e-10);
        }
        assert!((out.lambda_exact - (-0.3e-2f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn outputs_are_probability_vectors() {
        let q = DMatrix::from_row_slice(3, 3, &[-1.5, 1.0, 0.2, 0.4, -0.9, 0.5, 2.0, 0.3, -2.4]);
        let out = small_chain_qsd(&SmallChainSpec::new(q).unwrap(), 5e-3).unwrap();
        for v in [&out.pi_exact, &out.pi_tau_leap, &out.pi_euler] {
            assert!(v.iter().all(|&p| p >= 0.0));
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_state_error_halves_with_h() {
        let q = DMatrix::from_row_slice(2, 2, &[-1.2, 1.0, 0.5, -0.5]);
        let spec = SmallChainSpec::new(q).unwrap();
        let e1 = small_chain_qsd(&spec, 1e-3).unwrap().l1_error;
        let e2 = small_chain_qsd(&spec, 5e-4).unwrap().l1_error;
        let ratio = e1 / e2;
        assert!((1.6..=2.4).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn reducible_and_invalid_generators_rejected() {
        let q = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, -1.0]);
        assert!(matches!(SmallChainSpec::new(q), Err(Error::Reducible)));
        let q = DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, 1.0, -1.0]);
        assert!(SmallChainSpec::new(q).is_err());
    }

    #[test]
    fn tau_leap_kernel_rows_are_substochastic() {
        let spec = cyclic(4, 0.5);
        let k = spec.tau_leap_kernel(0.01, 7);
        for i in 0..4 {
            let s: f64 = k.row(i).sum();
            assert!(s < 1.0 && s > 0.99);
        }
    }
}
