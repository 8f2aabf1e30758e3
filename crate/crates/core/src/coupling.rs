//! Couplings of two copies of the Euler–Maruyama diffusion: reflection while
//! far apart, maximal coupling of the one-step Gaussian kernels once close,
//! and the collection of coupling times over many runs.

use std::io::Write;

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{in_absorbing, ProcessKind, ReactionNetwork};
use crate::rng::{self, Purpose};
use crate::simulate::{em_drift, noise_covariance, CovarianceRoot, OccupationReservoir, SimConfig};

/// Below this smallest singular value `Σeq` is treated as singular.
pub const SINGULAR_TOL: f64 = 1e-10;
pub const MAX_REJECTIONS: usize = 1_000_000;

/// One-step transition `N(y + drift(y), N(y)/V²)` of the square-form
/// Euler–Maruyama scheme.
#[derive(Debug, Clone)]
pub struct GaussianKernel {
    mean: DVector<f64>,
    root: CovarianceRoot,
    inv_volume: f64,
    log_norm: f64,
}

impl GaussianKernel {
    pub fn euler(net: &ReactionNetwork, y: &[f64], cfg: &SimConfig) -> Result<Self> {
        let drift = em_drift(net, y, cfg.step);
        let mean = DVector::from_iterator(y.len(), y.iter().zip(&drift).map(|(a, b)| a + b));
        let root = CovarianceRoot::new(&noise_covariance(net, y, cfg)?)?;
        Self::from_parts(mean, root, cfg.volume)
    }

    /// Kernel `N(mean, (root·root)/volume²)`.
    pub fn from_parts(mean: DVector<f64>, root: CovarianceRoot, volume: f64) -> Result<Self> {
        if root.min_singular() <= SINGULAR_TOL {
            return Err(Error::Degenerate("one-step covariance is singular".into()));
        }
        let d = mean.len() as f64;
        let log_det_half: f64 = root.eigenvalues().iter().map(|l| 0.5 * l.ln() - volume.ln()).sum();
        Ok(GaussianKernel {
            mean,
            root,
            inv_volume: 1.0 / volume,
            log_norm: -0.5 * d * (2.0 * std::f64::consts::PI).ln() - log_det_half,
        })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let w = DVector::from_iterator(
            self.mean.len(),
            (0..self.mean.len()).map(|_| rng.sample::<f64, _>(StandardNormal)),
        );
        &self.mean + self.root.apply(&w) * self.inv_volume
    }

    pub fn log_density(&self, z: &DVector<f64>) -> f64 {
        let w = self.root.solve(&(z - &self.mean)) / self.inv_volume;
        self.log_norm - 0.5 * w.norm_squared()
    }
}

/// Maximal coupling of `p1` and `p2`, in log-density space.
///
/// Draw `z1 ~ p1`; with probability `min(1, p2(z1)/p1(z1))` both copies
/// move to `z1`. Otherwise `z2` is drawn from the residual of `p2` by
/// rejection: `z2 ~ p2`, `v ~ U(0,1)`, accept when `v·p2(z2) ≥ p1(z2)`.
pub fn maximal_coupling_step<T, R, L1, S1, L2, S2>(
    log_p1: L1,
    mut sample1: S1,
    log_p2: L2,
    mut sample2: S2,
    rng: &mut R,
) -> Result<(T, T, bool)>
where
    T: Clone,
    R: Rng + ?Sized,
    L1: Fn(&T) -> f64,
    S1: FnMut(&mut R) -> T,
    L2: Fn(&T) -> f64,
    S2: FnMut(&mut R) -> T,
{
    let z1 = sample1(rng);
    let u = rng::open_unit(rng);
    if u.ln() + log_p1(&z1) < log_p2(&z1) {
        return Ok((z1.clone(), z1, true));
    }
    for _ in 0..MAX_REJECTIONS {
        let z2 = sample2(rng);
        let v = rng::open_unit(rng);
        if v.ln() + log_p2(&z2) >= log_p1(&z2) {
            return Ok((z1, z2, false));
        }
    }
    Err(Error::Degenerate(format!(
        "maximal coupling rejection loop exceeded {MAX_REJECTIONS} iterations"
    )))
}

/// Householder reflection `(I − 2eeᵀ)w`.
pub fn reflect(w: &DVector<f64>, e: &DVector<f64>) -> DVector<f64> {
    w - e * (2.0 * e.dot(w))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    Reflection,
    /// Reflection was impossible (singular `Σeq`); `y2` used fresh noise.
    Independent,
    Maximal,
}

/// Reflection-coupled Euler–Maruyama step of `(y1, y2)` in place, with `w`
/// the noise of `y1`. The reflection direction is
/// `e ∝ Σeq(y2)⁻¹(y1 − y2)`.
pub fn reflection_step<R: Rng + ?Sized>(
    net: &ReactionNetwork,
    cfg: &SimConfig,
    y1: &mut [f64],
    y2: &mut [f64],
    w: &DVector<f64>,
    rng: &mut R,
) -> Result<StepKind> {
    let d = y1.len();
    let inv_v = 1.0 / cfg.volume;
    let root1 = CovarianceRoot::new(&noise_covariance(net, y1, cfg)?)?;
    let root2 = CovarianceRoot::new(&noise_covariance(net, y2, cfg)?)?;
    let diff = DVector::from_iterator(d, y1.iter().zip(y2.iter()).map(|(a, b)| a - b));
    let (w2, kind) = if root2.min_singular() > SINGULAR_TOL && diff.norm() > 0.0 {
        let e = root2.solve(&diff);
        let norm = e.norm();
        if norm.is_finite() && norm > 0.0 {
            (reflect(w, &(e / norm)), StepKind::Reflection)
        } else {
            (fresh_normals(d, rng), StepKind::Independent)
        }
    } else {
        (fresh_normals(d, rng), StepKind::Independent)
    };
    let z1 = root1.apply(w);
    let z2 = root2.apply(&w2);
    let drift1 = em_drift(net, y1, cfg.step);
    let drift2 = em_drift(net, y2, cfg.step);
    for i in 0..d {
        y1[i] += drift1[i] + inv_v * z1[i];
        y2[i] += drift2[i] + inv_v * z2[i];
    }
    Ok(kind)
}

fn fresh_normals<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Coupled,
    Extinct,
    Censored,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Coupled => "coupled",
            Status::Extinct => "extinct",
            Status::Censored => "censored",
        }
    }
}

/// Result of one run. `steps` is the coupling time `τ_c` when coupled, and
/// the number of steps taken otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CouplingOutcome {
    pub run: usize,
    pub status: Status,
    pub steps: usize,
    /// Steps where reflection fell back to independent noise.
    pub fallbacks: usize,
}

impl CouplingOutcome {
    pub fn tau(&self) -> Option<usize> {
        (self.status == Status::Coupled).then_some(self.steps)
    }
}

/// Two diffusion copies driven by a coupling until they meet.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledPair {
    pub y1: Vec<f64>,
    pub y2: Vec<f64>,
    pub coupled: bool,
    pub t: usize,
}

impl CoupledPair {
    pub fn new(x: &[f64], y: &[f64]) -> Self {
        CoupledPair {
            y1: x.to_vec(),
            y2: y.to_vec(),
            coupled: x == y,
            t: 0,
        }
    }

    pub fn distance(&self) -> f64 {
        self.y1
            .iter()
            .zip(&self.y2)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// One step of the hybrid scheme. Once coupled both copies move
    /// together through a single Euler–Maruyama draw.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        net: &ReactionNetwork,
        cfg: &SimConfig,
        threshold: f64,
        rng: &mut R,
    ) -> Result<StepKind> {
        self.t += 1;
        if self.coupled {
            let z = GaussianKernel::euler(net, &self.y1, cfg)?.sample(rng);
            self.y1.copy_from_slice(z.as_slice());
            self.y2.copy_from_slice(z.as_slice());
            return Ok(StepKind::Maximal);
        }
        if self.distance() <= threshold {
            let kernels = GaussianKernel::euler(net, &self.y1, cfg)
                .and_then(|k1| Ok((k1, GaussianKernel::euler(net, &self.y2, cfg)?)));
            if let Ok((k1, k2)) = kernels {
                let (z1, z2, coupled) = maximal_coupling_step(
                    |z| k1.log_density(z),
                    |r: &mut R| k1.sample(r),
                    |z| k2.log_density(z),
                    |r: &mut R| k2.sample(r),
                    rng,
                )?;
                self.y1.copy_from_slice(z1.as_slice());
                self.y2.copy_from_slice(z2.as_slice());
                self.coupled = coupled;
                return Ok(StepKind::Maximal);
            }
        }
        let w = fresh_normals(self.y1.len(), rng);
        reflection_step(net, cfg, &mut self.y1, &mut self.y2, &w, rng)
    }
}

/// Run the hybrid coupling from `(x, y)` until the copies meet, one of them
/// is absorbed, or `max_steps` is reached.
pub fn hybrid_coupling_run<R: Rng + ?Sized>(
    net: &ReactionNetwork,
    cfg: &SimConfig,
    x: &[f64],
    y: &[f64],
    threshold: f64,
    max_steps: usize,
    rng: &mut R,
) -> Result<CouplingOutcome> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "threshold must be positive, got {threshold}"
        )));
    }
    let mut pair = CoupledPair::new(x, y);
    let mut outcome = CouplingOutcome {
        run: 0,
        status: Status::Coupled,
        steps: 0,
        fallbacks: 0,
    };
    if pair.coupled {
        return Ok(outcome);
    }
    while pair.t < max_steps {
        if pair.step(net, cfg, threshold, rng)? == StepKind::Independent {
            outcome.fallbacks += 1;
        }
        outcome.steps = pair.t;
        if pair.coupled {
            return Ok(outcome);
        }
        if in_absorbing(&pair.y1, ProcessKind::Diffusion) || in_absorbing(&pair.y2, ProcessKind::Diffusion) {
            outcome.status = Status::Extinct;
            return Ok(outcome);
        }
    }
    outcome.status = Status::Censored;
    Ok(outcome)
}

/// Where starting pairs come from.
#[derive(Debug, Clone, Copy)]
pub enum StartPairs<'a> {
    /// Two independent uniform draws from a burn-in reservoir per run.
    Reservoir(&'a OccupationReservoir),
    Fixed(&'a [f64], &'a [f64]),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingConfig {
    pub runs: usize,
    pub threshold: f64,
    pub max_steps: usize,
    pub seed: u64,
}

/// `M` independent hybrid coupling runs; run `m` owns the stream
/// `(seed, Coupling, m)`, so the output does not depend on scheduling.
pub fn collect_coupling_times(
    net: &ReactionNetwork,
    cfg: &SimConfig,
    starts: StartPairs<'_>,
    cc: &CouplingConfig,
) -> Result<Vec<CouplingOutcome>> {
    if cc.runs == 0 {
        return Err(Error::InvalidParameter("need at least one coupling run".into()));
    }
    if let StartPairs::Reservoir(r) = starts {
        if r.is_empty() {
            return Err(Error::Empty("start-pair reservoir is empty"));
        }
    }
    (0..cc.runs)
        .into_par_iter()
        .map(|m| {
            let mut rng: ChaCha8Rng = rng::stream(cc.seed, Purpose::Coupling, m as u64);
            let (x, y) = match starts {
                StartPairs::Reservoir(r) => {
                    let i = r.sample_index(rng::open_unit(&mut rng));
                    let j = r.sample_index(rng::open_unit(&mut rng));
                    (r.get(i).to_vec(), r.get(j).to_vec())
                }
                StartPairs::Fixed(x, y) => (x.to_vec(), y.to_vec()),
            };
            let mut out = hybrid_coupling_run(net, cfg, &x, &y, cc.threshold, cc.max_steps, &mut rng)?;
            out.run = m;
            Ok(out)
        })
        .collect()
}

/// Two one-step noise scales at `center`: `2·√(h·tr(Σ_k f_k l_k l_kᵀ)/V)`.
pub fn default_threshold(net: &ReactionNetwork, cfg: &SimConfig, center: &[f64]) -> Result<f64> {
    let n = noise_covariance(net, center, cfg)?;
    Ok(2.0 * n.trace().sqrt() / cfg.volume)
}

/// Counts of `(coupled, extinct, censored)`.
pub fn tally(outcomes: &[CouplingOutcome]) -> (usize, usize, usize) {
    outcomes.iter().fold((0, 0, 0), |(c, e, s), o| match o.status {
        Status::Coupled => (c + 1, e, s),
        Status::Extinct => (c, e + 1, s),
        Status::Censored => (c, e, s + 1),
    })
}

/// `run,status,tau_steps,tau_time` rows; the tau columns are empty unless
/// the run coupled.
pub fn write_outcomes_csv<W: Write>(mut out: W, outcomes: &[CouplingOutcome], h: f64) -> Result<()> {
    writeln!(out, "run,status,tau_steps,tau_time")?;
    for o in outcomes {
        match o.tau() {
            Some(t) => writeln!(out, "{},{},{},{}", o.run, o.status.as_str(), t, t as f64 * h)?,
            None => writeln!(out, "{},{},,", o.run, o.status.as_str())?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{preset, Preset};
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn gauss_1d(mean: f64) -> GaussianKernel {
        let root = CovarianceRoot::new(&DMatrix::from_element(1, 1, 1.0)).unwrap();
        GaussianKernel::from_parts(DVector::from_element(1, mean), root, 1.0).unwrap()
    }

    #[test]
    fn gaussian_log_density_matches_closed_form() {
        let k = gauss_1d(0.3);
        let z = DVector::from_element(1, 1.1);
        let want = Normal::new(0.3, 1.0).unwrap();
        use statrs::distribution::Continuous;
        assert!((k.log_density(&z) - want.ln_pdf(1.1)).abs() < 1e-12);
    }

    #[test]
    fn identical_densities_always_couple() {
        let k = gauss_1d(0.0);
        let mut rng = rng::stream(1, Purpose::Coupling, 0);
        for _ in 0..1000 {
            let (a, b, c) = maximal_coupling_step(
                |z| k.log_density(z),
                |r| k.sample(r),
                |z| k.log_density(z),
                |r| k.sample(r),
                &mut rng,
            )
            .unwrap();
            assert!(c && a == b);
        }
    }

    #[test]
    fn overlap_rate_for_unit_gap() {
        let (k1, k2) = (gauss_1d(0.0), gauss_1d(1.0));
        let mut rng = rng::stream(2, Purpose::Coupling, 0);
        let trials = 20_000;
        let mut hits = 0;
        for _ in 0..trials {
            let (_, _, c) = maximal_coupling_step(
                |z| k1.log_density(z),
                |r| k1.sample(r),
                |z| k2.log_density(z),
                |r| k2.sample(r),
                &mut rng,
            )
            .unwrap();
            hits += usize::from(c);
        }
        let want = 2.0 * Normal::new(0.0, 1.0).unwrap().cdf(-0.5);
        let se = (want * (1.0 - want) / trials as f64).sqrt();
        assert!((hits as f64 / trials as f64 - want).abs() < 4.0 * se);
    }

    #[test]
    fn disjoint_supports_never_couple() {
        let mut rng = rng::stream(3, Purpose::Coupling, 0);
        let log_p1 = |z: &f64| if (0.0..1.0).contains(z) { 0.0 } else { f64::NEG_INFINITY };
        let log_p2 = |z: &f64| if (2.0..3.0).contains(z) { 0.0 } else { f64::NEG_INFINITY };
        for _ in 0..200 {
            let (z1, z2, c) = maximal_coupling_step(
                log_p1,
                |r: &mut ChaCha8Rng| rng::open_unit(r),
                log_p2,
                |r: &mut ChaCha8Rng| 2.0 + rng::open_unit(r),
                &mut rng,
            )
            .unwrap();
            assert!(!c && z1 < 1.0 && z2 >= 2.0);
        }
    }

    #[test]
    fn one_dimensional_reflection_negates() {
        let w = DVector::from_element(1, 0.8);
        assert_eq!(reflect(&w, &DVector::from_element(1, 1.0))[0], -0.8);
        assert_eq!(reflect(&w, &DVector::from_element(1, -1.0))[0], -0.8);
    }

    proptest! {
        #[test]
        fn reflection_preserves_norm(w in proptest::collection::vec(-5.0f64..5.0, 3),
                                     e in proptest::collection::vec(-1.0f64..1.0, 3)) {
            let e = DVector::from_vec(e);
            prop_assume!(e.norm() > 1e-3);
            let e = &e / e.norm();
            let w = DVector::from_vec(w);
            prop_assert!((reflect(&w, &e).norm() - w.norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_start_is_coupled_at_zero() {
        let net = preset(Preset::Sir);
        let cfg = SimConfig::new(1000.0, 1e-3, 500, 0).unwrap();
        let x = Preset::Sir.initial_state();
        let mut rng = rng::stream(0, Purpose::Coupling, 0);
        let out = hybrid_coupling_run(&net, &cfg, &x, &x, 0.01, 10, &mut rng).unwrap();
        assert_eq!((out.status, out.steps), (Status::Coupled, 0));
    }

    #[test]
    fn one_step_far_apart_is_censored() {
        let net = preset(Preset::Sir);
        let cfg = SimConfig::new(1000.0, 1e-3, 500, 0).unwrap();
        let mut rng = rng::stream(0, Purpose::Coupling, 0);
        let out = hybrid_coupling_run(&net, &cfg, &[1.0, 1.0], &[2.0, 2.0], 0.01, 1, &mut rng).unwrap();
        assert_eq!((out.status, out.steps), (Status::Censored, 1));
    }

    #[test]
    fn coupled_pairs_stay_together() {
        let net = preset(Preset::Sir);
        let cfg = SimConfig::new(1000.0, 1e-3, 500, 0).unwrap();
        let x = Preset::Sir.initial_state();
        let mut pair = CoupledPair::new(&x, &[x[0] + 0.002, x[1]]);
        let mut rng = rng::stream(5, Purpose::Coupling, 0);
        let mut met = false;
        for _ in 0..5000 {
            pair.step(&net, &cfg, 0.01, &mut rng).unwrap();
            met |= pair.coupled;
            if met {
                assert_eq!(pair.y1, pair.y2);
            }
        }
        assert!(met);
    }

    #[test]
    fn collector_partitions_runs() {
        let net = preset(Preset::Sir);
        let cfg = SimConfig::new(100.0, 1e-3, 500, 0).unwrap();
        let x = Preset::Sir.initial_state();
        let far = [x[0] * 1.2, x[1] * 0.8];
        let cc = CouplingConfig {
            runs: 16,
            threshold: 0.05,
            max_steps: 300,
            seed: 9,
        };
        let outs = collect_coupling_times(&net, &cfg, StartPairs::Fixed(&x, &far), &cc).unwrap();
        let (c, e, s) = tally(&outs);
        assert_eq!(c + e + s, 16);
        assert!(outs.iter().enumerate().all(|(i, o)| o.run == i));
        let again = collect_coupling_times(&net, &cfg, StartPairs::Fixed(&x, &far), &cc).unwrap();
        assert_eq!(outs, again);
        let zero = CouplingConfig { runs: 0, ..cc };
        assert!(collect_coupling_times(&net, &cfg, StartPairs::Fixed(&x, &far), &zero).is_err());
        let mut csv = Vec::new();
        write_outcomes_csv(&mut csv, &outs[..1], 1e-3).unwrap();
        assert!(String::from_utf8(csv)
            .unwrap()
            .starts_with("run,status,tau_steps,tau_time\n0,"));
    }
}
