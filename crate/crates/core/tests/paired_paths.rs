mod common;

use common::{chi_square, ks_one, KS_C01};
use proptest::prelude::*;
use qsd_sensitivity::paired::SkeletonSeed;
use qsd_sensitivity::{PairedSkeleton, Pairing, PathKind};
use statrs::distribution::{ContinuousCDF, Discrete, DiscreteCDF, Normal, Poisson};

fn increments(s: &PairedSkeleton) -> (Vec<u64>, Vec<f64>) {
    let p = s.cum_poisson().windows(2).map(|w| u64::from(w[1] - w[0])).collect();
    let w = s.cum_wiener().windows(2).map(|w| w[1] - w[0]).collect();
    (p, w)
}

fn skeleton(delta: f64, cells: usize, base: u64, pairing: Pairing) -> PairedSkeleton {
    PairedSkeleton::generate(delta, cells, SkeletonSeed { base, channel: 0 }, pairing).unwrap()
}

#[test]
fn wiener_increments_are_gaussian() {
    let delta = 0.01;
    for pairing in [Pairing::Dyadic, Pairing::PerCell] {
        let (_, w) = increments(&skeleton(delta, 1 << 14, 3, pairing));
        let n = Normal::new(0.0, delta.sqrt()).unwrap();
        let d = ks_one(&w, |x| n.cdf(x));
        assert!(d < KS_C01 / (w.len() as f64).sqrt(), "{pairing:?}: KS {d}");
    }
}

#[test]
fn poisson_increments_are_poisson() {
    // Unit cells give a non-degenerate count distribution.
    let delta = 1.0;
    let pmf = Poisson::new(delta).unwrap();
    for pairing in [Pairing::Dyadic, Pairing::PerCell] {
        let (p, _) = increments(&skeleton(delta, 1 << 14, 4, pairing));
        let mut counts = vec![0u64; 16];
        for k in p {
            counts[k as usize] += 1;
        }
        let (stat, dof) = chi_square(&counts, |k| pmf.pmf(k), 5);
        // 0.999 quantile of chi-square with 5 degrees of freedom.
        assert!(stat < 20.52, "{pairing:?}: chi2 {stat} on {dof} dof");
    }
}

/// `E|P − Δ − W|` per cell under the per-cell quantile coupling, by
/// midpoint quadrature of the two inverse CDFs over the shared uniform.
fn per_cell_deviation(delta: f64) -> f64 {
    let pois = Poisson::new(delta).unwrap();
    let norm = Normal::new(0.0, delta.sqrt()).unwrap();
    let n = 200_000;
    (0..n)
        .map(|i| {
            let u = (i as f64 + 0.5) / n as f64;
            let k = pois.inverse_cdf(u) as f64;
            (k - delta - norm.inverse_cdf(u)).abs()
        })
        .sum::<f64>()
        / n as f64
}

#[test]
fn per_cell_deviation_matches_quadrature() {
    for delta in [0.01, 0.5] {
        let s = skeleton(delta, 200_000, 9, Pairing::PerCell);
        let (p, w) = increments(&s);
        let dev: Vec<f64> = p.iter().zip(&w).map(|(&a, &b)| (a as f64 - delta - b).abs()).collect();
        let n = dev.len() as f64;
        let mean = dev.iter().sum::<f64>() / n;
        let sd = (dev.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let exact = per_cell_deviation(delta);
        assert!(
            (mean - exact).abs() < 4.0 * sd / n.sqrt(),
            "Δ = {delta}: mean {mean} vs {exact}"
        );
    }
}

#[test]
fn dyadic_pairing_tracks_far_better_than_per_cell() {
    let (delta, cells) = (0.01, 1 << 17);
    let dyadic = skeleton(delta, cells, 5, Pairing::Dyadic)
        .empirical_kmt_gamma()
        .gamma_hat;
    let per_cell = skeleton(delta, cells, 5, Pairing::PerCell)
        .empirical_kmt_gamma()
        .gamma_hat;
    assert!(dyadic * 5.0 < per_cell, "dyadic {dyadic}, per-cell {per_cell}");
}

#[test]
fn lookups_past_the_horizon_fail() {
    let s = skeleton(0.1, 10, 1, Pairing::Dyadic);
    assert!(s.path_value(PathKind::Poisson, 1.0).is_ok());
    assert!(s.path_value(PathKind::Wiener, 1.5).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn poisson_path_is_nondecreasing(seed in any::<u64>(), per_cell in any::<bool>(), cells in 1usize..2000) {
        let pairing = if per_cell { Pairing::PerCell } else { Pairing::Dyadic };
        let s = skeleton(0.05, cells, seed, pairing);
        let mut last = 0.0;
        for i in 0..=4 * cells {
            let t = s.horizon() * i as f64 / (4 * cells) as f64;
            let v = s.path_value(PathKind::Poisson, t).unwrap();
            prop_assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn same_seed_same_paths(seed in any::<u64>()) {
        let a = skeleton(0.01, 512, seed, Pairing::Dyadic);
        let b = skeleton(0.01, 512, seed, Pairing::Dyadic);
        prop_assert_eq!(a.cum_poisson(), b.cum_poisson());
        prop_assert_eq!(a.cum_wiener(), b.cum_wiener());
    }
}
