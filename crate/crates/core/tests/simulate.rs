mod common;

use common::chi_square;
use qsd_sensitivity::network::{load_network, Preset, ProcessKind};
use qsd_sensitivity::sensitivity::snap_to_lattice;
use qsd_sensitivity::simulate::{
    em_step, simulate_with_regeneration, tau_leap_step, ChannelClock, FreeNoise, NoiseForm, SimConfig,
};
use qsd_sensitivity::StateVector;
use statrs::distribution::{Discrete, Poisson};

const BIRTH: &str = r#"
species = ["X"]

[[reaction]]
consumed = [0]
produced = [1]
rate = 3.0
"#;

#[test]
fn pure_birth_counts_are_poisson() {
    // With a constant propensity κ the molecule count after n steps is
    // Poisson(V·n·h·κ).
    let net = load_network(BIRTH).unwrap();
    let (v, h, n) = (10.0, 0.01, 5);
    let cfg = SimConfig::new(v, h, n, 1).unwrap();
    let mut noise = FreeNoise::from_seed(21, 0);
    let mut counts = vec![0u64; 64];
    for _ in 0..50_000 {
        let mut x = vec![1.0];
        let mut clock = ChannelClock::new(1);
        for _ in 0..n {
            tau_leap_step(&net, &mut x, &mut clock, &cfg, &mut noise).unwrap();
        }
        counts[((x[0] - 1.0) * v).round() as usize] += 1;
    }
    let pmf = Poisson::new(v * n as f64 * h * 3.0).unwrap();
    let (stat, _) = chi_square(&counts, |k| pmf.pmf(k), 5);
    // 0.999 quantile of chi-square with 5 degrees of freedom.
    assert!(stat < 20.52, "chi2 {stat}");
}

#[test]
fn both_noise_forms_have_the_model_covariance() {
    // SIR at (2, 1): propensities (7, 6, 2, 4) along (1,0), (−1,1), (−1,0),
    // (0,−1), so one step has covariance (h/V)·[[15, −6], [−6, 10]].
    let net = Preset::Sir.network();
    let (v, h) = (50.0, 0.01);
    let cfg = SimConfig::new(v, h, 1, 0).unwrap();
    let exact = [[15.0, -6.0], [-6.0, 10.0]].map(|r| r.map(|c| c * h / v));
    let draws = 100_000;
    for form in [NoiseForm::Rectangular, NoiseForm::Square] {
        let mut noise = FreeNoise::from_seed(8, form as u64);
        let mut incs = Vec::with_capacity(draws);
        for _ in 0..draws {
            let mut x = vec![2.0, 1.0];
            let mut clock = ChannelClock::new(4);
            em_step(&net, &mut x, &mut clock, &cfg, &mut noise, form).unwrap();
            incs.push([x[0] - 2.0, x[1] - 1.0]);
        }
        let mean = [0, 1].map(|i| incs.iter().map(|d| d[i]).sum::<f64>() / draws as f64);
        // drift (7 − 6 − 2, 6 − 4)·h
        assert!((mean[0] + 0.01).abs() < 4.0 * (exact[0][0] / draws as f64).sqrt());
        assert!((mean[1] - 0.02).abs() < 4.0 * (exact[1][1] / draws as f64).sqrt());
        for i in 0..2 {
            for j in 0..2 {
                let c = incs.iter().map(|d| (d[i] - mean[i]) * (d[j] - mean[j])).sum::<f64>() / (draws - 1) as f64;
                let se = ((exact[i][i] * exact[j][j] + exact[i][j].powi(2)) / draws as f64).sqrt();
                assert!(
                    (c - exact[i][j]).abs() < 4.0 * se,
                    "{form:?} ({i},{j}): {c} vs {}",
                    exact[i][j]
                );
            }
        }
    }
}

#[test]
fn small_volume_sir_regenerates_and_stays_interior() {
    let net = Preset::Sir.network();
    let cfg = SimConfig::new(10.0, 1e-3, 1_000_000, 4).unwrap().with_thinning(10);
    let x0 = snap_to_lattice(&Preset::Sir.initial_state(), 10.0);
    for kind in [ProcessKind::Poisson, ProcessKind::Diffusion] {
        let run = simulate_with_regeneration(&net, &cfg, kind, &x0, None, false).unwrap();
        assert!(run.regen_count > 0, "{kind:?}");
        assert_eq!(run.reservoir.len(), 100_000);
        assert!(run.reservoir.iter().all(|x| StateVector(x.to_vec()).is_interior()));
        if kind == ProcessKind::Poisson {
            // lattice states
            assert!(run
                .reservoir
                .iter()
                .flatten()
                .all(|&c| (c * 10.0 - (c * 10.0).round()).abs() < 1e-9));
        }
    }
}

#[test]
fn free_runs_are_reproducible() {
    let net = Preset::Sir.network();
    let x0 = Preset::Sir.initial_state();
    let run = |seed| {
        let cfg = SimConfig::new(20.0, 1e-3, 20_000, seed).unwrap();
        simulate_with_regeneration(&net, &cfg, ProcessKind::Poisson, &x0, None, true).unwrap()
    };
    let (a, b, c) = (run(3), run(3), run(4));
    assert_eq!(a.trajectory, b.trajectory);
    assert_eq!(a.reservoir, b.reservoir);
    assert_ne!(a.final_state, c.final_state);
    assert_eq!(a.trajectory.len(), 20_001);
    let regens = a.trajectory.iter().filter(|r| r.regenerated).count();
    assert_eq!(regens, a.regen_count);
}
