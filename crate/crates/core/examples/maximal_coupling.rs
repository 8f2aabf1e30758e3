//! Maximal coupling of two unit Gaussians one standard deviation apart:
//! the copies coincide with probability 1 − TV = 2Φ(−1/2).

use qsd_sensitivity::coupling::maximal_coupling_step;
use qsd_sensitivity::rng::{self, Purpose};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

fn main() -> qsd_sensitivity::Result<()> {
    let mut r = rng::stream(5, Purpose::Coupling, 0);
    let trials = 100_000;
    let mut met = 0;
    for _ in 0..trials {
        let (_, _, same) = maximal_coupling_step(
            |z: &f64| -0.5 * z * z,
            |r: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(r) },
            |z: &f64| -0.5 * (z - 1.0) * (z - 1.0),
            |r: &mut ChaCha8Rng| -> f64 { 1.0 + Distribution::<f64>::sample(&StandardNormal, r) },
            &mut r,
        )?;
        met += same as usize;
    }
    let exact = 2.0 * Normal::standard().cdf(-0.5);
    println!(
        "met {:.4} of the time, 2Φ(−1/2) = {exact:.4}",
        met as f64 / trials as f64
    );
    Ok(())
}
