//! Finite-time error between the tau-leaping and diffusion processes driven
//! by paired skeletons, chained over segments.

use qsd_sensitivity::network::Preset;
use qsd_sensitivity::rng::{self, Purpose};
use qsd_sensitivity::sensitivity::{burn_in_pool, finite_time_error, snap_to_lattice, Budgets, SkeletonPlan};
use qsd_sensitivity::simulate::{RegenSequence, SimConfig};
use qsd_sensitivity::Pairing;

fn main() -> qsd_sensitivity::Result<()> {
    let net = Preset::Sir.network();
    for v in [1000.0, 100.0, 10.0] {
        let cfg = SimConfig::with_horizon(v, 1e-3, 0.5, 4)?;
        let (pool, last) = burn_in_pool(&net, &cfg, &Preset::Sir.initial_state(), &Budgets::default(), 4)?;
        let plan = SkeletonPlan {
            grid_step: 0.01,
            cells: SkeletonPlan::sized_from(&net, &cfg, &pool, 0.01, 1.5)?,
            pairing: Pairing::Dyadic,
            seed: rng::stream_id(Purpose::Skeleton, 4),
            reuse: false,
            grow: true,
        };
        let mut regen = RegenSequence::generate(10_000, 4);
        let fte = finite_time_error(
            &net,
            &cfg.clone().paired(),
            &snap_to_lattice(&last, v),
            200,
            &plan,
            &mut regen,
        )?;
        println!("V = {v:>6}: finite-time error {:.4} ± {:.4}", fte.mean, fte.std_error);
    }
    Ok(())
}
