//! Tau-leaping and Euler–Maruyama runs of the SIR network with regeneration
//! from the occupation measure. A small volume makes extinction frequent.

use qsd_sensitivity::network::{Preset, ProcessKind};
use qsd_sensitivity::simulate::{simulate_with_regeneration, write_trajectory_csv, SimConfig};

fn main() -> qsd_sensitivity::Result<()> {
    let net = Preset::Sir.network();
    let x0 = Preset::Sir.initial_state();
    for kind in [ProcessKind::Poisson, ProcessKind::Diffusion] {
        let cfg = SimConfig::new(10.0, 1e-3, 200_000, 3)?;
        let run = simulate_with_regeneration(&net, &cfg, kind, &x0, None, false)?;
        println!(
            "{kind:?}: {} regenerations in {} steps, final state {:.2?}",
            run.regen_count, cfg.steps, run.final_state
        );
    }

    let cfg = SimConfig::new(100.0, 1e-3, 5, 3)?;
    let run = simulate_with_regeneration(&net, &cfg, ProcessKind::Poisson, &x0, None, true)?;
    write_trajectory_csv(std::io::stdout().lock(), net.species(), cfg.step, &run.trajectory)?;
    Ok(())
}
