//! Hybrid reflection/maximal coupling of the SIR diffusion, the survival
//! curve of the coupling time, and its exponential tail fit.

use qsd_sensitivity::coupling::{collect_coupling_times, default_threshold, tally, CouplingConfig, StartPairs};
use qsd_sensitivity::network::Preset;
use qsd_sensitivity::sensitivity::{
    burn_in_pool, default_time_grid, fit_exponential_tail, pool_mean, survival_curve, Budgets, TailFitOptions,
};
use qsd_sensitivity::simulate::SimConfig;

fn main() -> qsd_sensitivity::Result<()> {
    let net = Preset::Sir.network();
    let cfg = SimConfig::with_horizon(100.0, 1e-3, 0.5, 9)?;
    let (pool, _) = burn_in_pool(&net, &cfg, &Preset::Sir.initial_state(), &Budgets::default(), 9)?;
    let threshold = default_threshold(&net, &cfg, &pool_mean(&pool))?;
    let cc = CouplingConfig {
        runs: 2000,
        threshold,
        max_steps: 20_000,
        seed: 9,
    };
    let outcomes = collect_coupling_times(&net, &cfg, StartPairs::Reservoir(&pool), &cc)?;
    let (coupled, extinct, censored) = tally(&outcomes);
    println!("threshold {threshold:.4}: {coupled} coupled, {extinct} extinct, {censored} censored");

    let grid = default_time_grid(&outcomes, cfg.step, 40)?;
    let curve = survival_curve(&outcomes, &grid, cfg.step)?;
    let fit = fit_exponential_tail(&curve, &TailFitOptions::default())?;
    for i in (0..grid.len()).step_by(5) {
        println!(
            "t = {:.3}  p = {:.4}  [{:.4}, {:.4}]",
            grid[i], curve.p[i], fit.lower[i], fit.upper[i]
        );
    }
    println!(
        "γ = {:.3}, α(T) = {:.3}, tail from index {:?}, accepted {}",
        fit.gamma,
        (-fit.gamma * cfg.horizon()).exp(),
        fit.tail_start,
        fit.accepted
    );
    Ok(())
}
