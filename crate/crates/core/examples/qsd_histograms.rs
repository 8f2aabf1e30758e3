//! QSD histograms of the tau-leaping and diffusion processes at two
//! volumes. The small volume is binned coarsely and refined onto the fine
//! mesh before the comparison.

use qsd_sensitivity::network::{Preset, ProcessKind};
use qsd_sensitivity::qsd::{
    empirical_w1, evenly_spaced, free_qsd_samples, histogram, refine_to_common_mesh, tv_distance, Mesh,
};
use qsd_sensitivity::simulate::SimConfig;

fn main() -> qsd_sensitivity::Result<()> {
    let net = Preset::Sir.network();
    let x0 = Preset::Sir.initial_state();
    let (lo, hi) = Preset::Sir.default_mesh_box().expect("SIR has a mesh box");
    let fine = Mesh::uniform(&lo, &hi, 400)?;
    for (v, bins) in [(1000.0, 400), (10.0, 40)] {
        let mesh = Mesh::uniform(&lo, &hi, bins)?;
        let mut h = Vec::new();
        let mut s = Vec::new();
        for (i, kind) in [ProcessKind::Poisson, ProcessKind::Diffusion].into_iter().enumerate() {
            let cfg = SimConfig::new(v, 1e-3, 1_000_000, 11 + i as u64)?.with_thinning(10);
            let (res, regen) = free_qsd_samples(&net, kind, &cfg, &x0)?;
            println!("V = {v}: {kind:?} kept {} states, {regen} regenerations", res.len());
            h.push(refine_to_common_mesh(&histogram(&res, &mesh)?, &fine)?);
            s.push(evenly_spaced(&res, 256));
        }
        println!(
            "V = {v}: TV = {:.4}, capped W1 = {:.4}",
            tv_distance(&h[0], &h[1])?,
            empirical_w1(&s[0], &s[1])?
        );
    }
    Ok(())
}
