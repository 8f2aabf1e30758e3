//! The three benchmark networks: species, reactions, propensities and the
//! deterministic drift at the reference starting point.

use qsd_sensitivity::network::Preset;

fn main() -> qsd_sensitivity::Result<()> {
    for p in Preset::ALL {
        let net = p.network();
        let x = p.initial_state();
        println!("{} ({} species, {} reactions)", p, net.dim(), net.num_reactions());
        println!(
            "  h = {:e}, T(V=1000) = {:e}",
            p.default_step(),
            p.default_horizon(1000.0)
        );
        println!("  x0 = {x:.4?}");
        let f = net.propensities(&x)?;
        for (k, fk) in f.iter().enumerate() {
            println!("  reaction {k}: l = {:?}, f = {fk:.4}", net.stoich_vector(k)?);
        }
        let mut drift = vec![0.0; net.dim()];
        net.drift_into(&x, &mut drift);
        println!("  drift = {drift:.4?}");
    }
    Ok(())
}
