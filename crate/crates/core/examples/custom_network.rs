//! A user-defined network from a TOML document: a logistic birth–death
//! process with a quasi-stationary plateau near x = 1.

use qsd_sensitivity::network::{load_network, ProcessKind};
use qsd_sensitivity::sensitivity::{table_row, Budgets};
use qsd_sensitivity::simulate::{simulate_with_regeneration, SimConfig};

const DOC: &str = r#"
name = "logistic"
species = ["X"]

[[reaction]]
consumed = [1]
produced = [2]
rate = 2.0

[[reaction]]
consumed = [2]
produced = [1]
rate = 1.0

[[reaction]]
consumed = [1]
produced = [0]
rate = 1.0
"#;

fn main() -> qsd_sensitivity::Result<()> {
    let net = load_network(DOC)?;
    let cfg = SimConfig::new(20.0, 1e-3, 100_000, 2)?;
    let run = simulate_with_regeneration(&net, &cfg, ProcessKind::Poisson, &[1.0], None, false)?;
    let mean = run.reservoir.iter().map(|x| x[0]).sum::<f64>() / run.reservoir.len() as f64;
    println!("V = 20: occupation mean {mean:.3}, {} regenerations", run.regen_count);

    let budgets = Budgets {
        segments: 200,
        runs: 1000,
        ..Budgets::default()
    };
    let row = table_row(&net, &[1.0], 100.0, 1e-3, 0.5, &budgets, 2)?;
    println!(
        "V = 100: fte {:.4} ± {:.4}, γ {:.3} (accepted {}), bound {:?}",
        row.fte.mean,
        row.fte.std_error,
        row.tail.gamma,
        row.tail.accepted,
        row.bound()
    );
    Ok(())
}
