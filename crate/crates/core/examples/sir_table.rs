//! Reduced-budget rows of the SIR results table: finite-time error,
//! coupling rate, contraction factor and bound per volume.

use qsd_sensitivity::network::Preset;
use qsd_sensitivity::sensitivity::{table_row, write_table_csv, Budgets};

fn main() -> qsd_sensitivity::Result<()> {
    let p = Preset::Sir;
    let budgets = Budgets {
        segments: 300,
        runs: 1000,
        ..Budgets::default()
    };
    let mut rows = Vec::new();
    for (i, v) in [100.0, 10.0].into_iter().enumerate() {
        rows.push(table_row(
            &p.network(),
            &p.initial_state(),
            v,
            p.default_step(),
            p.default_horizon(v),
            &budgets,
            i as u64 + 1,
        )?);
    }
    write_table_csv(std::io::stdout().lock(), &rows)?;
    Ok(())
}
