//! A paired Poisson/Wiener skeleton: lookups at internal times, the
//! strong-approximation gap `max|P(s) − s − B(s)|`, and the binary cache.

use qsd_sensitivity::{generate_paired_skeleton, PairedSkeleton};

fn main() -> qsd_sensitivity::Result<()> {
    let sk = generate_paired_skeleton(0.01, 1 << 17, 42)?;
    println!("grid step {}, horizon {}", sk.grid_step(), sk.horizon());
    for s in [1.0, 10.0, 100.0, 1000.0] {
        let p = sk.poisson_at(s)?;
        let w = sk.wiener_at(s)?;
        println!("s = {s:>6}: P(s) − s = {:>8.2}, B(s) = {w:>8.2}", p as f64 - s);
    }
    let g = sk.empirical_kmt_gamma();
    println!(
        "max gap / log horizon = {:.3} (worst at s = {:.1})",
        g.gamma_hat, g.argmax_time
    );

    let path = std::env::temp_dir().join("qsdsens-skeleton.bin");
    sk.write_to(std::fs::File::create(&path)?)?;
    let back = PairedSkeleton::read_from(std::fs::File::open(&path)?)?;
    println!("cache round trip identical: {}", back == sk);
    std::fs::remove_file(path)?;
    Ok(())
}
