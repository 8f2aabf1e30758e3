#![allow(dead_code)]

/// Kolmogorov–Smirnov critical coefficient at significance 0.01.
pub const KS_C01: f64 = 1.628;

/// One-sample KS statistic of `xs` against `cdf`.
pub fn ks_one(xs: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Two-sample KS statistic.
pub fn ks_two(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

pub fn ks_two_critical(na: usize, nb: usize) -> f64 {
    let (na, nb) = (na as f64, nb as f64);
    KS_C01 * ((na + nb) / (na * nb)).sqrt()
}

pub fn median(v: &[f64]) -> f64 {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Empirical quantile by the nearest-rank rule.
pub fn quantile(v: &[f64], q: f64) -> f64 {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    let idx = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1;
    v[idx]
}

/// Pearson chi-square of integer counts against a pmf, pooling the upper
/// tail into the last cell. Returns `(statistic, degrees of freedom)`.
pub fn chi_square(counts: &[u64], pmf: impl Fn(u64) -> f64, cells: u64) -> (f64, usize) {
    let n: u64 = counts.iter().sum();
    let mut obs = vec![0u64; cells as usize + 1];
    for (k, &c) in counts.iter().enumerate() {
        obs[(k as u64).min(cells) as usize] += c;
    }
    let mut probs: Vec<f64> = (0..cells).map(&pmf).collect();
    probs.push(1.0 - probs.iter().sum::<f64>());
    let stat = obs
        .iter()
        .zip(&probs)
        .map(|(&o, &p)| {
            let e = n as f64 * p;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    (stat, cells as usize)
}
