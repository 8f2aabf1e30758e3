//! Inverse distribution functions used by the quantile couplings.
//!
//! All functions take `u ∈ (0, 1)` and are non-decreasing in `u`, which is
//! what makes a shared uniform a monotone coupling.

use statrs::function::{beta::beta_reg, erf::erfc_inv, gamma::gamma_ur, gamma::ln_gamma};

/// `Φ⁻¹(u)` for the standard normal.
#[inline]
pub fn normal(u: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * u)
}

/// Smallest `k` with `P(Poisson(mean) ≤ k) ≥ u`.
pub fn poisson(u: f64, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    if mean < 40.0 {
        let mut k = 0u64;
        let mut pmf = (-mean).exp();
        let mut cdf = pmf;
        let cap = (mean + 40.0 * mean.sqrt() + 40.0) as u64;
        while cdf < u && k < cap {
            k += 1;
            pmf *= mean / k as f64;
            cdf += pmf;
        }
        return k;
    }
    let z = normal(u);
    let guess = mean + mean.sqrt() * z + (z * z - 1.0) / 6.0;
    let mut k = guess.round().max(0.0) as u64;
    let mut cdf = gamma_ur(k as f64 + 1.0, mean);
    let mut pmf = (k as f64 * mean.ln() - mean - ln_gamma(k as f64 + 1.0)).exp();
    if cdf >= u {
        while k > 0 && cdf - pmf >= u {
            cdf -= pmf;
            pmf *= k as f64 / mean;
            k -= 1;
        }
    } else {
        let cap = (mean + 60.0 * mean.sqrt() + 60.0) as u64;
        while cdf < u && k < cap {
            k += 1;
            pmf *= mean / k as f64;
            cdf += pmf;
        }
    }
    k
}

/// Smallest `k` with `P(Binomial(n, p) ≤ k) ≥ u`.
pub fn binomial(u: f64, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    let q = 1.0 - p;
    let ratio = p / q;
    if n <= 30 {
        let mut k = 0u64;
        let mut pmf = q.powi(n as i32);
        let mut cdf = pmf;
        while cdf < u && k < n {
            pmf *= (n - k) as f64 / (k + 1) as f64 * ratio;
            k += 1;
            cdf += pmf;
        }
        return k;
    }
    let nf = n as f64;
    let z = normal(u);
    let guess = nf * p + (nf * p * q).sqrt() * z;
    let mut k = (guess.round().max(0.0) as u64).min(n);
    let ln_pmf = |k: u64| {
        let kf = k as f64;
        ln_gamma(nf + 1.0) - ln_gamma(kf + 1.0) - ln_gamma(nf - kf + 1.0) + kf * p.ln() + (nf - kf) * q.ln()
    };
    let mut cdf = if k == n {
        1.0
    } else {
        beta_reg(nf - k as f64, k as f64 + 1.0, q)
    };
    let mut pmf = ln_pmf(k).exp();
    if cdf >= u {
        while k > 0 && cdf - pmf >= u {
            cdf -= pmf;
            pmf *= k as f64 / (n - k + 1) as f64 / ratio;
            k -= 1;
        }
    } else {
        while cdf < u && k < n {
            pmf *= (n - k) as f64 / (k + 1) as f64 * ratio;
            k += 1;
            cdf += pmf;
        }
    }
    k
}
