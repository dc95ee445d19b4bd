//! Closed-form statistical oracles.

/// Upper tail P(X > x) for a chi-square with even df = 2m, via the exact
/// finite Poisson sum P = e^(-x/2) sum_{k<m} (x/2)^k / k!.
pub fn chi2_upper_tail_even_df(df: usize, x: f64) -> f64 {
    assert!(df >= 2 && df.is_multiple_of(2), "even df only");
    let m = df / 2;
    let half = x / 2.0;
    let mut term = 1.0f64; // (x/2)^0 / 0!
    let mut sum = term;
    for k in 1..m {
        term *= half / k as f64;
        sum += term;
    }
    (-half).exp() * sum
}

/// Interpolated quantile of a sorted sample: index q (n - 1), linear
/// between neighbors. Independent twin of the radius-update rule.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = h - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi2_known_values() {
        // P(chi2_2 > x) = e^(-x/2)
        assert!((chi2_upper_tail_even_df(2, 3.0) - (-1.5f64).exp()).abs() < 1e-12);
        // P(chi2_4 > 2) = e^-1 (1 + 1) = 2/e
        assert!((chi2_upper_tail_even_df(4, 2.0) - 2.0 * (-1.0f64).exp()).abs() < 1e-12);
    }
}
