//! Log-space helpers for binomial and hypergeometric masses.

use statrs::function::gamma::ln_gamma;

/// `ln(exp(a) + exp(b))` without overflow.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    if max == f64::INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Table of `ln(i!)` for `i = 0..=max`.
#[derive(Debug, Clone)]
pub struct LnFactorials {
    table: Vec<f64>,
}

impl LnFactorials {
    pub fn new(max: usize) -> Self {
        let table = (0..=max)
            .map(|i| if i < 2 { 0.0 } else { ln_gamma(i as f64 + 1.0) })
            .collect();
        Self { table }
    }

    pub fn max(&self) -> usize {
        self.table.len() - 1
    }

    #[inline]
    pub fn ln_fact(&self, i: usize) -> f64 {
        self.table[i]
    }

    /// `ln C(n, k)`; `-inf` when `k > n`.
    #[inline]
    pub fn ln_choose(&self, n: usize, k: usize) -> f64 {
        if k > n {
            return f64::NEG_INFINITY;
        }
        self.table[n] - self.table[k] - self.table[n - k]
    }

    /// Log pmf of `Binomial(n, t)` at `i`, given `ln t` and `ln(1 - t)`.
    #[inline]
    pub fn ln_binom_pmf(&self, n: usize, i: usize, ln_t: f64, ln_1mt: f64) -> f64 {
        if i > n {
            return f64::NEG_INFINITY;
        }
        self.ln_choose(n, i) + i as f64 * ln_t + (n - i) as f64 * ln_1mt
    }
}

/// `ln C(n, k)` from the gamma function, for one-off uses.
pub fn ln_choose(n: u64, k: u64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Binomial pmf vector `P(Bin(n, p) = i)` for `i = 0..=n`.
pub fn binomial_pmf(n: usize, p: f64) -> Vec<f64> {
    if p <= 0.0 {
        let mut v = vec![0.0; n + 1];
        v[0] = 1.0;
        return v;
    }
    if p >= 1.0 {
        let mut v = vec![0.0; n + 1];
        v[n] = 1.0;
        return v;
    }
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    (0..=n)
        .map(|i| (ln_choose(n as u64, i as u64) + i as f64 * lp + (n - i) as f64 * lq).exp())
        .collect()
}

/// `P(Bin(n, p) >= k)`.
pub fn binomial_upper_tail(n: usize, p: f64, k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    binomial_pmf(n, p)[k..].iter().sum::<f64>().clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_add_exp_handles_infinities() {
        assert_eq!(log_add_exp(f64::NEG_INFINITY, 1.5), 1.5);
        assert!((log_add_exp(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((log_add_exp(-1000.0, -1000.0) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn ln_choose_matches_small_integers() {
        let lf = LnFactorials::new(64);
        assert!((lf.ln_choose(10, 3).exp() - 120.0).abs() < 1e-9);
        assert!((lf.ln_choose(64, 32).exp() / 1.832_624_140_942_590_5e18 - 1.0).abs() < 1e-12);
        assert_eq!(lf.ln_choose(3, 4), f64::NEG_INFINITY);
    }

    #[test]
    fn binomial_pmf_sums_to_one() {
        let pmf = binomial_pmf(40, 0.3);
        assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(binomial_upper_tail(5, 0.5, 0), 1.0);
        assert!((binomial_upper_tail(2, 0.5, 2) - 0.25).abs() < 1e-15);
    }
}
