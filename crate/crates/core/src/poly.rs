//! Polynomial products of probability mass functions.
//!
//! [`LogPmf`] keeps every coefficient in log space and convolves directly,
//! giving per-entry relative precision across thousands of orders of
//! magnitude. FFT products would only be accurate relative to the largest
//! coefficient, which loses the tails the coverage sums depend on.

use crate::special::log_add_exp;

pub fn convolve_direct(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (o, &y) in out[i..].iter_mut().zip(b) {
            *o += x * y;
        }
    }
    out
}

/// A mass function on `offset..offset + log_mass.len()` stored as logs.
#[derive(Debug, Clone, PartialEq)]
pub struct LogPmf {
    pub offset: usize,
    pub log_mass: Vec<f64>,
}

impl LogPmf {
    /// Point mass at zero (the empty product).
    pub fn unit() -> Self {
        LogPmf {
            offset: 0,
            log_mass: vec![0.0],
        }
    }

    pub fn new(offset: usize, log_mass: Vec<f64>) -> Self {
        LogPmf { offset, log_mass }
    }

    /// Inclusive upper end of the support.
    pub fn max_index(&self) -> usize {
        self.offset + self.log_mass.len() - 1
    }

    pub fn log_at(&self, r: usize) -> f64 {
        if r < self.offset || r > self.max_index() {
            f64::NEG_INFINITY
        } else {
            self.log_mass[r - self.offset]
        }
    }

    /// Log-domain convolution (distribution of the sum of independent draws).
    pub fn convolve(&self, other: &LogPmf) -> LogPmf {
        let (a, b) = (&self.log_mass, &other.log_mass);
        let len = a.len() + b.len() - 1;
        let mut out = Vec::with_capacity(len);
        for s in 0..len {
            let lo = s.saturating_sub(b.len() - 1);
            let hi = s.min(a.len() - 1);
            let mut max = f64::NEG_INFINITY;
            for i in lo..=hi {
                let v = a[i] + b[s - i];
                if v > max {
                    max = v;
                }
            }
            if max == f64::NEG_INFINITY {
                out.push(max);
                continue;
            }
            let mut acc = 0.0;
            for i in lo..=hi {
                acc += (a[i] + b[s - i] - max).exp();
            }
            out.push(max + acc.ln());
        }
        LogPmf {
            offset: self.offset + other.offset,
            log_mass: out,
        }
    }

    /// Log of the pointwise sum of two mass sequences.
    pub fn log_add(&self, other: &LogPmf) -> LogPmf {
        let offset = self.offset.min(other.offset);
        let top = self.max_index().max(other.max_index());
        let log_mass = (offset..=top)
            .map(|r| log_add_exp(self.log_at(r), other.log_at(r)))
            .collect();
        LogPmf { offset, log_mass }
    }

    pub fn to_linear(&self) -> Vec<f64> {
        self.log_mass.iter().map(|v| v.exp()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_product() {
        assert_eq!(convolve_direct(&[1.0, 1.0], &[1.0, 2.0, 1.0]), vec![1.0, 3.0, 3.0, 1.0]);
        assert!(convolve_direct(&[], &[1.0]).is_empty());
    }

    #[test]
    fn log_pmf_keeps_relative_precision_in_tails() {
        // Bernoulli(1e-200) convolved with itself: P(2) = 1e-400, far below f64.
        let p = LogPmf::new(0, vec![(-1e-200f64).ln_1p(), -200.0 * 10f64.ln()]);
        let two = p.convolve(&p);
        assert_eq!(two.offset, 0);
        assert!((two.log_at(2) - (-400.0 * 10f64.ln())).abs() < 1e-9);
        assert!((two.log_at(1) - (2f64.ln() - 200.0 * 10f64.ln())).abs() < 1e-9);
        assert_eq!(two.log_at(3), f64::NEG_INFINITY);
    }

    proptest! {
        #[test]
        fn log_and_linear_products_agree(
            a in prop::collection::vec(0.01f64..1.0, 1..20),
            b in prop::collection::vec(0.01f64..1.0, 1..20),
            oa in 0usize..5, ob in 0usize..5,
        ) {
            let la = LogPmf::new(oa, a.iter().map(|v| v.ln()).collect());
            let lb = LogPmf::new(ob, b.iter().map(|v| v.ln()).collect());
            let lin = convolve_direct(&a, &b);
            let log = la.convolve(&lb);
            prop_assert_eq!(log.offset, oa + ob);
            for (x, y) in lin.iter().zip(log.to_linear()) {
                prop_assert!((x - y).abs() <= 1e-12 * x.max(1.0));
            }
        }
    }
}
