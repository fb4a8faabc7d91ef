//! Poisson-Binomial distance to the Binomial and the heterogeneity penalty.

use serde::{Deserialize, Serialize};

use super::scenario::{HeterogeneityModel, ScoreSampler};
use crate::error::{invalid, Result};
use crate::special::{binomial_pmf, binomial_upper_tail};

/// Constant of the lower bound. Only its existence is asserted by the
/// source bound; 1/124 is the value from Ehm (1991).
pub const EHM_LOWER_CONSTANT: f64 = 1.0 / 124.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoissonBinomialDiagnostic {
    pub exact_tv_to_binomial: f64,
    pub ehm_lower: f64,
    pub ehm_upper: f64,
}

/// Pmf of a sum of independent Bernoulli(`p_j`).
pub fn poisson_binomial_pmf(p: &[f64]) -> Vec<f64> {
    let mut pmf = vec![1.0];
    for &pj in p {
        let mut next = vec![0.0; pmf.len() + 1];
        for (i, &v) in pmf.iter().enumerate() {
            next[i] += v * (1.0 - pj);
            next[i + 1] += v * pj;
        }
        pmf = next;
    }
    pmf
}

fn tv(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Exact TV between `PoisBin(p)` and `Bin(m, mean(p))` with Ehm's bounds.
pub fn poisson_binomial_diagnostic(p: &[f64]) -> Result<PoissonBinomialDiagnostic> {
    if p.is_empty() {
        return invalid("need at least one probability");
    }
    if let Some(bad) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return invalid(format!("probability {bad} outside [0, 1]"));
    }
    let m = p.len();
    let mf = m as f64;
    let mean = p.iter().sum::<f64>() / mf;
    if p.iter().all(|&v| v == p[0]) {
        // Identical laws; skip the rounding noise of two pmf evaluations.
        return Ok(PoissonBinomialDiagnostic {
            exact_tv_to_binomial: 0.0,
            ehm_lower: 0.0,
            ehm_upper: 0.0,
        });
    }
    let exact = tv(&poisson_binomial_pmf(p), &binomial_pmf(m, mean));
    if mean <= 0.0 || mean >= 1.0 {
        return Ok(PoissonBinomialDiagnostic {
            exact_tv_to_binomial: exact,
            ehm_lower: 0.0,
            ehm_upper: 0.0,
        });
    }
    let spread = 1.0 - mean.powi(m as i32 + 1) - (1.0 - mean).powi(m as i32 + 1);
    let var_ratio = p.iter().map(|v| v * (1.0 - v)).sum::<f64>() / (mf * mean * (1.0 - mean));
    let core = (spread * (1.0 - var_ratio)).max(0.0);
    Ok(PoissonBinomialDiagnostic {
        exact_tv_to_binomial: exact,
        ehm_lower: EHM_LOWER_CONSTANT * core,
        ehm_upper: mf / (mf + 1.0) * core,
    })
}

/// `E_S[TV(PoisBin(p*(S)), Bin(m, p~(S)))]` for agents `T_j(base)` and a
/// test score `S ~ base`, where `p*_j(s) = P(Bin(n, F_j(s)) >= l)` and the
/// auxiliary i.i.d. scores are copies of the base with `S~ = S`.
///
/// The expectation uses a `points`-node midpoint rule in probability space;
/// the base must expose its c.d.f. and quantile.
pub fn heterogeneity_gap<S: ScoreSampler + ?Sized>(
    base: &S,
    model: &HeterogeneityModel,
    n: usize,
    l: usize,
    points: usize,
) -> Result<f64> {
    if l == 0 || l > n || points == 0 {
        return invalid("need 1 <= l <= n and a positive number of nodes");
    }
    if base.cdf(0.0).is_none() || base.quantile(0.5).is_none() {
        return invalid(format!("sampler `{}` has no closed-form c.d.f. and quantile", base.name()));
    }
    let m = model.agents();
    let mut total = 0.0;
    for i in 0..points {
        let u = (i as f64 + 0.5) / points as f64;
        let s = base.quantile(u).expect("checked");
        let p: Vec<f64> = model
            .transforms()
            .iter()
            .map(|t| binomial_upper_tail(n, base.cdf(t.invert(s)).expect("checked"), l))
            .collect();
        let p_aux = binomial_upper_tail(n, u, l);
        total += tv(&poisson_binomial_pmf(&p), &binomial_pmf(m, p_aux));
    }
    Ok(total / points as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::federation::UniformScores;
    use proptest::prelude::*;

    #[test]
    fn equal_probabilities_give_zero() {
        let d = poisson_binomial_diagnostic(&[0.3; 7]).unwrap();
        assert_eq!((d.exact_tv_to_binomial, d.ehm_lower, d.ehm_upper), (0.0, 0.0, 0.0));
        let t = tv(&poisson_binomial_pmf(&[0.3; 7]), &binomial_pmf(7, 0.3));
        assert!(t < 1e-12, "{t}");
    }

    #[test]
    fn zero_one_example() {
        let d = poisson_binomial_diagnostic(&[0.0, 1.0]).unwrap();
        assert!((d.exact_tv_to_binomial - 0.5).abs() < 1e-15);
        assert!(d.ehm_upper >= d.exact_tv_to_binomial);
        assert!(poisson_binomial_diagnostic(&[]).is_err());
        assert!(poisson_binomial_diagnostic(&[1.2]).is_err());
    }

    #[test]
    fn pmf_sums_to_one() {
        let pmf = poisson_binomial_pmf(&[0.1, 0.5, 0.9]);
        assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((pmf[0] - 0.9 * 0.5 * 0.1).abs() < 1e-15);
    }

    #[test]
    fn gap_vanishes_without_heterogeneity() {
        let base = UniformScores::standard();
        let id = HeterogeneityModel::identity(5).unwrap();
        assert!(heterogeneity_gap(&base, &id, 20, 18, 500).unwrap() < 1e-12);
        let mut prev = 0.0;
        for spread in [0.05, 0.1, 0.2] {
            let h = HeterogeneityModel::location_shifts(5, spread).unwrap();
            let g = heterogeneity_gap(&base, &h, 20, 18, 500).unwrap();
            assert!(g > prev);
            prev = g;
        }
    }

    proptest! {
        #[test]
        fn exact_tv_within_bounds(p in prop::collection::vec(0.0f64..=1.0, 1..=12)) {
            let d = poisson_binomial_diagnostic(&p).unwrap();
            prop_assert!(d.exact_tv_to_binomial <= d.ehm_upper + 1e-12);
            prop_assert!(d.ehm_lower <= d.exact_tv_to_binomial + 1e-12);
        }
    }
}
