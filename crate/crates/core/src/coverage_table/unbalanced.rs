//! Coverage with unequal local sizes `n_1, ..., n_m`.
//!
//! Local ranks are fixed at `l_j = ceil((1 - alpha)(n_j + 1))` (capped at
//! `n_j`) and only the server rank `k` is searched. The sum over subsets of
//! agents whose local statistic falls below the test score is carried by a
//! bivariate generating function `prod_j (y A_j(x) + B_j(x))`, with `A_j`
//! and `B_j` the binomial masses restricted to `[l_j, n_j]` and `[0, l_j - 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{check_probability, invalid, FedcalError, Result};
use crate::order_stats::conformal_rank;
use crate::poly::LogPmf;
use crate::special::{log_sum_exp, LnFactorials};

use super::FEASIBILITY_TOL;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnbalancedSelection {
    pub local_ranks: Vec<usize>,
    pub k: usize,
    pub coverage: f64,
}

/// Local ranks `min(ceil((1 - alpha)(n_j + 1)), n_j)`.
pub fn unbalanced_local_ranks(sizes: &[usize], alpha: f64) -> Vec<usize> {
    sizes.iter().map(|&n| conformal_rank(n, alpha).min(n).max(1)).collect()
}

/// `[M_{l_1..l_m, 1}, ..., M_{l_1..l_m, m}]`.
pub fn unbalanced_coverages(sizes: &[usize], local_ranks: &[usize]) -> Result<Vec<f64>> {
    if sizes.is_empty() {
        return invalid("need at least one agent");
    }
    if sizes.len() != local_ranks.len() {
        return invalid("sizes and local ranks differ in length");
    }
    for (j, (&n, &l)) in sizes.iter().zip(local_ranks).enumerate() {
        if n == 0 {
            return invalid(format!("agent {j} has size 0"));
        }
        if l == 0 || l > n {
            return invalid(format!("agent {j}: local rank {l} outside [1, {n}]"));
        }
    }
    let m = sizes.len();
    let total: usize = sizes.iter().sum();
    let lf = LnFactorials::new(total);
    // A common Binomial(n_j, t) tilt keeps sum W ~ Binomial(total, t).
    let t = local_ranks.iter().sum::<usize>() as f64 / (total + m) as f64;
    let (ln_t, ln_1mt) = (t.ln(), (-t).ln_1p());

    // states[j] = log P(sum W = r, exactly j agents in their upper range, all in range).
    let mut states: Vec<Option<LogPmf>> = vec![Some(LogPmf::unit())];
    for (&n, &l) in sizes.iter().zip(local_ranks) {
        let w: Vec<f64> = (0..=n).map(|i| lf.ln_binom_pmf(n, i, ln_t, ln_1mt)).collect();
        let lower = LogPmf::new(0, w[..l].to_vec());
        let upper = LogPmf::new(l, w[l..].to_vec());
        let mut next: Vec<Option<LogPmf>> = vec![None; states.len() + 1];
        for (j, state) in states.iter().enumerate() {
            let Some(s) = state else { continue };
            let stay = s.convolve(&lower);
            next[j] = Some(match next[j].take() {
                Some(prev) => prev.log_add(&stay),
                None => stay,
            });
            let up = s.convolve(&upper);
            next[j + 1] = Some(match next[j + 1].take() {
                Some(prev) => prev.log_add(&up),
                None => up,
            });
        }
        states = next;
    }

    let mut per_j = vec![0.0; m + 1];
    for (j, state) in states.iter().enumerate() {
        let Some(s) = state else { continue };
        let terms: Vec<f64> = s
            .log_mass
            .iter()
            .enumerate()
            .map(|(i, &v)| v - lf.ln_binom_pmf(total, s.offset + i, ln_t, ln_1mt))
            .collect();
        if terms.iter().any(|v| v.is_nan() || *v > 1e-9) {
            return Err(FedcalError::Internal(format!(
                "unbalanced rectangle probability out of range for j={j}"
            )));
        }
        per_j[j] = log_sum_exp(&terms).exp();
    }
    let denom = total as f64 + 1.0;
    let mut out = vec![0.0; m];
    let mut tail = 0.0;
    for k in (1..=m).rev() {
        tail += per_j[k];
        let frac = tail / denom;
        if !(-1e-9..=1.0 + 1e-9).contains(&frac) {
            return Err(FedcalError::Internal(format!(
                "unbalanced miscoverage mass {frac} outside [0, 1]"
            )));
        }
        out[k - 1] = (1.0 - frac).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Fix the local ranks and return the smallest server rank whose coverage
/// reaches `1 - alpha`.
pub fn find_k_unbalanced(sizes: &[usize], alpha: f64) -> Result<UnbalancedSelection> {
    check_probability("alpha", alpha)?;
    let local_ranks = unbalanced_local_ranks(sizes, alpha);
    let cov = unbalanced_coverages(sizes, &local_ranks)?;
    let target = 1.0 - alpha;
    match cov.iter().position(|&v| v >= target - FEASIBILITY_TOL) {
        Some(i) => Ok(UnbalancedSelection {
            local_ranks,
            k: i + 1,
            coverage: cov[i],
        }),
        None => Err(FedcalError::Infeasible(format!(
            "no server rank reaches coverage {target} with sizes {sizes:?} (max {})",
            cov.last().copied().unwrap_or(0.0)
        ))),
    }
}
