//! Rectangular-probability evaluation of the coverage `M_{l,k}`.
//!
//! Each column `l` is assembled from the terms
//!
//! ```text
//! S_j = sum_r p_r(a, b),   p_r(a, b) = P(sum T_i = r) * prod P(a_i <= W_i <= b_i) / P(sum W_i = r)
//! ```
//!
//! where `W_i ~ Binomial(n, t)`, `T_i` is `W_i` truncated to `[l, n]` for `j`
//! agents and to `[0, l - 1]` for the other `m - j`, and `r` ranges over
//! `j*l ..= j*n + (m - j)(l - 1)`. Then
//! `M_{l,k} = 1 - sum_{j >= k} C(m, j) S_j / (mn + 1)`.
//!
//! Every factor is carried in log space so that the tails of `sum T_i`
//! (which can sit thousands of orders of magnitude below the mode while
//! `p_r` itself is O(1)) keep full relative precision.

use std::sync::Arc;

use crate::error::{FedcalError, Result};
use crate::poly::LogPmf;
use crate::special::{log_sum_exp, LnFactorials};

use super::TableKey;

/// Slack allowed on `sum_{j>=k} C(m,j) S_j / (mn+1)` leaving `[0, 1]`.
const RANGE_SLACK: f64 = 1e-9;

/// Shared per-`(m, n)` state: log-factorials up to `mn`.
#[derive(Debug, Clone)]
pub struct CoverageEngine {
    key: TableKey,
    lf: Arc<LnFactorials>,
}

impl CoverageEngine {
    pub fn new(key: TableKey) -> Self {
        let lf = Arc::new(LnFactorials::new(key.total()));
        CoverageEngine { key, lf }
    }

    pub fn key(&self) -> TableKey {
        self.key
    }

    pub fn column(&self, l: usize) -> Result<ColumnBuilder> {
        ColumnBuilder::new(self.key, l, Arc::clone(&self.lf))
    }
}

/// Truncated binomial pieces for one local rank `l`.
struct TruncatedParts {
    /// `T` on `[l, n]`, normalized.
    upper: LogPmf,
    /// `T` on `[0, l - 1]`, normalized.
    lower: LogPmf,
    ln_p_upper: f64,
    ln_p_lower: f64,
}

fn truncated_parts(lf: &LnFactorials, n: usize, l: usize, ln_t: f64, ln_1mt: f64) -> TruncatedParts {
    let w: Vec<f64> = (0..=n).map(|i| lf.ln_binom_pmf(n, i, ln_t, ln_1mt)).collect();
    let ln_p_lower = log_sum_exp(&w[..l]);
    let ln_p_upper = log_sum_exp(&w[l..]);
    let lower = LogPmf::new(0, w[..l].iter().map(|v| v - ln_p_lower).collect());
    let upper = LogPmf::new(l, w[l..].iter().map(|v| v - ln_p_upper).collect());
    TruncatedParts {
        upper,
        lower,
        ln_p_upper,
        ln_p_lower,
    }
}

/// Lazily walks `j = m, m-1, ...` for a fixed `l`, producing `M_{l,k}` for
/// decreasing `k`.
pub struct ColumnBuilder {
    key: TableKey,
    l: usize,
    lf: Arc<LnFactorials>,
    ln_t: f64,
    ln_1mt: f64,
    parts: TruncatedParts,
    /// `upper_powers[j]` is the law of the sum of `j` upper-truncated draws.
    upper_powers: Vec<LogPmf>,
    /// Law of the sum of `m - next_j` lower-truncated draws.
    lower_power: LogPmf,
    next_j: usize,
    tail: f64,
}

impl ColumnBuilder {
    fn new(key: TableKey, l: usize, lf: Arc<LnFactorials>) -> Result<Self> {
        let (m, n) = (key.m(), key.n());
        if l == 0 || l > n {
            return Err(FedcalError::InvalidArgument(format!(
                "local rank l must lie in [1, {n}], got {l}"
            )));
        }
        let t = l as f64 / (n as f64 + 1.0);
        let (ln_t, ln_1mt) = (t.ln(), (-t).ln_1p());
        let parts = truncated_parts(&lf, n, l, ln_t, ln_1mt);
        let mut upper_powers = Vec::with_capacity(m + 1);
        upper_powers.push(LogPmf::unit());
        for j in 1..=m {
            let next = upper_powers[j - 1].convolve(&parts.upper);
            upper_powers.push(next);
        }
        Ok(ColumnBuilder {
            key,
            l,
            lf,
            ln_t,
            ln_1mt,
            parts,
            upper_powers,
            lower_power: LogPmf::unit(),
            next_j: m,
            tail: 0.0,
        })
    }

    pub fn l(&self) -> usize {
        self.l
    }

    /// Smallest `k` whose value has been produced so far (`m + 1` if none).
    pub fn lowest_k(&self) -> usize {
        self.next_j + 1
    }

    /// `C(m, j) * S_j`.
    fn term(&self, j: usize) -> Result<f64> {
        let (m, n) = (self.key.m(), self.key.n());
        let mn = m * n;
        let sums = self.upper_powers[j].convolve(&self.lower_power);
        let ln_rect = j as f64 * self.parts.ln_p_upper + (m - j) as f64 * self.parts.ln_p_lower;
        let ln_cmj = self.lf.ln_choose(m, j);
        if !ln_rect.is_finite() || ln_rect > 0.0 {
            return Err(FedcalError::Internal(format!(
                "rectangle log-probability {ln_rect} out of range at (m={m}, n={n}, l={}, j={j})",
                self.l
            )));
        }
        let mut total = 0.0;
        for (idx, &ln_sum_t) in sums.log_mass.iter().enumerate() {
            let r = sums.offset + idx;
            if ln_sum_t.is_nan() || ln_sum_t > 1e-9 {
                return Err(FedcalError::Internal(format!(
                    "truncated-sum log-mass {ln_sum_t} at r={r} (m={m}, n={n}, l={}, j={j})",
                    self.l
                )));
            }
            if ln_sum_t == f64::NEG_INFINITY {
                continue;
            }
            let ln_w = self.lf.ln_binom_pmf(mn, r, self.ln_t, self.ln_1mt);
            let ln_pr = ln_sum_t + ln_rect - ln_w;
            if !ln_pr.is_finite() || ln_pr > 1e-9 {
                return Err(FedcalError::Internal(format!(
                    "hypergeometric rectangle log-probability {ln_pr} at r={r} (m={m}, n={n}, l={}, j={j})",
                    self.l
                )));
            }
            total += (ln_cmj + ln_pr).exp();
        }
        if !total.is_finite() {
            return Err(FedcalError::Internal(format!(
                "non-finite column term at (m={m}, n={n}, l={}, j={j})",
                self.l
            )));
        }
        Ok(total)
    }

    /// Produce `M_{l, next_j}` and move one step down.
    pub fn step(&mut self) -> Result<Option<(usize, f64)>> {
        let j = self.next_j;
        if j == 0 {
            return Ok(None);
        }
        let mn1 = (self.key.total() + 1) as f64;
        self.tail += self.term(j)?;
        let frac = self.tail / mn1;
        if !(-RANGE_SLACK..=1.0 + RANGE_SLACK).contains(&frac) {
            return Err(FedcalError::Internal(format!(
                "miscoverage mass {frac} outside [0, 1] at (m={}, n={}, l={}, k={j})",
                self.key.m(),
                self.key.n(),
                self.l
            )));
        }
        let value = (1.0 - frac).clamp(0.0, 1.0);
        self.lower_power = self.lower_power.convolve(&self.parts.lower);
        self.next_j -= 1;
        Ok(Some((j, value)))
    }

    /// Advance until `M_{l,k}` is produced; returns every `(k', M)` emitted.
    pub fn advance_to(&mut self, k: usize) -> Result<Vec<(usize, f64)>> {
        let mut out = Vec::new();
        while self.next_j >= k && self.next_j > 0 {
            if let Some(e) = self.step()? {
                out.push(e);
            }
        }
        Ok(out)
    }
}

/// `M_{l,k}` through the rectangular-probability decomposition.
pub fn m_lk_fast(key: TableKey, idx: super::QQIndex) -> Result<f64> {
    idx.check(key)?;
    let engine = CoverageEngine::new(key);
    let mut col = engine.column(idx.l)?;
    let emitted = col.advance_to(idx.k)?;
    Ok(emitted.last().expect("advance_to emits k").1)
}

/// The whole column `[M_{l,1}, ..., M_{l,m}]`.
pub fn m_l_column(engine: &CoverageEngine, l: usize) -> Result<Vec<f64>> {
    let m = engine.key().m();
    let mut col = engine.column(l)?;
    let mut out = vec![0.0; m];
    for (k, v) in col.advance_to(1)? {
        out[k - 1] = v;
    }
    Ok(out)
}
