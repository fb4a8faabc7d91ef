use statrs::function::gamma::ln_gamma;

use crate::error::{check_probability, invalid, Result};

use super::{QQIndex, TableKey};

/// `M_{n,k}` when every agent reports its maximum:
/// `Gamma(k + 1/n) / Gamma(k) * Gamma(m + 1) / Gamma(m + 1/n + 1)`.
pub fn m_nk_gamma(m: usize, n: usize, k: usize) -> Result<f64> {
    if m == 0 || n == 0 {
        return invalid("m and n must be >= 1");
    }
    if k == 0 || k > m {
        return invalid(format!("k must lie in [1, {m}], got {k}"));
    }
    let (m, n, k) = (m as f64, n as f64, k as f64);
    let inv = 1.0 / n;
    let ln = ln_gamma(k + inv) - ln_gamma(k) + ln_gamma(m + 1.0) - ln_gamma(m + inv + 1.0);
    Ok(ln.exp().clamp(0.0, 1.0))
}

/// `alpha + sqrt(ln(1/delta) / (2 m n))`, the level exceeded by the
/// conditional miscoverage with probability at most `delta`.
pub fn conditional_bound(key: TableKey, alpha: f64, delta: f64) -> Result<f64> {
    check_probability("alpha", alpha)?;
    if !(delta > 0.0 && delta <= 0.5) {
        return invalid(format!("delta must lie in (0, 0.5], got {delta}"));
    }
    let mn = key.total() as f64;
    Ok(alpha + ((1.0 / delta).ln() / (2.0 * mn)).sqrt())
}

/// Whether `l * k >= (1 - alpha) m n`, the rank condition behind
/// [`conditional_bound`].
pub fn conditional_bound_applies(key: TableKey, alpha: f64, idx: QQIndex) -> bool {
    let lhs = (idx.l * idx.k) as f64;
    let rhs = (1.0 - alpha) * key.total() as f64;
    lhs >= rhs - 1e-9 * rhs.max(1.0)
}
