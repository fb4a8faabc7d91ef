//! Direct summation of the coverage formula with exact integer weights.
//!
//! The nested sums over `(i_1, ..., i_m)` are grouped by multiset: each
//! multiset of local counts stands for `multinomial` ordered tuples, so the
//! enumeration size is `C(m + n, n)` rather than `(n + 1)^m`.

use std::collections::BTreeMap;

use crate::error::{FedcalError, Result};

use super::{QQIndex, TableKey};

/// Default guard on `m * n` for the direct evaluation.
pub const BRUTE_FORCE_LIMIT: usize = 64;

fn binomial_table(max: usize) -> Vec<Vec<u128>> {
    let mut c = vec![vec![0u128; max + 1]; max + 1];
    for a in 0..=max {
        c[a][0] = 1;
        for b in 1..=a {
            c[a][b] = c[a - 1][b - 1] + if b < a { c[a - 1][b] } else { 0 };
        }
    }
    c
}

/// Sum over multisets of `size` values from `lo..=hi` of
/// `(#orderings) * prod C(n, value)`, keyed by the multiset total.
fn multiset_weights(c: &[Vec<u128>], n: usize, lo: usize, hi: usize, size: usize) -> BTreeMap<usize, u128> {
    #[allow(clippy::too_many_arguments)]
    fn rec(
        c: &[Vec<u128>],
        n: usize,
        value: usize,
        hi: usize,
        remaining: usize,
        sum: usize,
        weight: u128,
        out: &mut BTreeMap<usize, u128>,
    ) {
        if remaining == 0 {
            *out.entry(sum).or_insert(0) += weight;
            return;
        }
        if value > hi {
            return;
        }
        let mut w = weight;
        for count in 0..=remaining {
            if count > 0 {
                w *= c[n][value];
            }
            // Choose which `count` of the remaining positions take `value`.
            let placed = w * c[remaining][count];
            rec(c, n, value + 1, hi, remaining - count, sum + count * value, placed, out);
        }
    }
    let mut out = BTreeMap::new();
    rec(c, n, lo, hi, size, 0, 1, &mut out);
    out
}

/// `M_{l,k}` by direct summation; refuses `m * n` above [`BRUTE_FORCE_LIMIT`].
pub fn m_lk_bruteforce(key: TableKey, idx: QQIndex) -> Result<f64> {
    m_lk_bruteforce_with_limit(key, idx, BRUTE_FORCE_LIMIT)
}

pub fn m_lk_bruteforce_with_limit(key: TableKey, idx: QQIndex, limit: usize) -> Result<f64> {
    idx.check(key)?;
    let (m, n, l, k) = (key.m(), key.n(), idx.l, idx.k);
    let mn = m * n;
    if mn > limit {
        return Err(FedcalError::ResourceLimit(format!(
            "direct summation needs m*n <= {limit}, got {mn}"
        )));
    }
    let c = binomial_table(mn.max(m));
    let mut miss = 0.0;
    for j in k..=m {
        let upper = multiset_weights(&c, n, l, n, j);
        let lower = multiset_weights(&c, n, 0, l - 1, m - j);
        let mut s = 0.0;
        for (&ru, &wu) in &upper {
            for (&rl, &wl) in &lower {
                let r = ru + rl;
                s += (wu * wl) as f64 / c[mn][r] as f64;
            }
        }
        miss += c[m][j] as f64 * s;
    }
    Ok(1.0 - miss / (mn as f64 + 1.0))
}
