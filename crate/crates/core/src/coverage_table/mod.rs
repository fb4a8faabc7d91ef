//! Distribution-free coverage of the quantile-of-quantiles set.
//!
//! `M_{l,k}` depends only on `(m, n, l, k)`, so a [`CoverageTable`] is keyed
//! by `(m, n)` and can be cached on disk and reused across score functions,
//! predictors and miscoverage levels. Entries are materialized lazily: the
//! `(l*, k*)` search walks the feasibility frontier and touches only the
//! columns it needs.

mod brute;
mod cache;
mod closed_form;
mod fast;
mod unbalanced;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_probability, invalid, FedcalError, Result};

pub use brute::{m_lk_bruteforce, m_lk_bruteforce_with_limit, BRUTE_FORCE_LIMIT};
pub use cache::{cache_file_name, CACHE_FORMAT_VERSION};
pub use closed_form::{conditional_bound, conditional_bound_applies, m_nk_gamma};
pub use fast::{m_l_column, m_lk_fast, ColumnBuilder, CoverageEngine};
pub use unbalanced::{find_k_unbalanced, unbalanced_coverages, unbalanced_local_ranks, UnbalancedSelection};

/// Default cap on `m * n`.
pub const DEFAULT_TABLE_CAP: usize = 1_000_000;

/// Slack when testing `M >= 1 - alpha`; absorbs rounding in values such as
/// `18/20` that equal the target exactly.
pub const FEASIBILITY_TOL: f64 = 1e-12;

/// Number of agents `m` and local sample size `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TableKey {
    m: usize,
    n: usize,
}

impl TableKey {
    pub fn new(m: usize, n: usize) -> Result<Self> {
        Self::with_cap(m, n, DEFAULT_TABLE_CAP)
    }

    pub fn with_cap(m: usize, n: usize, cap: usize) -> Result<Self> {
        if m == 0 || n == 0 {
            return invalid(format!("m and n must be >= 1, got m={m}, n={n}"));
        }
        match m.checked_mul(n) {
            Some(total) if total <= cap => Ok(TableKey { m, n }),
            _ => Err(FedcalError::ResourceLimit(format!(
                "m*n = {m}*{n} exceeds the table cap {cap}"
            ))),
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn total(&self) -> usize {
        self.m * self.n
    }
}

/// Local rank `l` and server rank `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QQIndex {
    pub l: usize,
    pub k: usize,
}

impl QQIndex {
    pub fn new(l: usize, k: usize) -> Self {
        QQIndex { l, k }
    }

    pub fn check(&self, key: TableKey) -> Result<()> {
        if self.l == 0 || self.l > key.n() {
            return invalid(format!("l must lie in [1, {}], got {}", key.n(), self.l));
        }
        if self.k == 0 || self.k > key.m() {
            return invalid(format!("k must lie in [1, {}], got {}", key.m(), self.k));
        }
        Ok(())
    }
}

/// The `(l*, k*)` chosen for a miscoverage level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub index: QQIndex,
    pub coverage: f64,
    pub alpha: f64,
}

/// Lazily filled map `(l, k) -> M_{l,k}` for one `(m, n)`.
#[derive(Debug, Clone)]
pub struct CoverageTable {
    key: TableKey,
    entries: BTreeMap<(usize, usize), f64>,
    selected: Option<Selection>,
    engine: Option<CoverageEngine>,
    computed: usize,
}

impl CoverageTable {
    pub fn new(key: TableKey) -> Self {
        CoverageTable {
            key,
            entries: BTreeMap::new(),
            selected: None,
            engine: None,
            computed: 0,
        }
    }

    pub(crate) fn from_entries(key: TableKey, entries: BTreeMap<(usize, usize), f64>) -> Result<Self> {
        for (&(l, k), &v) in &entries {
            QQIndex::new(l, k).check(key)?;
            if !(0.0..=1.0).contains(&v) {
                return invalid(format!("entry ({l},{k}) = {v} is not a probability"));
            }
        }
        let table = CoverageTable {
            key,
            entries,
            selected: None,
            engine: None,
            computed: 0,
        };
        table.check_monotone()?;
        Ok(table)
    }

    pub fn key(&self) -> TableKey {
        self.key
    }

    pub fn get(&self, idx: QQIndex) -> Option<f64> {
        self.entries.get(&(idx.l, idx.k)).copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = (QQIndex, f64)> + '_ {
        self.entries.iter().map(|(&(l, k), &v)| (QQIndex::new(l, k), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn selected(&self) -> Option<Selection> {
        self.selected
    }

    /// Entries evaluated since construction or load.
    pub fn computed_entries(&self) -> usize {
        self.computed
    }

    fn engine(&mut self) -> &CoverageEngine {
        let key = self.key;
        self.engine.get_or_insert_with(|| CoverageEngine::new(key))
    }

    fn insert(&mut self, l: usize, k: usize, v: f64) {
        if self.entries.insert((l, k), v).is_none() {
            self.computed += 1;
        }
    }

    /// `M_{l,k}`, computing and storing it (and the rest of the column above
    /// `k`) if absent.
    pub fn entry(&mut self, idx: QQIndex) -> Result<f64> {
        idx.check(self.key)?;
        if let Some(v) = self.get(idx) {
            return Ok(v);
        }
        let mut col = self.engine().column(idx.l)?;
        for (k, v) in col.advance_to(idx.k)? {
            self.insert(idx.l, k, v);
        }
        Ok(self.entries[&(idx.l, idx.k)])
    }

    fn entry_with(&mut self, idx: QQIndex, col: &mut Option<ColumnBuilder>) -> Result<f64> {
        if let Some(v) = self.get(idx) {
            return Ok(v);
        }
        if col.as_ref().is_none_or(|c| c.l() != idx.l || c.lowest_k() <= idx.k) {
            *col = Some(self.engine().column(idx.l)?);
        }
        let builder = col.as_mut().expect("column just set");
        for (k, v) in builder.advance_to(idx.k)? {
            self.insert(idx.l, k, v);
        }
        Ok(self.entries[&(idx.l, idx.k)])
    }

    /// Evaluate every entry, columns in parallel.
    pub fn fill_all(&mut self) -> Result<()> {
        let engine = self.engine().clone();
        let n = self.key.n();
        let columns: Vec<(usize, Vec<f64>)> = (1..=n)
            .into_par_iter()
            .map(|l| m_l_column(&engine, l).map(|c| (l, c)))
            .collect::<Result<_>>()?;
        for (l, col) in columns {
            for (i, v) in col.into_iter().enumerate() {
                self.insert(l, i + 1, v);
            }
        }
        Ok(())
    }

    /// `argmin { M_{l,k} : M_{l,k} >= 1 - alpha }` over the full grid, ties
    /// broken by smallest `l` then smallest `k`.
    ///
    /// Since `M` is nondecreasing in both ranks, the smallest feasible `k` for
    /// each `l` is nonincreasing in `l`; the walk starts at the smallest `l`
    /// for which `k = m` is feasible and stops once `k = 1` becomes feasible.
    pub fn select(&mut self, alpha: f64) -> Result<Selection> {
        check_probability("alpha", alpha)?;
        let (m, n) = (self.key.m(), self.key.n());
        let target = 1.0 - alpha - FEASIBILITY_TOL;

        let top = self.entry(QQIndex::new(n, m))?;
        if top < target {
            return Err(FedcalError::Infeasible(format!(
                "coverage {} is unreachable with m={m}, n={n}; the largest achievable is {top}",
                1.0 - alpha
            )));
        }

        // Smallest l with M_{l,m} feasible.
        let (mut lo, mut hi) = (1, n);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.entry(QQIndex::new(mid, m))? >= target {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }

        let mut best: Option<(QQIndex, f64)> = None;
        let mut k = m;
        for l in lo..=n {
            let mut col = None;
            while k > 1 && self.entry_with(QQIndex::new(l, k - 1), &mut col)? >= target {
                k -= 1;
            }
            let v = self.entry_with(QQIndex::new(l, k), &mut col)?;
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((QQIndex::new(l, k), v));
            }
            if k == 1 {
                break;
            }
        }
        let (index, coverage) = best.expect("l = n is always feasible here");
        let sel = Selection {
            index,
            coverage,
            alpha,
        };
        self.selected = Some(sel);
        Ok(sel)
    }

    /// Monotonicity in `l` and `k` over stored entries.
    pub fn check_monotone(&self) -> Result<()> {
        const TOL: f64 = 1e-12;
        for (&(l, k), &v) in &self.entries {
            if let Some(&up) = self.entries.get(&(l + 1, k)) {
                if up < v - TOL {
                    return Err(FedcalError::Internal(format!(
                        "M not monotone in l at ({l},{k}): {v} > {up}"
                    )));
                }
            }
            if let Some(&up) = self.entries.get(&(l, k + 1)) {
                if up < v - TOL {
                    return Err(FedcalError::Internal(format!(
                        "M not monotone in k at ({l},{k}): {v} > {up}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// `(l*, k*)` and `M_{l*,k*}` for `(m, n, alpha)`.
pub fn find_lk_star(key: TableKey, alpha: f64) -> Result<(QQIndex, f64)> {
    let sel = CoverageTable::new(key).select(alpha)?;
    Ok((sel.index, sel.coverage))
}
