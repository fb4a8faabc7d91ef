//! Locally private quantiles and the private quantile-of-quantiles calibrator.
//!
//! Each agent releases one grid edge chosen by the exponential mechanism, so
//! its single message is `epsilon`-LDP. The server asks for a slightly higher
//! local rank (`l_gamma + l_cor`) to offset the mechanism's downward slack and
//! returns the `k_gamma`-th smallest message.

use rand::Rng;
use rand_distr::{Distribution, Gumbel};
use serde::{Deserialize, Serialize};

use crate::conformal::{CalibrationParams, CalibrationResult, Method};
use crate::coverage_table::{CoverageTable, QQIndex, TableKey};
use crate::error::{check_probability, invalid, FedcalError, Result};
use crate::order_stats::{order_statistic_extended, ExtendedScore, ScoreMatrix, ScoreSample};
use crate::rng::{Domain, Streams};

pub const DEFAULT_BINS: usize = 100;
pub const DEFAULT_GAMMA_POINTS: usize = 20;
pub const DEFAULT_GAMMA_RANGE: (f64, f64) = (1e-3, 0.5);

/// Edges `0 = e_0 < e_1 < ... < e_B = s_max`; bin `b` is `(e_{b-1}, e_b]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct BinGrid {
    edges: Vec<f64>,
}

impl BinGrid {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 {
            return invalid("a bin grid needs at least one bin");
        }
        if edges[0] != 0.0 {
            return invalid(format!("first edge must be 0, got {}", edges[0]));
        }
        for w in edges.windows(2) {
            if w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Greater) || !w[1].is_finite() {
                return invalid(format!("edges must be finite and strictly increasing ({} then {})", w[0], w[1]));
            }
        }
        Ok(BinGrid { edges })
    }

    /// `bins` equal-width bins on `(0, s_max]`.
    pub fn uniform(bins: usize, s_max: f64) -> Result<Self> {
        if bins == 0 {
            return invalid("number of bins must be positive");
        }
        if !(s_max > 0.0 && s_max.is_finite()) {
            return invalid(format!("s_max must be a positive finite number, got {s_max}"));
        }
        let mut edges: Vec<f64> = (0..=bins).map(|b| s_max * b as f64 / bins as f64).collect();
        edges[bins] = s_max;
        BinGrid::new(edges)
    }

    pub fn bins(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn s_max(&self) -> f64 {
        self.edges[self.bins()]
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// `e_b` for `b` in `1..=B`.
    pub fn edge(&self, b: usize) -> f64 {
        self.edges[b]
    }

    /// Bin index in `1..=B` holding `s`. A score of exactly 0 goes to bin 1.
    pub fn bin_of(&self, s: f64) -> Result<usize> {
        if s.is_nan() || s < 0.0 || s > self.s_max() {
            return invalid(format!(
                "score {s} lies outside (0, {}]; clip or rescale before the private mechanism",
                self.s_max()
            ));
        }
        Ok(self.edges.partition_point(|&e| e < s).max(1))
    }

    pub fn contains_edge(&self, v: f64) -> bool {
        self.edges[1..].binary_search_by(|e| e.total_cmp(&v)).is_ok()
    }
}

impl TryFrom<Vec<f64>> for BinGrid {
    type Error = FedcalError;

    fn try_from(edges: Vec<f64>) -> Result<Self> {
        BinGrid::new(edges)
    }
}

impl From<BinGrid> for Vec<f64> {
    fn from(g: BinGrid) -> Self {
        g.edges
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaChoice {
    Fixed(f64),
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    /// Per-agent privacy budget.
    pub epsilon: f64,
    pub grid: BinGrid,
    pub gamma: GammaChoice,
    /// Candidates searched when `gamma` is `Auto`.
    pub gamma_grid: Vec<f64>,
    /// Multiplier on `epsilon` for amplification by shuffling or secure
    /// aggregation; 1 means plain local DP.
    pub amplification: f64,
}

impl DpConfig {
    pub fn new(epsilon: f64, grid: BinGrid) -> Self {
        DpConfig {
            epsilon,
            grid,
            gamma: GammaChoice::Auto,
            gamma_grid: default_gamma_grid(),
            amplification: 1.0,
        }
    }

    pub fn with_gamma(mut self, gamma: GammaChoice) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn effective_epsilon(&self) -> f64 {
        self.epsilon * self.amplification
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return invalid(format!("epsilon must be positive and finite, got {}", self.epsilon));
        }
        if !(self.amplification >= 1.0 && self.amplification.is_finite()) {
            return invalid(format!("amplification must be >= 1, got {}", self.amplification));
        }
        match self.gamma {
            GammaChoice::Fixed(g) => check_probability("gamma", g)?,
            GammaChoice::Auto => {
                if self.gamma_grid.is_empty() {
                    return invalid("gamma grid is empty");
                }
                for &g in &self.gamma_grid {
                    check_probability("gamma grid entry", g)?;
                }
            }
        }
        Ok(())
    }
}

/// `points` log-spaced values from 1e-3 to 0.5.
pub fn default_gamma_grid() -> Vec<f64> {
    log_spaced(DEFAULT_GAMMA_RANGE.0, DEFAULT_GAMMA_RANGE.1, DEFAULT_GAMMA_POINTS)
}

fn log_spaced(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..points)
        .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivateQuantileOutput {
    /// Bin index in `1..=B`.
    pub bin: usize,
    pub bin_edge: f64,
}

/// Exponential mechanism over grid edges for one agent's scores.
#[derive(Debug, Clone)]
pub struct QuantileMechanism<'a> {
    grid: &'a BinGrid,
    /// `-epsilon * w_b / (2 Delta_q)` for `b = 1..=B`.
    logits: Vec<f64>,
}

impl<'a> QuantileMechanism<'a> {
    /// `q` may be 1: the utility is then the count above each edge.
    pub fn new(scores: &ScoreSample, q: f64, epsilon: f64, grid: &'a BinGrid) -> Result<Self> {
        if !(q > 0.0 && q <= 1.0) {
            return invalid(format!("quantile level must lie in (0, 1], got {q}"));
        }
        if epsilon.is_nan() || epsilon <= 0.0 {
            return invalid(format!("epsilon must be positive, got {epsilon}"));
        }
        let b_count = grid.bins();
        let mut hist = vec![0usize; b_count + 1];
        for &s in scores.values() {
            hist[grid.bin_of(s)?] += 1;
        }
        let n = scores.len();
        let mut logits = Vec::with_capacity(b_count);
        let mut below = 0usize;
        for &count in hist.iter().skip(1) {
            let above = n - below - count;
            // w_b / Delta_q written so that q = 1 stays finite.
            let (l, r) = (below as f64, above as f64);
            let u = if q >= 0.5 {
                (l * (1.0 - q) / q).max(r)
            } else {
                l.max(r * q / (1.0 - q))
            };
            logits.push(-epsilon * u / 2.0);
            below += count;
        }
        Ok(QuantileMechanism { grid, logits })
    }

    /// Exact output distribution over bins `1..=B`.
    pub fn probabilities(&self) -> Vec<f64> {
        let top = self.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = self.logits.iter().map(|&z| (z - top).exp()).collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|v| v / total).collect()
    }

    /// Gumbel-max draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> PrivateQuantileOutput {
        let gumbel = Gumbel::new(0.0, 1.0).expect("standard Gumbel");
        let mut best = (0usize, f64::NEG_INFINITY);
        for (i, &z) in self.logits.iter().enumerate() {
            let v = z + gumbel.sample(rng);
            if v > best.1 {
                best = (i, v);
            }
        }
        let bin = best.0 + 1;
        PrivateQuantileOutput {
            bin,
            bin_edge: self.grid.edge(bin),
        }
    }
}

/// One private release of the `q`-quantile of `scores`.
pub fn dp_quantile<R: Rng + ?Sized>(
    scores: &ScoreSample,
    q: f64,
    epsilon: f64,
    grid: &BinGrid,
    rng: &mut R,
) -> Result<PrivateQuantileOutput> {
    Ok(QuantileMechanism::new(scores, q, epsilon, grid)?.sample(rng))
}

/// Rank correction `ceil((2 / epsilon) log(B / (1 - (1 - gamma_alpha)^(1/m))))`.
pub fn l_cor(epsilon: f64, bins: usize, m: usize, gamma_alpha: f64) -> Result<usize> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return invalid(format!("epsilon must be positive, got {epsilon}"));
    }
    if bins == 0 || m == 0 {
        return invalid("bins and m must be positive");
    }
    check_probability("gamma * alpha", gamma_alpha)?;
    let delta = -((-gamma_alpha).ln_1p() / m as f64).exp_m1();
    let v = 2.0 / epsilon * (bins as f64 / delta).ln();
    if !v.is_finite() || v > usize::MAX as f64 / 2.0 {
        return Err(FedcalError::ResourceLimit(format!("rank correction {v} is too large")));
    }
    Ok(v.ceil().max(0.0) as usize)
}

/// Outcome of the `gamma` search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaSelection {
    pub gamma: f64,
    pub l_gamma: usize,
    pub k_gamma: usize,
    pub l_cor: usize,
    /// Non-private coverage `M_{l_gamma + l_cor, k_gamma}`.
    pub m_corrected: f64,
}

impl GammaSelection {
    pub fn corrected_rank(&self) -> usize {
        self.l_gamma + self.l_cor
    }
}

fn evaluate_gamma(
    table: &mut CoverageTable,
    alpha: f64,
    epsilon: f64,
    bins: usize,
    gamma: f64,
) -> Result<Option<GammaSelection>> {
    check_probability("gamma", gamma)?;
    let key = table.key();
    // Level (1 - alpha) / (1 - gamma alpha) as a miscoverage.
    let alpha_gamma = alpha * (1.0 - gamma) / (1.0 - gamma * alpha);
    let sel = match table.select(alpha_gamma) {
        Ok(sel) => sel,
        Err(FedcalError::Infeasible(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let cor = l_cor(epsilon, bins, key.m(), gamma * alpha)?;
    let l = sel.index.l + cor;
    if l > key.n() {
        return Ok(None);
    }
    let m_corrected = table.entry(QQIndex::new(l, sel.index.k))?;
    Ok(Some(GammaSelection {
        gamma,
        l_gamma: sel.index.l,
        k_gamma: sel.index.k,
        l_cor: cor,
        m_corrected,
    }))
}

/// Candidate minimizing `M_{l_gamma + l_cor, k_gamma}`; ties go to the smaller `gamma`.
pub fn choose_gamma(
    table: &mut CoverageTable,
    alpha: f64,
    epsilon: f64,
    bins: usize,
    grid: &[f64],
) -> Result<GammaSelection> {
    check_probability("alpha", alpha)?;
    if grid.is_empty() {
        return invalid("gamma grid is empty");
    }
    let mut candidates = grid.to_vec();
    candidates.sort_by(f64::total_cmp);
    let mut best: Option<GammaSelection> = None;
    for g in candidates {
        if let Some(c) = evaluate_gamma(table, alpha, epsilon, bins, g)? {
            if best.is_none_or(|b| c.m_corrected < b.m_corrected) {
                best = Some(c);
            }
        }
    }
    best.ok_or_else(|| {
        let key = table.key();
        FedcalError::Infeasible(format!(
            "no gamma works for m={}, n={}, alpha={alpha}, epsilon={epsilon}, B={bins}: \
             n is too small for this privacy level (raise n or epsilon, or lower B)",
            key.m(),
            key.n()
        ))
    })
}

/// Server-side plan broadcast before agents respond.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivatePlan {
    pub selection: GammaSelection,
    /// Local quantile level `max((l_gamma + l_cor) / n, 1/2)`.
    pub q: f64,
    pub epsilon: f64,
}

pub fn plan_private(
    key: TableKey,
    alpha: f64,
    cfg: &DpConfig,
    table: Option<&mut CoverageTable>,
) -> Result<PrivatePlan> {
    check_probability("alpha", alpha)?;
    cfg.validate()?;
    let mut own;
    let table = match table {
        Some(t) => {
            if t.key() != key {
                return invalid("coverage table does not match (m, n)");
            }
            t
        }
        None => {
            own = CoverageTable::new(key);
            &mut own
        }
    };
    let epsilon = cfg.effective_epsilon();
    let bins = cfg.grid.bins();
    let selection = match cfg.gamma {
        GammaChoice::Auto => choose_gamma(table, alpha, epsilon, bins, &cfg.gamma_grid)?,
        GammaChoice::Fixed(g) => evaluate_gamma(table, alpha, epsilon, bins, g)?.ok_or_else(|| {
            FedcalError::Infeasible(format!(
                "gamma={g} is infeasible for m={}, n={}, epsilon={epsilon}, B={bins}: n is too small for this privacy level",
                key.m(),
                key.n()
            ))
        })?,
    };
    let q = (selection.corrected_rank() as f64 / key.n() as f64).max(0.5);
    Ok(PrivatePlan { selection, q, epsilon })
}

/// The one message an agent sends under `plan`.
pub fn agent_release<R: Rng + ?Sized>(
    scores: &ScoreSample,
    plan: &PrivatePlan,
    grid: &BinGrid,
    rng: &mut R,
) -> Result<PrivateQuantileOutput> {
    dp_quantile(scores, plan.q, plan.epsilon, grid, rng)
}

/// Server aggregation: `k_gamma`-th smallest message.
pub fn aggregate_private(messages: &[f64], plan: &PrivatePlan) -> Result<ExtendedScore> {
    let values: Vec<ExtendedScore> = messages.iter().map(|&v| ExtendedScore::finite(v)).collect();
    order_statistic_extended(&values, plan.selection.k_gamma)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivateCalibrationParams {
    pub m: usize,
    pub n: usize,
    pub epsilon: f64,
    pub bins: usize,
    pub s_max: f64,
    pub gamma: f64,
    pub l_gamma: usize,
    pub k_gamma: usize,
    pub l_cor: usize,
    pub q: f64,
    pub m_corrected: f64,
    pub seed: u64,
}

pub(crate) fn private_params(plan: &PrivatePlan, m: usize, n: usize, cfg: &DpConfig, seed: u64) -> PrivateCalibrationParams {
    let sel = plan.selection;
    PrivateCalibrationParams {
        m,
        n,
        epsilon: plan.epsilon,
        bins: cfg.grid.bins(),
        s_max: cfg.grid.s_max(),
        gamma: sel.gamma,
        l_gamma: sel.l_gamma,
        k_gamma: sel.k_gamma,
        l_cor: sel.l_cor,
        q: plan.q,
        m_corrected: sel.m_corrected,
        seed,
    }
}

/// Private calibration; agent `j` draws from mechanism stream `(rep, j)`.
pub fn fedcp2_qq_calibrate(
    scores: &ScoreMatrix,
    alpha: f64,
    cfg: &DpConfig,
    streams: Streams,
    rep: u64,
    table: Option<&mut CoverageTable>,
) -> Result<(CalibrationResult, Vec<f64>)> {
    let n = scores.require_balanced()?;
    let m = scores.num_agents();
    let plan = plan_private(TableKey::new(m, n)?, alpha, cfg, table)?;
    let messages = scores
        .agents()
        .iter()
        .enumerate()
        .map(|(j, agent)| {
            let mut rng = streams.stream(Domain::Mechanism, rep, j as u64);
            agent_release(agent, &plan, &cfg.grid, &mut rng).map(|o| o.bin_edge)
        })
        .collect::<Result<Vec<f64>>>()?;
    let q_hat = aggregate_private(&messages, &plan)?;
    let result = CalibrationResult {
        method: Method::Fedcp2Qq,
        alpha,
        q_hat,
        guaranteed_coverage: Some(1.0 - alpha),
        params: CalibrationParams::Fedcp2Qq(private_params(&plan, m, n, cfg, streams.master())),
        score_kind: None,
    };
    Ok((result, messages))
}
