//! Order statistics and the quantile-of-quantiles estimator.
//!
//! Ranks are 1-based and follow multiset semantics: duplicates occupy
//! distinct ranks. A rank beyond the sample size yields `+inf`.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// A real score or the `+inf` sentinel returned for out-of-range ranks.
///
/// Serialized as a number, or as the string `"+inf"` for the sentinel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "ScoreRepr", try_from = "ScoreRepr")]
pub struct ExtendedScore(f64);

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ScoreRepr {
    Finite(f64),
    Text(String),
}

impl From<ExtendedScore> for ScoreRepr {
    fn from(s: ExtendedScore) -> Self {
        if s.is_infinite() {
            ScoreRepr::Text("+inf".to_string())
        } else {
            ScoreRepr::Finite(s.0)
        }
    }
}

impl TryFrom<ScoreRepr> for ExtendedScore {
    type Error = String;

    fn try_from(r: ScoreRepr) -> std::result::Result<Self, String> {
        match r {
            ScoreRepr::Finite(v) if v.is_finite() => Ok(ExtendedScore(v)),
            ScoreRepr::Text(t) if matches!(t.as_str(), "+inf" | "inf" | "infinity") => {
                Ok(ExtendedScore::INFINITY)
            }
            ScoreRepr::Finite(v) => Err(format!("invalid score {v}")),
            ScoreRepr::Text(t) => Err(format!("invalid score `{t}`")),
        }
    }
}

impl ExtendedScore {
    pub const INFINITY: ExtendedScore = ExtendedScore(f64::INFINITY);

    pub fn finite(value: f64) -> Self {
        debug_assert!(value.is_finite());
        ExtendedScore(value)
    }

    pub fn is_infinite(self) -> bool {
        self.0 == f64::INFINITY
    }

    /// The raw value, `f64::INFINITY` for the sentinel.
    pub fn value(self) -> f64 {
        self.0
    }

    /// Non-strict membership test `score <= self`.
    pub fn admits(self, score: f64) -> bool {
        score <= self.0
    }
}

impl Eq for ExtendedScore {}

impl PartialOrd for ExtendedScore {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ExtendedScore {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl fmt::Display for ExtendedScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            write!(f, "+inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

/// One agent's nonconformity scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSample(Vec<f64>);

impl ScoreSample {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return invalid(format!("score #{i} is not finite ({})", values[i]));
        }
        Ok(ScoreSample(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Scores held by `m` agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    agents: Vec<ScoreSample>,
}

impl ScoreMatrix {
    pub fn new(agents: Vec<ScoreSample>) -> Result<Self> {
        if agents.is_empty() {
            return invalid("a score matrix needs at least one agent");
        }
        if let Some(j) = agents.iter().position(|a| a.is_empty()) {
            return invalid(format!("agent {j} holds no scores"));
        }
        Ok(ScoreMatrix { agents })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(rows.into_iter().map(ScoreSample::new).collect::<Result<_>>()?)
    }

    pub fn agents(&self) -> &[ScoreSample] {
        &self.agents
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.agents.iter().map(ScoreSample::len).collect()
    }

    /// The common local size when every agent holds the same number of scores.
    pub fn balanced_size(&self) -> Option<usize> {
        let n = self.agents[0].len();
        self.agents.iter().all(|a| a.len() == n).then_some(n)
    }

    pub fn require_balanced(&self) -> Result<usize> {
        match self.balanced_size() {
            Some(n) => Ok(n),
            None => invalid(format!(
                "method needs equal local sizes, got {:?}",
                self.sizes()
            )),
        }
    }

    /// All scores pooled into a single sample.
    pub fn pooled(&self) -> ScoreSample {
        ScoreSample(self.agents.iter().flat_map(|a| a.0.iter().copied()).collect())
    }
}

fn kth_smallest(values: &[f64], k: usize) -> ExtendedScore {
    if k > values.len() {
        return ExtendedScore::INFINITY;
    }
    let mut buf = values.to_vec();
    let (_, kth, _) = buf.select_nth_unstable_by(k - 1, f64::total_cmp);
    ExtendedScore::finite(*kth)
}

/// The `k`-th smallest score, or `+inf` when `k` exceeds the sample size.
pub fn order_statistic(sample: &ScoreSample, k: usize) -> Result<ExtendedScore> {
    if k == 0 {
        return invalid("order statistic rank must be >= 1");
    }
    Ok(kth_smallest(sample.values(), k))
}

/// Rank selection over extended values (used by the server, which may hold `+inf`).
pub fn order_statistic_extended(values: &[ExtendedScore], k: usize) -> Result<ExtendedScore> {
    if k == 0 {
        return invalid("order statistic rank must be >= 1");
    }
    if k > values.len() {
        return Ok(ExtendedScore::INFINITY);
    }
    let mut buf = values.to_vec();
    let (_, kth, _) = buf.select_nth_unstable(k - 1);
    Ok(*kth)
}

/// The `k`-th smallest among the agents' `l`-th smallest local scores.
pub fn quantile_of_quantiles(scores: &ScoreMatrix, l: usize, k: usize) -> Result<ExtendedScore> {
    if l == 0 {
        return invalid("local rank l must be >= 1");
    }
    let m = scores.num_agents();
    if k == 0 || k > m {
        return invalid(format!("server rank k must lie in [1, {m}], got {k}"));
    }
    let local: Vec<ExtendedScore> = scores
        .agents()
        .iter()
        .map(|a| kth_smallest(a.values(), l))
        .collect();
    order_statistic_extended(&local, k)
}

/// Rank `ceil((n + 1)(1 - alpha))` used by split conformal calibration.
pub fn conformal_rank(n: usize, alpha: f64) -> usize {
    // Guard against 0.9 * 20 = 18.000000000000004 style round-up.
    let x = (n as f64 + 1.0) * (1.0 - alpha);
    let r = x.round();
    if (x - r).abs() < 1e-9 * x.max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(v: &[f64]) -> ScoreSample {
        ScoreSample::new(v.to_vec()).unwrap()
    }

    #[test]
    fn order_statistic_examples() {
        assert_eq!(order_statistic(&s(&[3.0, 1.0, 2.0]), 2).unwrap().value(), 2.0);
        assert!(order_statistic(&s(&[1.0]), 2).unwrap().is_infinite());
        assert_eq!(order_statistic(&s(&[5.0, 5.0, 1.0]), 2).unwrap().value(), 5.0);
        assert!(order_statistic(&s(&[1.0]), 0).is_err());
    }

    #[test]
    fn extended_score_json() {
        let inf = serde_json::to_string(&ExtendedScore::INFINITY).unwrap();
        assert_eq!(inf, "\"+inf\"");
        let back: ExtendedScore = serde_json::from_str(&inf).unwrap();
        assert!(back.is_infinite());
        let two: ExtendedScore = serde_json::from_str("2.5").unwrap();
        assert_eq!(two.value(), 2.5);
        assert!(serde_json::from_str::<ExtendedScore>("\"-inf\"").is_err());
    }

    #[test]
    fn rejects_non_finite_scores() {
        assert!(ScoreSample::new(vec![1.0, f64::NAN]).is_err());
        assert!(ScoreSample::new(vec![f64::INFINITY]).is_err());
        assert!(ScoreMatrix::from_rows(vec![]).is_err());
        assert!(ScoreMatrix::from_rows(vec![vec![]]).is_err());
    }

    #[test]
    fn qq_examples() {
        let one = ScoreMatrix::from_rows(vec![vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(quantile_of_quantiles(&one, 2, 1).unwrap().value(), 2.0);

        let three =
            ScoreMatrix::from_rows(vec![vec![1.0, 4.0], vec![2.0, 3.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(quantile_of_quantiles(&three, 2, 2).unwrap().value(), 4.0);

        let tiny = ScoreMatrix::from_rows(vec![vec![1.0], vec![2.0]]).unwrap();
        assert!(quantile_of_quantiles(&tiny, 2, 1).unwrap().is_infinite());
        assert!(quantile_of_quantiles(&tiny, 1, 3).is_err());
    }

    #[test]
    fn conformal_rank_is_exact_on_round_products() {
        assert_eq!(conformal_rank(19, 0.1), 18);
        assert_eq!(conformal_rank(1, 0.1), 2);
        assert_eq!(conformal_rank(10, 0.1), 10);
        assert_eq!(conformal_rank(9, 0.1), 9);
        assert_eq!(conformal_rank(999, 0.1), 900);
    }

    fn matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (1usize..6, 1usize..6).prop_flat_map(|(m, n)| {
            prop::collection::vec(prop::collection::vec(-50.0f64..50.0, n), m)
        })
    }

    proptest! {
        #[test]
        fn qq_monotone_and_grounded(rows in matrix(), l in 1usize..8, k in 1usize..6) {
            let data = ScoreMatrix::from_rows(rows.clone()).unwrap();
            let m = data.num_agents();
            let k = k.min(m);
            let q = quantile_of_quantiles(&data, l, k).unwrap();
            let q_l = quantile_of_quantiles(&data, l + 1, k).unwrap();
            prop_assert!(q <= q_l);
            if k < m {
                prop_assert!(q <= quantile_of_quantiles(&data, l, k + 1).unwrap());
            }
            if !q.is_infinite() {
                let all: Vec<f64> = rows.iter().flatten().copied().collect();
                prop_assert!(all.contains(&q.value()));
                let below = all.iter().filter(|&&v| v <= q.value()).count();
                prop_assert!(below >= l * k);
            }
        }

        #[test]
        fn qq_permutation_invariant(rows in matrix(), l in 1usize..6, k in 1usize..6, seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = rows.len();
            let k = k.min(m);
            let base = quantile_of_quantiles(&ScoreMatrix::from_rows(rows.clone()).unwrap(), l, k).unwrap();
            let mut shuffled = rows;
            shuffled.shuffle(&mut rng);
            for r in shuffled.iter_mut() {
                r.shuffle(&mut rng);
            }
            let again = quantile_of_quantiles(&ScoreMatrix::from_rows(shuffled).unwrap(), l, k).unwrap();
            prop_assert_eq!(base, again);
        }
    }
}
