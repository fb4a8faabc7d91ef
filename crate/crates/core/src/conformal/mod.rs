//! Score functions, prediction sets and the non-private calibrators.

mod csv;
mod score;

use serde::{Deserialize, Serialize};

use crate::coverage_table::{find_k_unbalanced, find_lk_star, m_lk_fast, CoverageTable, QQIndex, TableKey};
use crate::error::{check_probability, invalid, FedcalError, Result};
use crate::order_stats::{
    conformal_rank, order_statistic, order_statistic_extended, quantile_of_quantiles, ExtendedScore, ScoreMatrix,
    ScoreSample,
};
use crate::privacy::PrivateCalibrationParams;

pub use self::csv::{read_agent_scores_csv, read_scores_csv, read_scores_path};
pub use score::{evaluate, predict_interval, Metrics, PredictionInterval, ScoreFunction, ScoreKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Centralized,
    FedcpQq,
    FedcpAvg,
    Fedcp2Qq,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Centralized => "centralized",
            Method::FedcpQq => "fedcp-qq",
            Method::FedcpAvg => "fedcp-avg",
            Method::Fedcp2Qq => "fedcp2-qq",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = FedcalError;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('_', "-").as_str() {
            "centralized" => Ok(Method::Centralized),
            "fedcp-qq" => Ok(Method::FedcpQq),
            "fedcp-avg" => Ok(Method::FedcpAvg),
            "fedcp2-qq" => Ok(Method::Fedcp2Qq),
            other => invalid(format!("unknown method `{other}`")),
        }
    }
}

/// Method parameters kept for provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationParams {
    Centralized { n: usize, rank: usize },
    FedcpQq { m: usize, n: usize, l: usize, k: usize },
    FedcpQqUnbalanced { sizes: Vec<usize>, local_ranks: Vec<usize>, k: usize },
    FedcpAvg { m: usize, n: usize, rank: usize },
    Fedcp2Qq(PrivateCalibrationParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub method: Method,
    pub alpha: f64,
    pub q_hat: ExtendedScore,
    /// Coverage guaranteed by construction; `None` for the averaging baseline.
    pub guaranteed_coverage: Option<f64>,
    pub params: CalibrationParams,
    /// Score function the scores came from, when the caller recorded it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_kind: Option<ScoreKind>,
}

impl CalibrationResult {
    pub fn with_score_kind(mut self, kind: ScoreKind) -> Self {
        self.score_kind = Some(kind);
        self
    }

    /// `s <= q_hat`.
    pub fn admits(&self, score: f64) -> bool {
        self.q_hat.admits(score)
    }
}

/// Split conformal threshold: the `ceil((n + 1)(1 - alpha))`-th smallest score.
pub fn split_cp_calibrate(scores: &ScoreSample, alpha: f64) -> Result<CalibrationResult> {
    check_probability("alpha", alpha)?;
    if scores.is_empty() {
        return invalid("split conformal needs at least one score");
    }
    let n = scores.len();
    let rank = conformal_rank(n, alpha);
    Ok(CalibrationResult {
        method: Method::Centralized,
        alpha,
        q_hat: order_statistic(scores, rank)?,
        guaranteed_coverage: Some(1.0 - alpha),
        params: CalibrationParams::Centralized { n, rank },
        score_kind: None,
    })
}

/// Quantile-of-quantiles threshold at the coverage-optimal `(l*, k*)`.
///
/// A supplied table must match `(m, n)`; it is filled as needed and keeps
/// the selection.
pub fn fedcp_qq_calibrate(
    scores: &ScoreMatrix,
    alpha: f64,
    table: Option<&mut CoverageTable>,
) -> Result<CalibrationResult> {
    check_probability("alpha", alpha)?;
    let n = scores.require_balanced()?;
    let m = scores.num_agents();
    let key = TableKey::new(m, n)?;
    let (idx, coverage) = select_ranks(key, alpha, table)?;
    Ok(CalibrationResult {
        method: Method::FedcpQq,
        alpha,
        q_hat: quantile_of_quantiles(scores, idx.l, idx.k)?,
        guaranteed_coverage: Some(coverage),
        params: CalibrationParams::FedcpQq {
            m,
            n,
            l: idx.l,
            k: idx.k,
        },
        score_kind: None,
    })
}

/// Quantile-of-quantiles at a caller-chosen `(l, k)`; the guarantee is `M_{l,k}`.
pub fn fedcp_qq_calibrate_at(scores: &ScoreMatrix, alpha: f64, idx: QQIndex) -> Result<CalibrationResult> {
    check_probability("alpha", alpha)?;
    let n = scores.require_balanced()?;
    let m = scores.num_agents();
    let key = TableKey::new(m, n)?;
    idx.check(key)?;
    Ok(CalibrationResult {
        method: Method::FedcpQq,
        alpha,
        q_hat: quantile_of_quantiles(scores, idx.l, idx.k)?,
        guaranteed_coverage: Some(m_lk_fast(key, idx)?),
        params: CalibrationParams::FedcpQq { m, n, l: idx.l, k: idx.k },
        score_kind: None,
    })
}

/// Quantile-of-quantiles for agents of different sizes: agent `j` reports
/// its `l_j`-th score and the server takes the `k`-th smallest report.
pub fn fedcp_qq_unbalanced_calibrate(scores: &ScoreMatrix, alpha: f64) -> Result<CalibrationResult> {
    check_probability("alpha", alpha)?;
    let sizes = scores.sizes();
    let sel = find_k_unbalanced(&sizes, alpha)?;
    let reports = scores
        .agents()
        .iter()
        .zip(&sel.local_ranks)
        .map(|(a, &l)| order_statistic(a, l))
        .collect::<Result<Vec<_>>>()?;
    Ok(CalibrationResult {
        method: Method::FedcpQq,
        alpha,
        q_hat: order_statistic_extended(&reports, sel.k)?,
        guaranteed_coverage: Some(sel.coverage),
        params: CalibrationParams::FedcpQqUnbalanced {
            sizes,
            local_ranks: sel.local_ranks,
            k: sel.k,
        },
        score_kind: None,
    })
}

pub(crate) fn select_ranks(
    key: TableKey,
    alpha: f64,
    table: Option<&mut CoverageTable>,
) -> Result<(QQIndex, f64)> {
    match table {
        Some(t) => {
            if t.key() != key {
                return invalid(format!(
                    "coverage table is for (m={}, n={}), data has (m={}, n={})",
                    t.key().m(),
                    t.key().n(),
                    key.m(),
                    key.n()
                ));
            }
            let sel = t.select(alpha)?;
            Ok((sel.index, sel.coverage))
        }
        None => find_lk_star(key, alpha),
    }
}

/// Mean of the local `ceil((n + 1)(1 - alpha))`-th order statistics.
///
/// No coverage guarantee is attached. Fails when the rank exceeds `n`, since
/// the local quantile is then undefined.
pub fn fedcp_avg_calibrate(scores: &ScoreMatrix, alpha: f64) -> Result<CalibrationResult> {
    check_probability("alpha", alpha)?;
    let n = scores.require_balanced()?;
    let m = scores.num_agents();
    let rank = avg_rank(n, alpha)?;
    let mut sum = 0.0;
    for agent in scores.agents() {
        sum += order_statistic(agent, rank)?.value();
    }
    Ok(CalibrationResult {
        method: Method::FedcpAvg,
        alpha,
        q_hat: ExtendedScore::finite(sum / m as f64),
        guaranteed_coverage: None,
        params: CalibrationParams::FedcpAvg { m, n, rank },
        score_kind: None,
    })
}

pub(crate) fn avg_rank(n: usize, alpha: f64) -> Result<usize> {
    let rank = conformal_rank(n, alpha);
    if rank > n {
        return invalid(format!(
            "averaging needs local rank ceil((n+1)(1-alpha)) = {rank} <= n = {n}; \
             with so few points per agent the local quantile is infinite and the average is undefined"
        ));
    }
    Ok(rank)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(v: Vec<f64>) -> ScoreSample {
        ScoreSample::new(v).unwrap()
    }

    #[test]
    fn split_examples() {
        let s = sample((1..=19).map(f64::from).collect());
        let r = split_cp_calibrate(&s, 0.1).unwrap();
        assert_eq!(r.q_hat.value(), 18.0);
        assert_eq!(r.guaranteed_coverage, Some(0.9));
        assert!(split_cp_calibrate(&sample(vec![3.0]), 0.1).unwrap().q_hat.is_infinite());
        assert!(split_cp_calibrate(&sample(vec![]), 0.1).is_err());
        assert!(split_cp_calibrate(&s, 0.0).is_err());
    }

    #[test]
    fn qq_single_agent_matches_split() {
        let v: Vec<f64> = (0..19).map(|i| ((i * 7) % 19) as f64 * 0.5).collect();
        let qq = fedcp_qq_calibrate(&ScoreMatrix::from_rows(vec![v.clone()]).unwrap(), 0.1, None).unwrap();
        let sp = split_cp_calibrate(&sample(v), 0.1).unwrap();
        assert_eq!(qq.q_hat, sp.q_hat);
        assert!(matches!(qq.params, CalibrationParams::FedcpQq { l: 18, k: 1, .. }));
    }

    #[test]
    fn qq_identical_agents() {
        let row: Vec<f64> = (1..=20).map(f64::from).collect();
        let data = ScoreMatrix::from_rows(vec![row; 10]).unwrap();
        let r = fedcp_qq_calibrate(&data, 0.1, None).unwrap();
        let CalibrationParams::FedcpQq { l, .. } = r.params else { panic!() };
        assert_eq!(r.q_hat.value(), l as f64);
        assert!(r.guaranteed_coverage.unwrap() >= 0.9 - 1e-12);
    }

    #[test]
    fn qq_uses_and_checks_table() {
        let data = ScoreMatrix::from_rows(vec![vec![1.0, 2.0, 3.0]; 4]).unwrap();
        let mut table = CoverageTable::new(TableKey::new(4, 3).unwrap());
        let r = fedcp_qq_calibrate(&data, 0.2, Some(&mut table)).unwrap();
        assert_eq!(table.selected().unwrap().coverage, r.guaranteed_coverage.unwrap());
        let mut wrong = CoverageTable::new(TableKey::new(3, 3).unwrap());
        assert!(fedcp_qq_calibrate(&data, 0.2, Some(&mut wrong)).is_err());
        let ragged = ScoreMatrix::from_rows(vec![vec![1.0], vec![1.0, 2.0]]).unwrap();
        assert!(fedcp_qq_calibrate(&ragged, 0.2, None).is_err());
    }

    #[test]
    fn avg_examples() {
        let row: Vec<f64> = (1..=10).map(f64::from).collect();
        let r = fedcp_avg_calibrate(&ScoreMatrix::from_rows(vec![row; 3]).unwrap(), 0.1).unwrap();
        assert_eq!(r.q_hat.value(), 10.0);
        assert_eq!(r.guaranteed_coverage, None);

        let mut spiky = vec![0.0; 10];
        spiky[9] = 100.0;
        let data = ScoreMatrix::from_rows(vec![vec![0.0; 10], spiky]).unwrap();
        assert_eq!(fedcp_avg_calibrate(&data, 0.1).unwrap().q_hat.value(), 50.0);

        let small = ScoreMatrix::from_rows(vec![vec![1.0, 2.0]; 3]).unwrap();
        assert!(matches!(fedcp_avg_calibrate(&small, 0.1), Err(FedcalError::InvalidArgument(_))));
    }

    #[test]
    fn avg_single_agent_matches_split() {
        let v: Vec<f64> = (0..30).map(|i| ((i * 13) % 30) as f64).collect();
        let a = fedcp_avg_calibrate(&ScoreMatrix::from_rows(vec![v.clone()]).unwrap(), 0.1).unwrap();
        let s = split_cp_calibrate(&sample(v), 0.1).unwrap();
        assert_eq!(a.q_hat, s.q_hat);
    }

    #[test]
    fn fixed_index_and_unbalanced() {
        let row: Vec<f64> = (1..=20).map(f64::from).collect();
        let data = ScoreMatrix::from_rows(vec![row.clone(); 10]).unwrap();
        let r = fedcp_qq_calibrate_at(&data, 0.1, QQIndex::new(18, 10)).unwrap();
        assert_eq!(r.q_hat.value(), 18.0);
        assert!(r.guaranteed_coverage.unwrap() > 0.9);
        assert!(fedcp_qq_calibrate_at(&data, 0.1, QQIndex::new(21, 1)).is_err());

        let ragged = ScoreMatrix::from_rows(vec![row[..5].to_vec(), row[..10].to_vec(), row.clone()]).unwrap();
        let r = fedcp_qq_unbalanced_calibrate(&ragged, 0.1).unwrap();
        let CalibrationParams::FedcpQqUnbalanced { local_ranks, k, .. } = &r.params else { panic!() };
        assert_eq!(local_ranks, &vec![5, 10, 19]);
        let reports = [5.0, 10.0, 19.0];
        assert_eq!(r.q_hat.value(), reports[*k - 1]);
        assert!(r.guaranteed_coverage.unwrap() >= 0.9 - 1e-12);
    }

    #[test]
    fn method_names_round_trip() {
        for m in [Method::Centralized, Method::FedcpQq, Method::FedcpAvg, Method::Fedcp2Qq] {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("fedcp".parse::<Method>().is_err());
    }

    proptest! {
        #[test]
        fn calibrators_are_scale_equivariant(
            rows in prop::collection::vec(prop::collection::vec(0.0f64..10.0, 12), 1..6),
            c in 0.01f64..100.0,
            test in 0.0f64..10.0,
        ) {
            let data = ScoreMatrix::from_rows(rows.clone()).unwrap();
            let scaled = ScoreMatrix::from_rows(
                rows.iter().map(|r| r.iter().map(|v| v * c).collect()).collect()
            ).unwrap();
            for (a, b) in [
                (fedcp_qq_calibrate(&data, 0.2, None).unwrap(), fedcp_qq_calibrate(&scaled, 0.2, None).unwrap()),
                (fedcp_avg_calibrate(&data, 0.2).unwrap(), fedcp_avg_calibrate(&scaled, 0.2).unwrap()),
                (split_cp_calibrate(&data.pooled(), 0.2).unwrap(), split_cp_calibrate(&scaled.pooled(), 0.2).unwrap()),
            ] {
                if a.q_hat.is_infinite() {
                    prop_assert!(b.q_hat.is_infinite());
                } else {
                    prop_assert!((a.q_hat.value() * c - b.q_hat.value()).abs() <= 1e-9 * b.q_hat.value().abs().max(1.0));
                    if a.method != Method::FedcpAvg {
                        prop_assert_eq!(a.admits(test), b.admits(test * c));
                    }
                }
            }
        }
    }
}
