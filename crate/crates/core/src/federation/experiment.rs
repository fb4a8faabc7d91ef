//! Monte Carlo coverage experiments.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scenario::Scenario;
use super::{execute_round, plan_protocol, FederationSpec, ProtocolOptions, ServerPlan};
use crate::conformal::{split_cp_calibrate, CalibrationParams, CalibrationResult, Method};
use crate::coverage_table::{conditional_bound, conditional_bound_applies, QQIndex, TableKey};
use crate::error::{check_probability, invalid, FedcalError, Result};
use crate::order_stats::{ExtendedScore, ScoreMatrix, ScoreSample};
use crate::rng::{Domain, Streams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub method: Method,
    pub replication: u64,
    pub coverage: f64,
    /// `+inf` when the threshold is infinite.
    pub mean_length: f64,
    pub q_hat: ExtendedScore,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub method: Method,
    pub scenario: String,
    pub replications: usize,
    pub test_size: usize,
    pub mean_coverage: f64,
    /// Standard error of `mean_coverage` across replications (0 for one replication).
    pub se: f64,
    /// Mean over replications with a finite threshold.
    pub mean_length: f64,
    pub infinite_replications: usize,
    pub guaranteed_coverage: Option<f64>,
    pub rows: Vec<ReplicationRow>,
}

impl ExperimentSummary {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "method,replication,coverage,mean_length,q_hat,seed")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.method, r.replication, r.coverage, r.mean_length, r.q_hat, r.seed
            )?;
        }
        Ok(())
    }
}

enum Calibrator {
    Pooled,
    Round(Box<ServerPlan>),
}

impl Calibrator {
    fn new(spec: &FederationSpec, method: Method, opts: &ProtocolOptions) -> Result<Self> {
        if method == Method::Centralized {
            if opts.dp.is_some() || opts.qq_index.is_some() {
                return invalid("centralized calibration takes no protocol options");
            }
            Ok(Calibrator::Pooled)
        } else {
            Ok(Calibrator::Round(Box::new(plan_protocol(spec, method, opts, None)?)))
        }
    }

    fn calibrate(&self, scores: &ScoreMatrix, alpha: f64, streams: Streams, rep: u64) -> Result<CalibrationResult> {
        match self {
            Calibrator::Pooled => split_cp_calibrate(&scores.pooled(), alpha),
            Calibrator::Round(plan) => execute_round(plan, scores, streams, rep).map(|(r, _)| r),
        }
    }

    fn guaranteed(&self, alpha: f64) -> Option<f64> {
        match self {
            Calibrator::Pooled => Some(1.0 - alpha),
            Calibrator::Round(plan) => plan.guaranteed_coverage,
        }
    }
}

fn draw_scores(spec: &FederationSpec, scenario: &dyn Scenario, streams: Streams, rep: u64) -> Result<ScoreMatrix> {
    let agents = spec
        .size_list()
        .into_iter()
        .enumerate()
        .map(|(j, n)| {
            let mut rng = streams.stream(Domain::AgentData, rep, j as u64);
            ScoreSample::new((0..n).map(|_| scenario.calibration_score(j, &mut rng)).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    ScoreMatrix::new(agents)
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Sample, calibrate and evaluate `replications` times.
///
/// Replication `r` draws agent `j`'s scores from stream `(r, j)` and its
/// `test_size` test points from a separate stream, so rows are independent
/// of thread scheduling.
pub fn coverage_experiment(
    spec: &FederationSpec,
    replications: usize,
    method: Method,
    scenario: &dyn Scenario,
    test_size: usize,
    opts: &ProtocolOptions,
) -> Result<ExperimentSummary> {
    if replications == 0 || test_size == 0 {
        return invalid("replications and test size must be positive");
    }
    spec.validate()?;
    scenario.check_agents(spec.m)?;
    let cal = Calibrator::new(spec, method, opts)?;
    let streams = spec.streams();
    let rows = (0..replications as u64)
        .into_par_iter()
        .map(|rep| {
            let scores = draw_scores(spec, scenario, streams, rep)?;
            let result = cal.calibrate(&scores, spec.alpha, streams, rep)?;
            let q = result.q_hat.value();
            let mut rng = streams.stream(Domain::TestData, rep, 0);
            let (mut hits, mut length) = (0usize, 0.0);
            for _ in 0..test_size {
                let t = scenario.test_point(&mut rng);
                if result.admits(t.score) {
                    hits += 1;
                }
                length += (t.width + 2.0 * q).max(0.0);
            }
            Ok(ReplicationRow {
                method,
                replication: rep,
                coverage: hits as f64 / test_size as f64,
                mean_length: if q.is_infinite() { f64::INFINITY } else { length / test_size as f64 },
                q_hat: result.q_hat,
                seed: spec.seed,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let cov: Vec<f64> = rows.iter().map(|r| r.coverage).collect();
    let (mean_coverage, se) = mean_and_se(&cov);
    let finite: Vec<f64> = rows.iter().map(|r| r.mean_length).filter(|l| l.is_finite()).collect();
    Ok(ExperimentSummary {
        method,
        scenario: scenario.describe(),
        replications,
        test_size,
        mean_coverage,
        se,
        mean_length: if finite.is_empty() {
            f64::INFINITY
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        },
        infinite_replications: rows.len() - finite.len(),
        guaranteed_coverage: cal.guaranteed(spec.alpha),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalSummary {
    /// `1 - F(q_hat)` per replication.
    pub alpha_p: Vec<f64>,
    pub mean: f64,
    pub se: f64,
    pub delta: f64,
    /// Empirical `(1 - delta)`-quantile of `alpha_p`.
    pub upper_quantile: f64,
    /// `alpha + sqrt(log(1/delta) / (2 m n))`.
    pub bound: f64,
    /// Whether the calibrated `(l, k)` satisfies `l k >= (1 - alpha) m n`.
    pub bound_applies: bool,
    pub fraction_within_bound: f64,
}

/// Distribution of the conditional miscoverage over calibration draws.
pub fn conditional_coverage_experiment(
    spec: &FederationSpec,
    replications: usize,
    method: Method,
    scenario: &dyn Scenario,
    opts: &ProtocolOptions,
    delta: f64,
) -> Result<ConditionalSummary> {
    if replications == 0 {
        return invalid("replications must be positive");
    }
    check_probability("delta", delta)?;
    if scenario.test_cdf(0.0).is_none() {
        return invalid(format!(
            "scenario `{}` has no closed-form test score c.d.f., so the conditional miscoverage is not computable",
            scenario.describe()
        ));
    }
    spec.validate()?;
    scenario.check_agents(spec.m)?;
    let n = spec
        .balanced_n()
        .ok_or_else(|| FedcalError::InvalidArgument("conditional experiment needs equal local sizes".into()))?;
    let key = TableKey::new(spec.m, n)?;
    let cal = Calibrator::new(spec, method, opts)?;
    let streams = spec.streams();
    let results = (0..replications as u64)
        .into_par_iter()
        .map(|rep| {
            let scores = draw_scores(spec, scenario, streams, rep)?;
            cal.calibrate(&scores, spec.alpha, streams, rep)
        })
        .collect::<Result<Vec<_>>>()?;
    let alpha_p: Vec<f64> = results
        .iter()
        .map(|r| {
            if r.q_hat.is_infinite() {
                0.0
            } else {
                1.0 - scenario.test_cdf(r.q_hat.value()).expect("checked above")
            }
        })
        .collect();
    let bound_applies = match &results[0].params {
        CalibrationParams::FedcpQq { l, k, .. } => conditional_bound_applies(key, spec.alpha, QQIndex::new(*l, *k)),
        _ => false,
    };
    let bound = conditional_bound(key, spec.alpha, delta.min(0.5))?;
    let (mean, se) = mean_and_se(&alpha_p);
    let mut sorted = alpha_p.clone();
    sorted.sort_by(f64::total_cmp);
    let idx = (((1.0 - delta) * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    let within = alpha_p.iter().filter(|&&a| a <= bound).count() as f64 / alpha_p.len() as f64;
    Ok(ConditionalSummary {
        upper_quantile: sorted[idx],
        alpha_p,
        mean,
        se,
        delta,
        bound,
        bound_applies,
        fraction_within_bound: within,
    })
}
