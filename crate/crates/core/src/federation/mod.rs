//! One-shot protocol simulation, synthetic data and heterogeneity diagnostics.
//!
//! A round is split into a server plan (what every agent is asked for and
//! how the replies are combined) and its execution, where each agent sees
//! only its own scores and returns exactly one payload.

mod diagnostic;
mod experiment;
mod scenario;
mod synthetic;

use serde::{Deserialize, Serialize};

use crate::conformal::{avg_rank, select_ranks, CalibrationParams, CalibrationResult, Method};
use crate::coverage_table::{find_k_unbalanced, m_lk_fast, CoverageTable, QQIndex, TableKey};
use crate::error::{check_probability, invalid, FedcalError, Result};
use crate::order_stats::{order_statistic, order_statistic_extended, ExtendedScore, ScoreMatrix, ScoreSample};
use crate::privacy::{agent_release, plan_private, private_params, BinGrid, DpConfig, PrivatePlan};
use crate::rng::{Domain, Streams};

pub use diagnostic::{heterogeneity_gap, poisson_binomial_diagnostic, poisson_binomial_pmf, PoissonBinomialDiagnostic, EHM_LOWER_CONSTANT};
pub use experiment::{
    conditional_coverage_experiment, coverage_experiment, ConditionalSummary, ExperimentSummary, ReplicationRow,
};
pub use scenario::{
    Affine, ExponentialScores, HeterogeneityModel, Heterogeneous, Iid, Scenario, ScoreSampler, TestPoint, UniformScores,
};
pub use synthetic::{synthetic_dataset, OracleCqr, SyntheticModel, SyntheticPoint, SyntheticScenario};

/// Local sample sizes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sizes {
    Balanced(usize),
    PerAgent(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationSpec {
    pub m: usize,
    pub sizes: Sizes,
    pub alpha: f64,
    pub seed: u64,
}

impl FederationSpec {
    pub fn balanced(m: usize, n: usize, alpha: f64, seed: u64) -> Result<Self> {
        let spec = FederationSpec {
            m,
            sizes: Sizes::Balanced(n),
            alpha,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn unbalanced(sizes: Vec<usize>, alpha: f64, seed: u64) -> Result<Self> {
        let spec = FederationSpec {
            m: sizes.len(),
            sizes: Sizes::PerAgent(sizes),
            alpha,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return invalid("a federation needs at least one agent");
        }
        check_probability("alpha", self.alpha)?;
        match &self.sizes {
            Sizes::Balanced(0) => invalid("local size n must be positive"),
            Sizes::PerAgent(s) if s.len() != self.m => {
                invalid(format!("{} sizes given for m = {} agents", s.len(), self.m))
            }
            Sizes::PerAgent(s) if s.contains(&0) => invalid("every local size must be positive"),
            _ => Ok(()),
        }
    }

    pub fn size_list(&self) -> Vec<usize> {
        match &self.sizes {
            Sizes::Balanced(n) => vec![*n; self.m],
            Sizes::PerAgent(s) => s.clone(),
        }
    }

    /// Common size when all agents hold the same number of scores.
    pub fn balanced_n(&self) -> Option<usize> {
        let sizes = self.size_list();
        sizes.iter().all(|&s| s == sizes[0]).then_some(sizes[0])
    }

    pub fn streams(&self) -> Streams {
        Streams::new(self.seed)
    }

    fn check_scores(&self, scores: &ScoreMatrix) -> Result<()> {
        if scores.sizes() != self.size_list() {
            return invalid(format!(
                "score matrix sizes {:?} do not match the federation ({:?})",
                scores.sizes(),
                self.size_list()
            ));
        }
        Ok(())
    }
}

/// Extra inputs for a round.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProtocolOptions {
    /// Required for the private method.
    pub dp: Option<DpConfig>,
    /// Fixed `(l, k)` instead of the coverage-optimal pair (balanced QQ only).
    pub qq_index: Option<QQIndex>,
}

/// Server-to-agent broadcast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Downlink {
    LocalRank { l: usize },
    LocalRanks { ranks: Vec<usize> },
    PrivateQuantile { q: f64, epsilon: f64, edges: BinGrid },
}

/// How the server combines the payloads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    OrderStatistic { k: usize },
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Uplink {
    pub agent: usize,
    pub payload: ExtendedScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub downlink: Downlink,
    pub uplinks: Vec<Uplink>,
}

impl Transcript {
    /// One payload from each of the `m` agents and nothing else.
    pub fn audit(&self, m: usize) -> Result<()> {
        if self.uplinks.len() != m {
            return Err(FedcalError::ProtocolViolation(format!(
                "{} uplinks for {m} agents",
                self.uplinks.len()
            )));
        }
        let mut seen = vec![false; m];
        for u in &self.uplinks {
            if u.agent >= m || std::mem::replace(&mut seen[u.agent], true) {
                return Err(FedcalError::ProtocolViolation(format!(
                    "agent {} sent more than one message or is unknown",
                    u.agent
                )));
            }
        }
        if let Downlink::PrivateQuantile { edges, .. } = &self.downlink {
            if let Some(u) = self.uplinks.iter().find(|u| !edges.contains_edge(u.payload.value())) {
                return Err(FedcalError::ProtocolViolation(format!(
                    "agent {} sent {} which is not a grid edge",
                    u.agent, u.payload
                )));
            }
        }
        Ok(())
    }

    pub fn payloads(&self) -> Vec<ExtendedScore> {
        self.uplinks.iter().map(|u| u.payload).collect()
    }
}

/// Everything the server fixes before the round.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerPlan {
    pub method: Method,
    pub alpha: f64,
    pub sizes: Vec<usize>,
    pub downlink: Downlink,
    pub aggregate: Aggregate,
    pub guaranteed_coverage: Option<f64>,
    pub params: CalibrationParams,
    private: Option<PrivatePlan>,
}

/// Build the plan for `method`. A table, if given, must match `(m, n)`.
pub fn plan_protocol(
    spec: &FederationSpec,
    method: Method,
    opts: &ProtocolOptions,
    table: Option<&mut CoverageTable>,
) -> Result<ServerPlan> {
    spec.validate()?;
    let (m, alpha, sizes) = (spec.m, spec.alpha, spec.size_list());
    let balanced = spec.balanced_n();
    let need_balanced = |what: &str| -> Result<usize> {
        balanced.ok_or_else(|| FedcalError::InvalidArgument(format!("{what} needs equal local sizes")))
    };
    if opts.qq_index.is_some() && method != Method::FedcpQq {
        return invalid("a fixed (l, k) only applies to fedcp-qq");
    }
    let plan = match method {
        Method::Centralized => {
            return Err(FedcalError::ProtocolViolation(
                "centralized calibration needs every score at the server, not one message per agent".into(),
            ))
        }
        Method::FedcpQq => match balanced {
            Some(n) => {
                let key = TableKey::new(m, n)?;
                let (idx, coverage) = match opts.qq_index {
                    Some(idx) => {
                        idx.check(key)?;
                        let v = match table {
                            Some(t) if t.key() == key => t.entry(idx)?,
                            Some(_) => return invalid("coverage table does not match (m, n)"),
                            None => m_lk_fast(key, idx)?,
                        };
                        (idx, v)
                    }
                    None => select_ranks(key, alpha, table)?,
                };
                ServerPlan {
                    method,
                    alpha,
                    sizes,
                    downlink: Downlink::LocalRank { l: idx.l },
                    aggregate: Aggregate::OrderStatistic { k: idx.k },
                    guaranteed_coverage: Some(coverage),
                    params: CalibrationParams::FedcpQq { m, n, l: idx.l, k: idx.k },
                    private: None,
                }
            }
            None => {
                let sel = find_k_unbalanced(&sizes, alpha)?;
                ServerPlan {
                    method,
                    alpha,
                    downlink: Downlink::LocalRanks {
                        ranks: sel.local_ranks.clone(),
                    },
                    aggregate: Aggregate::OrderStatistic { k: sel.k },
                    guaranteed_coverage: Some(sel.coverage),
                    params: CalibrationParams::FedcpQqUnbalanced {
                        sizes: sizes.clone(),
                        local_ranks: sel.local_ranks,
                        k: sel.k,
                    },
                    sizes,
                    private: None,
                }
            }
        },
        Method::FedcpAvg => {
            let n = need_balanced("fedcp-avg")?;
            let rank = avg_rank(n, alpha)?;
            ServerPlan {
                method,
                alpha,
                sizes,
                downlink: Downlink::LocalRank { l: rank },
                aggregate: Aggregate::Mean,
                guaranteed_coverage: None,
                params: CalibrationParams::FedcpAvg { m, n, rank },
                private: None,
            }
        }
        Method::Fedcp2Qq => {
            let n = need_balanced("fedcp2-qq")?;
            let cfg = opts
                .dp
                .as_ref()
                .ok_or_else(|| FedcalError::InvalidArgument("fedcp2-qq needs a privacy configuration".into()))?;
            let private = plan_private(TableKey::new(m, n)?, alpha, cfg, table)?;
            ServerPlan {
                method,
                alpha,
                sizes,
                downlink: Downlink::PrivateQuantile {
                    q: private.q,
                    epsilon: private.epsilon,
                    edges: cfg.grid.clone(),
                },
                aggregate: Aggregate::OrderStatistic {
                    k: private.selection.k_gamma,
                },
                guaranteed_coverage: Some(1.0 - alpha),
                params: CalibrationParams::Fedcp2Qq(private_params(&private, m, n, cfg, spec.seed)),
                private: Some(private),
            }
        }
    };
    Ok(plan)
}

/// What agent `agent` sends in reply to `downlink`, computed from its own scores.
fn agent_respond(
    agent: usize,
    scores: &ScoreSample,
    downlink: &Downlink,
    private: Option<&PrivatePlan>,
    streams: Streams,
    rep: u64,
) -> Result<Uplink> {
    let payload = match downlink {
        Downlink::LocalRank { l } => order_statistic(scores, *l)?,
        Downlink::LocalRanks { ranks } => order_statistic(scores, ranks[agent])?,
        Downlink::PrivateQuantile { edges, .. } => {
            let plan = private.ok_or_else(|| FedcalError::Internal("private plan missing".into()))?;
            let mut rng = streams.stream(Domain::Mechanism, rep, agent as u64);
            ExtendedScore::finite(agent_release(scores, plan, edges, &mut rng)?.bin_edge)
        }
    };
    Ok(Uplink { agent, payload })
}

fn aggregate(plan: &ServerPlan, transcript: &Transcript) -> Result<ExtendedScore> {
    let payloads = transcript.payloads();
    match plan.aggregate {
        Aggregate::OrderStatistic { k } => order_statistic_extended(&payloads, k),
        Aggregate::Mean => {
            let mut sum = 0.0;
            for p in &payloads {
                sum += p.value();
            }
            Ok(ExtendedScore::finite(sum / payloads.len() as f64))
        }
    }
}

/// Run one round of `plan` on `scores`; private agents use mechanism streams `(rep, j)`.
pub fn execute_round(
    plan: &ServerPlan,
    scores: &ScoreMatrix,
    streams: Streams,
    rep: u64,
) -> Result<(CalibrationResult, Transcript)> {
    if scores.sizes() != plan.sizes {
        return invalid("score matrix does not match the plan's local sizes");
    }
    let uplinks = scores
        .agents()
        .iter()
        .enumerate()
        .map(|(j, s)| agent_respond(j, s, &plan.downlink, plan.private.as_ref(), streams, rep))
        .collect::<Result<Vec<_>>>()?;
    let transcript = Transcript {
        downlink: plan.downlink.clone(),
        uplinks,
    };
    transcript.audit(plan.sizes.len())?;
    let q_hat = aggregate(plan, &transcript)?;
    let mut params = plan.params.clone();
    if let CalibrationParams::Fedcp2Qq(p) = &mut params {
        p.seed = streams.master();
    }
    let result = CalibrationResult {
        method: plan.method,
        alpha: plan.alpha,
        q_hat,
        guaranteed_coverage: plan.guaranteed_coverage,
        params,
        score_kind: None,
    };
    Ok((result, transcript))
}

/// Plan and run a single round seeded by `spec.seed`.
pub fn run_one_shot(
    spec: &FederationSpec,
    scores: &ScoreMatrix,
    method: Method,
    opts: &ProtocolOptions,
    table: Option<&mut CoverageTable>,
) -> Result<(CalibrationResult, Transcript)> {
    spec.check_scores(scores)?;
    let plan = plan_protocol(spec, method, opts, table)?;
    execute_round(&plan, scores, spec.streams(), 0)
}
