//! Score generators for simulation.

use std::fmt::Debug;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::StreamRng;

/// A continuous score distribution.
pub trait ScoreSampler: Send + Sync + Debug {
    fn sample(&self, rng: &mut StreamRng) -> f64;

    fn cdf(&self, _s: f64) -> Option<f64> {
        None
    }

    fn quantile(&self, _u: f64) -> Option<f64> {
        None
    }

    fn name(&self) -> String;
}

/// `U(0, upper)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformScores {
    upper: f64,
}

impl UniformScores {
    pub fn new(upper: f64) -> Result<Self> {
        if !(upper > 0.0 && upper.is_finite()) {
            return invalid(format!("uniform upper bound must be positive, got {upper}"));
        }
        Ok(UniformScores { upper })
    }

    pub fn standard() -> Self {
        UniformScores { upper: 1.0 }
    }
}

impl ScoreSampler for UniformScores {
    fn sample(&self, rng: &mut StreamRng) -> f64 {
        rng.random::<f64>() * self.upper
    }

    fn cdf(&self, s: f64) -> Option<f64> {
        Some((s / self.upper).clamp(0.0, 1.0))
    }

    fn quantile(&self, u: f64) -> Option<f64> {
        Some(u.clamp(0.0, 1.0) * self.upper)
    }

    fn name(&self) -> String {
        format!("uniform(0,{})", self.upper)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentialScores {
    rate: f64,
}

impl ExponentialScores {
    pub fn new(rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return invalid(format!("exponential rate must be positive, got {rate}"));
        }
        Ok(ExponentialScores { rate })
    }
}

impl ScoreSampler for ExponentialScores {
    fn sample(&self, rng: &mut StreamRng) -> f64 {
        Exp::new(self.rate).expect("validated rate").sample(rng)
    }

    fn cdf(&self, s: f64) -> Option<f64> {
        Some(if s <= 0.0 { 0.0 } else { -(-self.rate * s).exp_m1() })
    }

    fn quantile(&self, u: f64) -> Option<f64> {
        Some(-(-u.clamp(0.0, 1.0)).ln_1p() / self.rate)
    }

    fn name(&self) -> String {
        format!("exponential({})", self.rate)
    }
}

/// `s -> loc + scale * s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub loc: f64,
    pub scale: f64,
}

impl Affine {
    pub const IDENTITY: Affine = Affine { loc: 0.0, scale: 1.0 };

    pub fn apply(&self, s: f64) -> f64 {
        self.loc + self.scale * s
    }

    pub fn invert(&self, s: f64) -> f64 {
        (s - self.loc) / self.scale
    }
}

/// Per-agent affine transforms of a common base distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneityModel {
    transforms: Vec<Affine>,
}

impl HeterogeneityModel {
    pub fn new(transforms: Vec<Affine>) -> Result<Self> {
        if transforms.is_empty() {
            return invalid("heterogeneity model needs at least one agent");
        }
        for t in &transforms {
            if !t.loc.is_finite() || !(t.scale > 0.0 && t.scale.is_finite()) {
                return invalid(format!("bad transform {t:?}: need finite loc and positive finite scale"));
            }
        }
        Ok(HeterogeneityModel { transforms })
    }

    pub fn identity(m: usize) -> Result<Self> {
        HeterogeneityModel::new(vec![Affine::IDENTITY; m])
    }

    /// Locations evenly spaced on `[-spread/2, spread/2]`, unit scale.
    pub fn location_shifts(m: usize, spread: f64) -> Result<Self> {
        let t = (0..m)
            .map(|j| {
                let frac = if m == 1 { 0.5 } else { j as f64 / (m - 1) as f64 };
                Affine {
                    loc: spread * (frac - 0.5),
                    scale: 1.0,
                }
            })
            .collect();
        HeterogeneityModel::new(t)
    }

    pub fn agents(&self) -> usize {
        self.transforms.len()
    }

    pub fn transforms(&self) -> &[Affine] {
        &self.transforms
    }
}

/// A test point reduced to what calibration needs: its score and the
/// width of the prediction set at threshold 0. The set at threshold `q` has
/// length `max(width + 2q, 0)` and contains the point iff `score <= q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestPoint {
    pub score: f64,
    pub width: f64,
}

/// Source of calibration scores (per agent) and test points.
pub trait Scenario: Send + Sync {
    fn calibration_score(&self, agent: usize, rng: &mut StreamRng) -> f64;

    fn test_point(&self, rng: &mut StreamRng) -> TestPoint;

    /// C.d.f. of the test score, when known in closed form.
    fn test_cdf(&self, _s: f64) -> Option<f64> {
        None
    }

    fn check_agents(&self, _m: usize) -> Result<()> {
        Ok(())
    }

    fn describe(&self) -> String;
}

/// Every agent and the test point draw from the same sampler; interval
/// length is `2q`.
#[derive(Debug, Clone)]
pub struct Iid<S>(pub S);

impl<S: ScoreSampler> Scenario for Iid<S> {
    fn calibration_score(&self, _agent: usize, rng: &mut StreamRng) -> f64 {
        self.0.sample(rng)
    }

    fn test_point(&self, rng: &mut StreamRng) -> TestPoint {
        TestPoint {
            score: self.0.sample(rng),
            width: 0.0,
        }
    }

    fn test_cdf(&self, s: f64) -> Option<f64> {
        self.0.cdf(s)
    }

    fn describe(&self) -> String {
        self.0.name()
    }
}

/// Agent `j` draws `T_j(S)`; the test point draws from the base.
#[derive(Debug, Clone)]
pub struct Heterogeneous<S> {
    pub base: S,
    pub model: HeterogeneityModel,
}

impl<S: ScoreSampler> Scenario for Heterogeneous<S> {
    fn calibration_score(&self, agent: usize, rng: &mut StreamRng) -> f64 {
        self.model.transforms[agent].apply(self.base.sample(rng))
    }

    fn test_point(&self, rng: &mut StreamRng) -> TestPoint {
        TestPoint {
            score: self.base.sample(rng),
            width: 0.0,
        }
    }

    fn test_cdf(&self, s: f64) -> Option<f64> {
        self.base.cdf(s)
    }

    fn check_agents(&self, m: usize) -> Result<()> {
        if self.model.agents() != m {
            return invalid(format!(
                "heterogeneity model has {} agents, federation has {m}",
                self.model.agents()
            ));
        }
        Ok(())
    }

    fn describe(&self) -> String {
        format!("{} with per-agent shifts", self.base.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Domain, Streams};

    #[test]
    fn samplers_match_their_cdf() {
        let mut rng = Streams::new(1).stream(Domain::Auxiliary, 0, 0);
        let samplers: Vec<Box<dyn ScoreSampler>> =
            vec![Box::new(UniformScores::new(3.0).unwrap()), Box::new(ExponentialScores::new(2.0).unwrap())];
        for s in samplers {
            let mut v: Vec<f64> = (0..20_000).map(|_| s.sample(&mut rng)).collect();
            v.sort_by(f64::total_cmp);
            let ks = v
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let f = s.cdf(x).unwrap();
                    f64::max((f - i as f64 / v.len() as f64).abs(), ((i + 1) as f64 / v.len() as f64 - f).abs())
                })
                .fold(0.0, f64::max);
            assert!(ks < 0.015, "{}: {ks}", s.name());
            for u in [0.1, 0.5, 0.93] {
                assert!((s.cdf(s.quantile(u).unwrap()).unwrap() - u).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn heterogeneity_models() {
        let h = HeterogeneityModel::location_shifts(3, 1.0).unwrap();
        let locs: Vec<f64> = h.transforms().iter().map(|t| t.loc).collect();
        assert_eq!(locs, vec![-0.5, 0.0, 0.5]);
        assert!(HeterogeneityModel::new(vec![Affine { loc: 0.0, scale: 0.0 }]).is_err());
        let sc = Heterogeneous {
            base: UniformScores::standard(),
            model: h,
        };
        assert!(sc.check_agents(3).is_ok() && sc.check_agents(4).is_err());
        let mut rng = Streams::new(2).stream(Domain::Auxiliary, 0, 0);
        let v = sc.calibration_score(2, &mut rng);
        assert!((0.5..1.5).contains(&v));
    }
}
