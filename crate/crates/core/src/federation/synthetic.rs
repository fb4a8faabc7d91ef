//! Heteroscedastic Poisson regression with rare Gaussian outliers.
//!
//! `X ~ U[1, 5]` and
//! `Y = Pois(sin(X)^2 + 0.1) + 0.03 X e1 + 25 1{U < 0.01} e2`
//! with `e1, e2` standard normal.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use statrs::function::erf::erfc;

use super::scenario::{Scenario, TestPoint};
use crate::conformal::ScoreFunction;
use crate::error::{check_probability, invalid, Result};
use crate::rng::StreamRng;

const X_RANGE: (f64, f64) = (1.0, 5.0);
const NOISE_SLOPE: f64 = 0.03;
const OUTLIER_PROB: f64 = 0.01;
const OUTLIER_SCALE: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticPoint {
    pub x: f64,
    pub y: f64,
    /// Poisson component of `y`.
    pub poisson: f64,
    pub outlier: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticModel {
    /// Include the contamination term.
    pub outliers: bool,
}

impl Default for SyntheticModel {
    fn default() -> Self {
        SyntheticModel { outliers: true }
    }
}

impl SyntheticModel {
    pub fn rate(x: f64) -> f64 {
        x.sin().powi(2) + 0.1
    }

    pub fn draw(&self, rng: &mut StreamRng) -> SyntheticPoint {
        let x = rng.random_range(X_RANGE.0..=X_RANGE.1);
        let poisson: f64 = Poisson::new(Self::rate(x)).expect("positive rate").sample(rng);
        let e1: f64 = StandardNormal.sample(rng);
        let e2: f64 = StandardNormal.sample(rng);
        let u: f64 = rng.random();
        // All variates are drawn even without outliers so streams stay aligned.
        let outlier = self.outliers && u < OUTLIER_PROB;
        let mut y = poisson + NOISE_SLOPE * x * e1;
        if outlier {
            y += OUTLIER_SCALE * e2;
        }
        SyntheticPoint { x, y, poisson, outlier }
    }

    /// `P(Y <= y | X = x)`.
    pub fn conditional_cdf(&self, x: f64, y: f64) -> f64 {
        let lambda = Self::rate(x);
        let sd = NOISE_SLOPE * x;
        let sd_out = (sd * sd + OUTLIER_SCALE * OUTLIER_SCALE).sqrt();
        let w_out = if self.outliers { OUTLIER_PROB } else { 0.0 };
        let phi = |z: f64| 0.5 * erfc(-z / std::f64::consts::SQRT_2);
        let mut pk = (-lambda).exp();
        let mut total = 0.0;
        for k in 0..60 {
            let kf = k as f64;
            total += pk * ((1.0 - w_out) * phi((y - kf) / sd) + w_out * phi((y - kf) / sd_out));
            pk *= lambda / (kf + 1.0);
            if pk < 1e-18 {
                break;
            }
        }
        total.clamp(0.0, 1.0)
    }

    pub fn conditional_quantile(&self, x: f64, p: f64) -> f64 {
        let (mut lo, mut hi) = (-400.0, 400.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if self.conditional_cdf(x, mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// `count` draws from the model.
pub fn synthetic_dataset(model: SyntheticModel, count: usize, rng: &mut StreamRng) -> Result<Vec<SyntheticPoint>> {
    if count == 0 {
        return invalid("synthetic dataset needs count >= 1");
    }
    Ok((0..count).map(|_| model.draw(rng)).collect())
}

const ORACLE_GRID: usize = 2001;

/// Conditional `alpha/2` and `1 - alpha/2` quantiles of the model, tabulated
/// on a fine `x` grid and linearly interpolated. Stands in for a trained
/// quantile regressor.
#[derive(Debug, Clone)]
pub struct OracleCqr {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl OracleCqr {
    pub fn new(model: SyntheticModel, alpha: f64) -> Result<Self> {
        check_probability("alpha", alpha)?;
        let xs = (0..ORACLE_GRID).map(|i| X_RANGE.0 + (X_RANGE.1 - X_RANGE.0) * i as f64 / (ORACLE_GRID - 1) as f64);
        let (lower, upper) = xs
            .map(|x| {
                (
                    model.conditional_quantile(x, alpha / 2.0),
                    model.conditional_quantile(x, 1.0 - alpha / 2.0),
                )
            })
            .unzip();
        Ok(OracleCqr { lower, upper })
    }

    fn interp(table: &[f64], x: f64) -> f64 {
        let t = ((x - X_RANGE.0) / (X_RANGE.1 - X_RANGE.0)).clamp(0.0, 1.0) * (ORACLE_GRID - 1) as f64;
        let i = (t.floor() as usize).min(ORACLE_GRID - 2);
        let f = t - i as f64;
        table[i] * (1.0 - f) + table[i + 1] * f
    }

    pub fn lower(&self, x: f64) -> f64 {
        Self::interp(&self.lower, x)
    }

    pub fn upper(&self, x: f64) -> f64 {
        Self::interp(&self.upper, x)
    }

    pub fn score(&self, p: &SyntheticPoint) -> f64 {
        (self.lower(p.x) - p.y).max(p.y - self.upper(p.x))
    }

    pub fn score_function(self: &Arc<Self>) -> ScoreFunction<f64> {
        let (a, b) = (Arc::clone(self), Arc::clone(self));
        ScoreFunction::cqr(move |x| a.lower(*x), move |x| b.upper(*x))
    }
}

/// Synthetic data scored by the oracle CQR predictor.
#[derive(Debug, Clone)]
pub struct SyntheticScenario {
    pub model: SyntheticModel,
    pub oracle: Arc<OracleCqr>,
}

impl SyntheticScenario {
    pub fn new(model: SyntheticModel, alpha: f64) -> Result<Self> {
        Ok(SyntheticScenario {
            model,
            oracle: Arc::new(OracleCqr::new(model, alpha)?),
        })
    }
}

impl Scenario for SyntheticScenario {
    fn calibration_score(&self, _agent: usize, rng: &mut StreamRng) -> f64 {
        self.oracle.score(&self.model.draw(rng))
    }

    fn test_point(&self, rng: &mut StreamRng) -> TestPoint {
        let p = self.model.draw(rng);
        TestPoint {
            score: self.oracle.score(&p),
            width: self.oracle.upper(p.x) - self.oracle.lower(p.x),
        }
    }

    fn describe(&self) -> String {
        if self.model.outliers {
            "synthetic poisson with outliers, oracle CQR".into()
        } else {
            "synthetic poisson without outliers, oracle CQR".into()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Domain, Streams};

    fn rng(seed: u64) -> StreamRng {
        Streams::new(seed).stream(Domain::Auxiliary, 0, 0)
    }

    #[test]
    fn moments_and_outlier_rate() {
        let d = synthetic_dataset(SyntheticModel::default(), 2000, &mut rng(4)).unwrap();
        let mean_y = d.iter().map(|p| p.y).sum::<f64>() / 2000.0;
        assert!((0.0..=5.0).contains(&mean_y), "{mean_y}");
        let frac = d.iter().filter(|p| p.outlier).count() as f64 / 2000.0;
        let se = (0.01f64 * 0.99 / 2000.0).sqrt();
        assert!((frac - 0.01).abs() <= 3.0 * se, "{frac}");
        assert!(synthetic_dataset(SyntheticModel::default(), 0, &mut rng(4)).is_err());
    }

    #[test]
    fn no_outlier_ablation() {
        let model = SyntheticModel { outliers: false };
        let d = synthetic_dataset(model, 10_000, &mut rng(5)).unwrap();
        for p in &d {
            assert!(!p.outlier);
            // 0.03 * 5 * 6 sigma
            assert!((p.y - p.poisson).abs() < 0.9);
        }
    }

    #[test]
    fn x_is_uniform() {
        let mut xs: Vec<f64> = synthetic_dataset(SyntheticModel::default(), 10_000, &mut rng(6))
            .unwrap()
            .iter()
            .map(|p| p.x)
            .collect();
        xs.sort_by(f64::total_cmp);
        let ks = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = (x - 1.0) / 4.0;
                f64::max((f - i as f64 / 1e4).abs(), ((i + 1) as f64 / 1e4 - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.02, "{ks}");
        assert!(xs[0] >= 1.0 && xs[9999] <= 5.0);
    }

    #[test]
    fn oracle_quantiles_cover_at_nominal_rate() {
        let sc = SyntheticScenario::new(SyntheticModel::default(), 0.1).unwrap();
        let mut r = rng(7);
        let inside = (0..20_000)
            .filter(|_| sc.test_point(&mut r).score <= 0.0)
            .count() as f64
            / 20_000.0;
        let se = (0.09f64 / 20_000.0).sqrt();
        assert!((inside - 0.9).abs() < 4.0 * se, "{inside}");
        let x = 2.7;
        let lo = sc.oracle.lower(x);
        assert!((sc.model.conditional_cdf(x, lo) - 0.05).abs() < 1e-4);
        let sf = sc.oracle.score_function();
        assert_eq!(sf.interval(&x, 0.0).lower, lo);
    }
}
