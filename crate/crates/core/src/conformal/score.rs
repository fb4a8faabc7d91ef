use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

use super::CalibrationResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    AbsoluteResidual,
    Cqr,
}

type Predictor<X> = Arc<dyn Fn(&X) -> f64 + Send + Sync>;

/// A nonconformity score built on a fixed, caller-supplied predictor.
pub enum ScoreFunction<X: ?Sized> {
    /// `|y - f(x)|`.
    AbsoluteResidual(Predictor<X>),
    /// `max(f_lo(x) - y, y - f_hi(x))`; may be negative.
    Cqr { lower: Predictor<X>, upper: Predictor<X> },
}

impl<X: ?Sized> Clone for ScoreFunction<X> {
    fn clone(&self) -> Self {
        match self {
            ScoreFunction::AbsoluteResidual(f) => ScoreFunction::AbsoluteResidual(Arc::clone(f)),
            ScoreFunction::Cqr { lower, upper } => ScoreFunction::Cqr {
                lower: Arc::clone(lower),
                upper: Arc::clone(upper),
            },
        }
    }
}

impl<X: ?Sized> fmt::Debug for ScoreFunction<X> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ScoreFunction({:?})", self.kind())
    }
}

impl<X: ?Sized> ScoreFunction<X> {
    pub fn absolute_residual(f: impl Fn(&X) -> f64 + Send + Sync + 'static) -> Self {
        ScoreFunction::AbsoluteResidual(Arc::new(f))
    }

    pub fn cqr(
        lower: impl Fn(&X) -> f64 + Send + Sync + 'static,
        upper: impl Fn(&X) -> f64 + Send + Sync + 'static,
    ) -> Self {
        ScoreFunction::Cqr {
            lower: Arc::new(lower),
            upper: Arc::new(upper),
        }
    }

    pub fn kind(&self) -> ScoreKind {
        match self {
            ScoreFunction::AbsoluteResidual(_) => ScoreKind::AbsoluteResidual,
            ScoreFunction::Cqr { .. } => ScoreKind::Cqr,
        }
    }

    pub fn score(&self, x: &X, y: f64) -> f64 {
        match self {
            ScoreFunction::AbsoluteResidual(f) => (y - f(x)).abs(),
            ScoreFunction::Cqr { lower, upper } => (lower(x) - y).max(y - upper(x)),
        }
    }

    /// Interval `{y : score(x, y) <= q}` for a finite or infinite `q`.
    pub fn interval(&self, x: &X, q: f64) -> PredictionInterval {
        if q == f64::INFINITY {
            return PredictionInterval::unbounded();
        }
        let (lo, hi) = match self {
            ScoreFunction::AbsoluteResidual(f) => {
                let c = f(x);
                (c - q, c + q)
            }
            ScoreFunction::Cqr { lower, upper } => (lower(x) - q, upper(x) + q),
        };
        // A very negative CQR threshold empties the set; keep lower <= upper.
        if lo > hi {
            let mid = 0.5 * (lo + hi);
            PredictionInterval { lower: mid, upper: mid }
        } else {
            PredictionInterval { lower: lo, upper: hi }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionInterval {
    pub lower: f64,
    pub upper: f64,
}

impl PredictionInterval {
    pub fn unbounded() -> Self {
        PredictionInterval {
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
        }
    }

    pub fn contains(&self, y: f64) -> bool {
        self.lower <= y && y <= self.upper
    }

    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn is_bounded(&self) -> bool {
        self.lower.is_finite() && self.upper.is_finite()
    }
}

/// Prediction set for `x` from a calibrated threshold.
pub fn predict_interval<X: ?Sized>(
    x: &X,
    result: &CalibrationResult,
    sf: &ScoreFunction<X>,
) -> Result<PredictionInterval> {
    if let Some(kind) = result.score_kind {
        if kind != sf.kind() {
            return invalid(format!(
                "threshold was calibrated with {kind:?} scores but the score function is {:?}",
                sf.kind()
            ));
        }
    }
    Ok(sf.interval(x, result.q_hat.value()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub coverage: f64,
    /// Mean length over bounded intervals; `+inf` if none is bounded.
    pub mean_length: f64,
    pub unbounded: usize,
}

/// Empirical coverage (closed intervals) and mean length.
pub fn evaluate(intervals: &[PredictionInterval], y_test: &[f64]) -> Result<Metrics> {
    if intervals.is_empty() {
        return invalid("evaluation needs at least one test point");
    }
    if intervals.len() != y_test.len() {
        return invalid(format!(
            "{} intervals but {} responses",
            intervals.len(),
            y_test.len()
        ));
    }
    let hits = intervals.iter().zip(y_test).filter(|(iv, &y)| iv.contains(y)).count();
    let bounded: Vec<f64> = intervals
        .iter()
        .filter(|iv| iv.is_bounded())
        .map(PredictionInterval::length)
        .collect();
    let mean_length = if bounded.is_empty() {
        f64::INFINITY
    } else {
        bounded.iter().sum::<f64>() / bounded.len() as f64
    };
    Ok(Metrics {
        coverage: hits as f64 / intervals.len() as f64,
        mean_length,
        unbounded: intervals.len() - bounded.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::super::{split_cp_calibrate, CalibrationResult};
    use super::*;
    use crate::order_stats::ScoreSample;

    fn result_with(q: f64) -> CalibrationResult {
        let r = split_cp_calibrate(&ScoreSample::new(vec![q; 9]).unwrap(), 0.5).unwrap();
        assert_eq!(r.q_hat.value(), q);
        r
    }

    #[test]
    fn interval_forms() {
        let abs = ScoreFunction::<f64>::absolute_residual(|_| 5.0);
        let iv = predict_interval(&0.0, &result_with(2.0), &abs).unwrap();
        assert_eq!((iv.lower, iv.upper), (3.0, 7.0));

        let cqr = ScoreFunction::<f64>::cqr(|_| 1.0, |_| 4.0);
        let iv = predict_interval(&0.0, &result_with(0.5), &cqr).unwrap();
        assert_eq!((iv.lower, iv.upper), (0.5, 4.5));
        assert_eq!(cqr.score(&0.0, 5.0), 1.0);
        assert_eq!(cqr.score(&0.0, 2.0), -1.0);

        let mut inf = result_with(1.0);
        inf.q_hat = crate::order_stats::ExtendedScore::INFINITY;
        let iv = predict_interval(&0.0, &inf, &abs).unwrap();
        assert_eq!(iv, PredictionInterval::unbounded());
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let r = result_with(1.0).with_score_kind(ScoreKind::Cqr);
        let abs = ScoreFunction::<f64>::absolute_residual(|x| *x);
        assert!(predict_interval(&1.0, &r, &abs).is_err());
    }

    #[test]
    fn set_membership_matches_score_threshold() {
        let cqr = ScoreFunction::<f64>::cqr(|x| x - 1.0, |x| x + 2.0);
        for q in [-0.5, 0.0, 0.7] {
            let iv = cqr.interval(&3.0, q);
            for y in [-1.0, 1.5, 2.0, 2.5, 4.0, 5.5, 5.69, 5.71, 6.0] {
                assert_eq!(iv.contains(y), cqr.score(&3.0, y) <= q, "q={q} y={y}");
            }
        }
    }

    #[test]
    fn evaluate_examples() {
        let ivs = [
            PredictionInterval { lower: 0.0, upper: 1.0 },
            PredictionInterval { lower: 0.0, upper: 2.0 },
        ];
        let m = evaluate(&ivs, &[0.5, 3.0]).unwrap();
        assert_eq!(m.coverage, 0.5);
        assert_eq!(m.mean_length, 1.5);
        assert_eq!(evaluate(&ivs, &[0.0, 2.0]).unwrap().coverage, 1.0);
        assert!(evaluate(&[], &[]).is_err());
        assert!(evaluate(&ivs, &[1.0]).is_err());

        let mixed = [PredictionInterval::unbounded(), ivs[0]];
        let m = evaluate(&mixed, &[100.0, 0.5]).unwrap();
        assert_eq!((m.coverage, m.mean_length, m.unbounded), (1.0, 1.0, 1));
    }
}
