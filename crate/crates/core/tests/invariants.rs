use fedcal::conformal::{fedcp_qq_calibrate, split_cp_calibrate, CalibrationParams};
use fedcal::coverage_table::{CoverageTable, TableKey};
use fedcal::order_stats::{ScoreMatrix, ScoreSample};
use proptest::prelude::*;

fn matrix(m: usize, n: usize, raw: &[f64]) -> ScoreMatrix {
    ScoreMatrix::from_rows(raw.chunks(n).take(m).map(<[f64]>::to_vec).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scaling_scores_scales_threshold(
        m in 1usize..8,
        n in 5usize..30,
        c in 0.01f64..100.0,
        alpha in 0.05f64..0.5,
        raw in prop::collection::vec(0.0f64..10.0, 240),
    ) {
        let base = matrix(m, n, &raw);
        let scaled = matrix(m, n, &raw.iter().map(|v| v * c).collect::<Vec<_>>());
        let (a, b) = match (fedcp_qq_calibrate(&base, alpha, None), fedcp_qq_calibrate(&scaled, alpha, None)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(_), Err(_)) => return Ok(()),
            _ => return Err(TestCaseError::fail("feasibility changed under scaling")),
        };
        prop_assert_eq!(&a.params, &b.params);
        if a.q_hat.is_infinite() {
            prop_assert!(b.q_hat.is_infinite());
        } else {
            let (qa, qb) = (a.q_hat.value(), b.q_hat.value());
            prop_assert!((qa * c - qb).abs() <= 1e-12 * qb.abs().max(1.0));
            for &t in &raw[..20] {
                prop_assert_eq!(a.admits(t), b.admits(t * c));
            }
        }
    }

    #[test]
    fn single_agent_matches_split_conformal(
        n in 1usize..200,
        alpha in 0.01f64..0.99,
        raw in prop::collection::vec(0.0f64..1.0, 200),
    ) {
        let scores = raw[..n].to_vec();
        let fed = fedcp_qq_calibrate(&ScoreMatrix::from_rows(vec![scores.clone()]).unwrap(), alpha, None);
        let central = split_cp_calibrate(&ScoreSample::new(scores).unwrap(), alpha).unwrap();
        let rank = ((n + 1) as f64 * (1.0 - alpha)).ceil() as usize;
        match fed {
            Ok(r) => {
                let CalibrationParams::FedcpQq { l, k, .. } = r.params else { unreachable!() };
                prop_assert_eq!(k, 1);
                if l == rank {
                    prop_assert_eq!(r.q_hat, central.q_hat);
                }
            }
            // Only when no rank within n reaches the target.
            Err(_) => prop_assert!(rank > n),
        }
    }
}

#[test]
fn table_cache_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.txt");
    let key = TableKey::new(7, 13).unwrap();
    let mut t = CoverageTable::new(key);
    let sel = t.select(0.1).unwrap();
    t.save(&path).unwrap();
    let mut back = CoverageTable::load(&path).unwrap();
    assert_eq!(back.key(), key);
    assert_eq!(back.computed_entries(), 0);
    assert_eq!(back.select(0.1).unwrap(), sel);
    assert_eq!(back.computed_entries(), 0);
}
