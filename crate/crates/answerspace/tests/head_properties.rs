//! Property tests for the prediction rule and the loss terms.

use answerspace::head::{
    classification_loss, combined_loss, predict, regression_loss, softmax, DistanceVector,
    GroundTruth, Metric, ScoreVector,
};
use proptest::prelude::*;

fn scores(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-30.0..30.0f64, len..=len)
}

fn distances(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..10.0f64, len..=len)
}

fn truth(len: usize) -> impl Strategy<Value = GroundTruth> {
    prop::collection::vec(prop::bool::ANY, len..=len).prop_map(move |mut marks| {
        if !marks.iter().any(|&m| m) {
            marks[0] = true;
        }
        GroundTruth::new(marks).expect("non-empty")
    })
}

/// Rejects draws whose two best combined probabilities come within
/// floating-point noise of each other; the invariants below are exact
/// only away from such ties.
fn winner_margin(y: &[f64], d: &[f64], lambda: f64) -> f64 {
    let neg: Vec<f64> = d.iter().map(|&v| -v).collect();
    let sd = softmax(&neg);
    let sy = softmax(y);
    let mut combined: Vec<f64> = sy
        .iter()
        .zip(&sd)
        .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
        .collect();
    combined.sort_by(|a, b| b.partial_cmp(a).unwrap());
    combined[0] - combined[1]
}

proptest! {
    #[test]
    fn predict_is_shift_invariant(
        y in scores(6),
        d in distances(6),
        lambda in 0.0..=1.0f64,
        shift in -50.0..50.0f64,
    ) {
        prop_assume!(winner_margin(&y, &d, lambda) > 1e-9);
        let dist = DistanceVector { values: d, metric: Metric::Euclidean };
        let base = predict(&ScoreVector(y.clone()), &dist, lambda).unwrap();
        let shifted: Vec<f64> = y.iter().map(|v| v + shift).collect();
        let moved = predict(&ScoreVector(shifted), &dist, lambda).unwrap();
        prop_assert_eq!(base, moved);
    }

    #[test]
    fn predict_endpoints_reduce_to_argmax_and_argmin(
        y in scores(5),
        d in distances(5),
    ) {
        prop_assume!(winner_margin(&y, &d, 1.0) > 1e-9);
        prop_assume!(winner_margin(&y, &d, 0.0) > 1e-9);
        let dist = DistanceVector { values: d.clone(), metric: Metric::Euclidean };
        let classification = predict(&ScoreVector(y.clone()), &dist, 1.0).unwrap();
        let argmax = y
            .iter()
            .enumerate()
            .fold(0, |best, (i, &v)| if v > y[best] { i } else { best });
        prop_assert_eq!(classification, argmax);

        let nearest = predict(&ScoreVector(y), &dist, 0.0).unwrap();
        let argmin = d
            .iter()
            .enumerate()
            .fold(0, |best, (i, &v)| if v < d[best] { i } else { best });
        prop_assert_eq!(nearest, argmin);
    }

    #[test]
    fn losses_are_non_negative(
        y in scores(5),
        d in distances(5),
        t in truth(5),
        lambda in 0.0..=1.0f64,
    ) {
        let (l_c, _) = classification_loss(&ScoreVector(y), &t).unwrap();
        let dist = DistanceVector { values: d, metric: Metric::Euclidean };
        let (l_p, _) = regression_loss(&dist, &t, 1.0).unwrap();
        prop_assert!(l_c >= 0.0);
        prop_assert!(l_p >= 0.0);
        let combined = combined_loss(l_c, l_p, lambda).unwrap();
        prop_assert!(combined >= 0.0);
    }

    // L_p = 0 exactly when every correct answer sits at distance 0 and
    // every incorrect one at least delta away.
    #[test]
    fn hinge_loss_zero_iff_separated(d in distances(5), t in truth(5)) {
        let delta = 1.0;
        let dist = DistanceVector { values: d.clone(), metric: Metric::Euclidean };
        let (l_p, _) = regression_loss(&dist, &t, delta).unwrap();
        let separated = d.iter().zip(t.marks()).all(|(&di, &positive)| {
            if positive { di == 0.0 } else { di >= delta }
        });
        prop_assert_eq!(l_p == 0.0, separated);
    }

    // Decreasing the correct answer's distance never decreases its
    // combined probability.
    #[test]
    fn shrinking_correct_distance_is_monotone(
        y in scores(4),
        d in distances(4),
        lambda in 0.0..=1.0f64,
        cut in 0.0..=1.0f64,
    ) {
        let probs = |d: &[f64]| -> Vec<f64> {
            let neg: Vec<f64> = d.iter().map(|&v| -v).collect();
            let sd = softmax(&neg);
            let sy = softmax(&y);
            sy.iter().zip(&sd).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect()
        };
        let before = probs(&d);
        let mut closer = d.clone();
        closer[0] *= cut;
        let after = probs(&closer);
        prop_assert!(after[0] >= before[0] - 1e-12);
    }

    #[test]
    fn combined_loss_endpoints_are_exact(
        l_c in 0.0..100.0f64,
        l_p in 0.0..100.0f64,
    ) {
        prop_assert_eq!(combined_loss(l_c, l_p, 1.0).unwrap(), l_c);
        prop_assert_eq!(combined_loss(l_c, l_p, 0.0).unwrap(), l_p);
    }
}
