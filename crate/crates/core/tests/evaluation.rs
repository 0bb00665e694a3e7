//! Accuracy, the selection metric and the cross-institution matrix against
//! hand-scored fixtures and direct computation.

use fedskew_core::evaluation::{
    accuracy, cross_institution_matrix, drop_rate, evaluate, predict, selection_metric, TrialSeeds,
};
use fedskew_core::federation::TrainOutcome;
use fedskew_core::nn::build_model;
use fedskew_core::{
    Arch, InstitutionShard, LabeledDataset, Layer, Method, Mitigations, ModelState, Tensor,
};
use proptest::prelude::*;

/// Flatten then dense 2 -> 2, so logits are `W x + b` on two-pixel images.
fn linear(w: [f64; 4], b: [f64; 2]) -> ModelState {
    let arch = Arch {
        input: [1, 1, 2],
        num_classes: 2,
        layers: vec![
            Layer::Flatten,
            Layer::Dense {
                in_features: 2,
                out_features: 2,
            },
        ],
    };
    let mut p = w.to_vec();
    p.extend(b);
    build_model(&arch, 0).unwrap().unflatten_params(&p).unwrap()
}

fn dataset(points: &[([f64; 2], usize)]) -> LabeledDataset {
    dataset_from(points, 0)
}

fn dataset_from(points: &[([f64; 2], usize)], first_id: u64) -> LabeledDataset {
    let data: Vec<f64> = points.iter().flat_map(|(x, _)| *x).collect();
    let labels = points.iter().map(|p| p.1).collect();
    let ids = (first_id..first_id + points.len() as u64).collect();
    LabeledDataset::new(
        Tensor::new(vec![points.len(), 1, 1, 2], data).unwrap(),
        labels,
        2,
        ids,
    )
    .unwrap()
}

/// Ten samples scored by hand under the identity model: seven are correct.
fn fixture() -> LabeledDataset {
    dataset(&[
        ([0.9, 0.1], 0),
        ([0.2, 0.8], 1),
        ([0.6, 0.4], 0),
        ([0.3, 0.7], 0),
        ([0.5, 0.1], 0),
        ([0.0, 0.4], 1),
        ([0.7, 0.2], 1),
        ([0.1, 0.9], 1),
        ([0.8, 0.6], 1),
        ([0.4, 0.2], 0),
    ])
}

fn identity() -> ModelState {
    linear([1.0, 0.0, 0.0, 1.0], [0.0, 0.0])
}

/// `-alpha_y log softmax(x)_y` for the identity model, averaged.
fn oracle_metric(points: &LabeledDataset, alphas: [f64; 2]) -> f64 {
    let x = points.images().data();
    let mut sum = 0.0;
    for (i, &y) in points.labels().iter().enumerate() {
        let z = [x[2 * i], x[2 * i + 1]];
        let log_p = z[y] - (z[0].exp() + z[1].exp()).ln();
        sum += -alphas[y] * log_p;
    }
    sum / points.len() as f64
}

#[test]
fn constant_predictor_scores_zero_or_one() {
    let always_one = linear([0.0; 4], [0.0, 1.0]);
    let ones = dataset(&[([0.1, 0.2], 1), ([0.7, 0.3], 1), ([0.5, 0.5], 1)]);
    let zeros = dataset(&[([0.1, 0.2], 0), ([0.7, 0.3], 0)]);
    assert_eq!(accuracy(&always_one, &ones).unwrap(), 1.0);
    assert_eq!(accuracy(&always_one, &zeros).unwrap(), 0.0);
}

#[test]
fn hand_scored_fixture() {
    let ds = fixture();
    assert_eq!(
        predict(&identity(), &ds).unwrap(),
        vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 0]
    );
    assert_eq!(accuracy(&identity(), &ds).unwrap(), 0.7);
}

#[test]
fn ties_predict_the_lower_category() {
    let ds = dataset(&[([0.5, 0.5], 0), ([0.3, 0.3], 1)]);
    assert_eq!(predict(&identity(), &ds).unwrap(), vec![0, 0]);
}

#[test]
fn selection_metric_matches_direct_loss() {
    let ds = fixture();
    let plain = selection_metric(&identity(), &[&ds], false).unwrap();
    assert!((plain - oracle_metric(&ds, [1.0, 1.0])).abs() < 1e-12);
    // Dropping the fourth sample leaves a pooled histogram of [4, 5].
    let a = dataset(&fixture_points()[..3]);
    let b = dataset_from(&fixture_points()[4..], 100);
    let pooled = LabeledDataset::concat(&[&a, &b]).unwrap();
    assert_eq!(pooled.histogram(), [4, 5]);
    let wl = selection_metric(&identity(), &[&a, &b], true).unwrap();
    assert!((wl - oracle_metric(&pooled, [5.0 / 4.0, 1.0])).abs() < 1e-12);
}

fn fixture_points() -> Vec<([f64; 2], usize)> {
    let ds = fixture();
    let x = ds.images().data();
    ds.labels()
        .iter()
        .enumerate()
        .map(|(i, &y)| ([x[2 * i], x[2 * i + 1]], y))
        .collect()
}

#[test]
fn weighted_metric_on_balanced_data_equals_plain() {
    let ds = fixture();
    assert_eq!(ds.histogram(), [5, 5]);
    let plain = selection_metric(&identity(), &[&ds], false).unwrap();
    let wl = selection_metric(&identity(), &[&ds], true).unwrap();
    assert_eq!(plain.to_bits(), wl.to_bits());
}

#[test]
fn confident_correct_model_has_zero_metric() {
    let ds = dataset(&[([1.0, 0.0], 0), ([0.0, 1.0], 1), ([0.9, 0.2], 0)]);
    let sharp = linear([1000.0, 0.0, 0.0, 1000.0], [0.0, 0.0]);
    assert_eq!(selection_metric(&sharp, &[&ds], false).unwrap(), 0.0);
    assert_eq!(accuracy(&sharp, &ds).unwrap(), 1.0);
}

#[test]
fn chunked_evaluation_covers_large_sets() {
    let points: Vec<([f64; 2], usize)> = (0..600)
        .map(|i| ([(i % 7) as f64 / 7.0, (i % 11) as f64 / 11.0], i % 2))
        .collect();
    let ds = dataset(&points);
    let expected = points
        .iter()
        .filter(|(x, y)| usize::from(x[1] > x[0]) == *y)
        .count() as f64
        / 600.0;
    assert_eq!(accuracy(&identity(), &ds).unwrap(), expected);
    assert!(
        (selection_metric(&identity(), &[&ds], false).unwrap() - oracle_metric(&ds, [1.0, 1.0]))
            .abs()
            < 1e-12
    );
}

#[test]
fn cross_matrix_rows_follow_models() {
    let ds = fixture();
    let other = dataset(&[([0.2, 0.1], 0), ([0.1, 0.3], 0)]);
    let flipped = linear([0.0, 1.0, 1.0, 0.0], [0.0, 0.0]);
    let m = cross_institution_matrix(
        &[identity(), flipped.clone(), identity()],
        &[&ds, &other, &ds],
    )
    .unwrap();
    assert_eq!(m[0], m[2]);
    assert_eq!(m[0], vec![0.7, 0.5, 0.7]);
    assert_eq!(m[1], vec![0.3, 0.5, 0.3]);
    assert!(cross_institution_matrix(&[identity()], &[&ds, &other]).is_err());
}

#[test]
fn evaluate_scores_pooled_test_shards() {
    let shard = |id, test: LabeledDataset| InstitutionShard {
        institution_id: id,
        train: fixture(),
        val: fixture(),
        test,
        degradation: None,
        degradation_seeds: [0; 3],
    };
    let shards = vec![
        shard(0, fixture()),
        shard(1, dataset_from(&[([0.2, 0.1], 0), ([0.1, 0.3], 0)], 100)),
    ];
    let outcome = TrainOutcome {
        model: identity(),
        final_model: identity(),
        institution_models: vec![identity(), identity()],
        logs: vec![],
        selected_round: None,
        trace: vec![],
    };
    let seeds = TrialSeeds {
        model: 1,
        data_order: 2,
        partition: 3,
    };
    let r = evaluate(
        &outcome,
        &shards,
        Method::Fedavg,
        Mitigations::default(),
        seeds,
    )
    .unwrap();
    assert_eq!(r.test_accuracy, 8.0 / 12.0);
    assert_eq!(r.cross_matrix, vec![vec![0.7, 0.5], vec![0.7, 0.5]]);
    let r = r.with_reference("centralized", 0.8).unwrap();
    let d = r.drop_rate.unwrap();
    assert!((d.value - 100.0 * (0.8 - 8.0 / 12.0) / 0.8).abs() < 1e-12);
    assert_eq!(d.reference, "centralized");
}

#[test]
fn drop_rate_examples() {
    assert!((drop_rate(0.72, 0.80).unwrap() - 10.0).abs() < 1e-12);
    assert_eq!(drop_rate(0.9, 0.9).unwrap(), 0.0);
    assert!(drop_rate(0.9, 0.0)
        .unwrap_err()
        .to_string()
        .contains("reference"));
}

proptest! {
    #[test]
    fn evaluation_is_permutation_invariant(seed in 0u64..1000) {
        let mut points = fixture_points();
        let mut s = seed;
        for i in (1..points.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            points.swap(i, (s >> 33) as usize % (i + 1));
        }
        let ds = dataset(&points);
        prop_assert_eq!(accuracy(&identity(), &ds).unwrap(), 0.7);
        let a = selection_metric(&identity(), &[&ds], true).unwrap();
        let b = selection_metric(&identity(), &[&fixture()], true).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }
}
