use hessix::data::Dataset;
use hessix::bnn::ModelCheckpoint;
use hessix::eval::{simulate, SyntheticSpec};
use hessix::interactions::{
    absolute_expected, detect, expected_absolute, group_expected, rank_weighted_distance, DetectOptions, Grouping,
    HessianField, Partition,
};
use hessix::math::{Activation, Matrix, RngStream};
use hessix::train::{train_pipeline, TrainConfig, TrainOutcome};
use hessix::Exec;
use proptest::prelude::*;

fn small_spec() -> SyntheticSpec {
    SyntheticSpec {
        n_train: 600,
        n_val: 150,
        n_test: 150,
        signal_to_noise: 4.0,
        ..Default::default()
    }
}

fn quick_config(seed: u64) -> TrainConfig {
    TrainConfig {
        hidden: vec![24, 12],
        activation: Activation::Tanh,
        epochs: 40,
        batch_size: 64,
        learning_rate: 5e-3,
        eval_mc_samples: 10,
        seed,
        ..Default::default()
    }
}

fn trained(data: &Dataset, val: &Dataset, seed: u64) -> TrainOutcome {
    train_pipeline(data, val, None, &quick_config(seed), Exec::default(), |_, _| {}).unwrap()
}

fn opts() -> DetectOptions {
    DetectOptions {
        mc_samples: 12,
        max_rows: Some(150),
        seed: 1,
        ..Default::default()
    }
}

const GROUPINGS: [Grouping; 3] = [Grouping::Single, Grouping::Clusters(5), Grouping::Singletons];

#[test]
fn measures_are_ordered_and_reproducible() {
    let sim = simulate(&small_spec(), RngStream::new(1)).unwrap();
    let out = trained(&sim.train, &sim.val, 2);
    let a = detect(&out.checkpoint, &sim.train.x, &GROUPINGS, &opts(), Exec::default()).unwrap();
    let b = detect(&out.checkpoint, &sim.train.x, &GROUPINGS, &opts(), Exec::Sequential).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.pairs.len(), 28);
    for c in 0..a.pairs.len() {
        let (aeh, geh, eah) = (a.estimates[0][c].mean, a.estimates[1][c].mean, a.estimates[2][c].mean);
        assert!(aeh <= geh + 1e-12 && geh <= eah + 1e-12, "{aeh} {geh} {eah}");
    }
}

#[test]
fn training_is_deterministic_across_strategies() {
    let sim = simulate(&small_spec(), RngStream::new(3)).unwrap();
    let cfg = quick_config(5);
    let a = train_pipeline(&sim.train, &sim.val, Some(&sim.test), &cfg, Exec::Sequential, |_, _| {}).unwrap();
    let b = train_pipeline(&sim.train, &sim.val, Some(&sim.test), &cfg, Exec::default(), |_, _| {}).unwrap();
    assert_eq!(a.checkpoint, b.checkpoint);
    assert_eq!(a.report, b.report);
}

#[test]
fn checkpoint_round_trip_preserves_detection() {
    let sim = simulate(&small_spec(), RngStream::new(4)).unwrap();
    let out = trained(&sim.train, &sim.val, 4);
    let back = ModelCheckpoint::from_json(&out.checkpoint.to_json().unwrap()).unwrap();
    assert_eq!(back, out.checkpoint);
    let a = detect(&out.checkpoint, &sim.train.x, &[Grouping::Single], &opts(), Exec::default()).unwrap();
    let b = detect(&back, &sim.train.x, &[Grouping::Single], &opts(), Exec::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn permutation_weakens_interaction_scores() {
    let sim = simulate(&small_spec(), RngStream::new(6)).unwrap();
    let mean_score = |train: &Dataset, val: &Dataset| {
        let out = trained(train, val, 7);
        let det = detect(&out.checkpoint, &train.x, &[Grouping::Clusters(5)], &opts(), Exec::default()).unwrap();
        det.estimates[0].iter().map(|e| e.mean.abs()).sum::<f64>() / det.pairs.len() as f64
    };
    let original = mean_score(&sim.train, &sim.val);
    let mut y = sim.train.y.clone();
    y.reverse();
    y.rotate_left(17);
    let permuted = sim.train.with_target(y).unwrap();
    assert!(mean_score(&permuted, &sim.val) < original);
}

#[test]
fn dataset_csv_round_trip_through_files() {
    let sim = simulate(&small_spec(), RngStream::new(8)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.csv");
    sim.train.write_csv(&path, Some("round trip")).unwrap();
    assert_eq!(Dataset::read_csv(&path, None).unwrap(), sim.train);
    let by_name = Dataset::read_csv(&path, Some("x3")).unwrap();
    assert_eq!(by_name.dim(), 8);
    assert_eq!(by_name.y, sim.train.x.column(2));
}

fn field_and_partition() -> impl Strategy<Value = (HessianField, Partition)> {
    (2usize..40, 1usize..5).prop_flat_map(|(n, l)| {
        (
            proptest::collection::vec(-5.0f64..5.0, n * l),
            proptest::collection::vec(0usize..4, n),
        )
            .prop_map(move |(vals, groups)| {
                let pairs = (0..l).map(|k| (k, k + 1)).collect();
                let values = Matrix::from_vec(n, l, vals).unwrap();
                let mut sizes = vec![0; 4];
                for g in &groups {
                    sizes[*g] += 1;
                }
                let part = Partition {
                    centroids: Matrix::zeros(4, 1),
                    assignments: groups,
                    sizes,
                };
                (HessianField { pairs, values }, part)
            })
    })
}

proptest! {
    #[test]
    fn geh_lies_between_aeh_and_eah((field, part) in field_and_partition()) {
        let geh = group_expected(&field, &part).unwrap();
        let aeh = absolute_expected(&field);
        let eah = expected_absolute(&field);
        for c in 0..geh.len() {
            prop_assert!(aeh[c] <= geh[c] + 1e-12);
            prop_assert!(geh[c] <= eah[c] + 1e-12);
        }
    }

    #[test]
    fn geh_ignores_row_order((field, part) in field_and_partition(), shift in 0usize..40) {
        let n = field.values.rows();
        let order: Vec<usize> = (0..n).map(|r| (r + shift) % n).collect();
        let moved = HessianField { pairs: field.pairs.clone(), values: field.values.select_rows(&order) };
        let moved_part = Partition {
            assignments: order.iter().map(|&r| part.assignments[r]).collect(),
            ..part.clone()
        };
        let a = group_expected(&field, &part).unwrap();
        let b = group_expected(&moved, &moved_part).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_weighted_distance_is_symmetric(
        a in proptest::collection::vec(0.0f64..3.0, 1..20),
        seed in 0u64..1000,
    ) {
        use rand::Rng;
        let mut r = RngStream::new(seed).rng();
        let b: Vec<f64> = a.iter().map(|v| v + r.random_range(-0.5..0.5)).collect();
        let d1 = rank_weighted_distance(&a, &b).unwrap();
        let d2 = rank_weighted_distance(&b, &a).unwrap();
        prop_assert!(d1 >= 0.0);
        prop_assert!((d1 - d2).abs() < 1e-12);
    }
}
