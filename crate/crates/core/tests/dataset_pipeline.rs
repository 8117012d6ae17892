use piezo_inverse::dataset::{
    collect, collect_grid, differentiate, segment_and_concat, CollectOptions, Dataset, GridPair, GridRole, GridSpec,
    SegmentOptions,
};
use piezo_inverse::nn::{self, LmConfig};
use piezo_inverse::plant::PlantConfig;
use piezo_inverse::rng;

fn small_grid() -> GridSpec {
    GridSpec {
        role: GridRole::Train,
        pairs: vec![GridPair::new(0.005, 3.0), GridPair::new(0.0125, 4.5), GridPair::new(0.02, 8.0)],
    }
}

fn csv_bytes(d: &Dataset) -> Vec<u8> {
    let mut buf = Vec::new();
    d.write_csv(&mut buf).unwrap();
    buf
}

#[test]
fn dataset_csv_is_deterministic() {
    let opts = CollectOptions {
        noise_sigma: 1e-6,
        seed: 11,
        ..Default::default()
    };
    let build = || {
        let runs = collect_grid(&PlantConfig::default(), &small_grid(), &opts).unwrap();
        segment_and_concat(&runs, &SegmentOptions { seed: 4, ..Default::default() }).unwrap()
    };
    let (a, b) = (build(), build());
    assert!(a.segments_tile());
    assert_eq!(csv_bytes(&a), csv_bytes(&b));
}

#[test]
fn shuffle_permutes_segments_only() {
    let runs = collect_grid(&PlantConfig::default(), &small_grid(), &CollectOptions::default()).unwrap();
    let mut orders = Vec::new();
    let mut contents = Vec::new();
    for seed in 0..6 {
        let d = segment_and_concat(&runs, &SegmentOptions { seed, ..Default::default() }).unwrap();
        assert!(d.segments_tile());
        orders.push(d.segments.iter().map(|s| s.omega.to_bits()).collect::<Vec<_>>());
        let mut rows: Vec<(u64, u64)> = (0..d.len()).map(|i| (d.input(i)[0].to_bits(), d.targets[i].to_bits())).collect();
        rows.sort_unstable();
        contents.push(rows);
    }
    assert!(contents.windows(2).all(|w| w[0] == w[1]));
    assert!(orders.iter().any(|o| o != &orders[0]), "no seed changed the order");
}

#[test]
fn single_run_is_its_own_segment() {
    let runs = collect_grid(&PlantConfig::default(), &small_grid(), &CollectOptions::default()).unwrap();
    let one = &runs[..1];
    let a = segment_and_concat(one, &SegmentOptions { seed: 1, ..Default::default() }).unwrap();
    let b = segment_and_concat(one, &SegmentOptions { seed: 99, ..Default::default() }).unwrap();
    assert_eq!(a.segments.len(), 1);
    assert_eq!((a.inputs, a.targets), (b.inputs, b.targets));
}

#[test]
fn one_and_two_input_sets_share_velocity() {
    let opts = CollectOptions {
        noise_sigma: 1e-6,
        seed: 2,
        ..Default::default()
    };
    let runs = collect_grid(&PlantConfig::default(), &small_grid(), &opts).unwrap();
    let one = segment_and_concat(&runs, &SegmentOptions { arity: 1, ..Default::default() }).unwrap();
    let two = segment_and_concat(&runs, &SegmentOptions { arity: 2, ..Default::default() }).unwrap();
    assert_eq!(one.column(0), two.column(0));
    assert_eq!(one.targets, two.targets);
    assert_eq!(two.project(1).unwrap().inputs, one.inputs);
}

#[test]
fn rough_tracking_reaches_reference_speed() {
    let pair = GridPair::new(0.00875, 6.0);
    let traj = collect(&PlantConfig::default(), &pair.reference(), &CollectOptions::default()).unwrap();
    let tail = traj.len() / 2;
    let peak = traj.v[tail..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!((peak - 0.0525).abs() < 0.15 * 0.0525, "peak velocity {peak}");
}

#[test]
fn acceleration_noise_exceeds_velocity_noise() {
    let dt = 0.0005;
    let mut x = vec![0.0; 4000];
    rng::add_gaussian(&mut x, 1e-6, &mut rng::seeded(6));
    let (v, a) = differentiate(&x, dt, 5).unwrap();
    let var = |s: &[f64]| s.iter().map(|y| y * y).sum::<f64>() / s.len() as f64;
    assert!(var(&a) > var(&v));
}

#[test]
fn velocity_only_training_explains_most_variance() {
    let runs = collect_grid(&PlantConfig::default(), &GridSpec::default_train(), &CollectOptions::default()).unwrap();
    let data = segment_and_concat(&runs, &SegmentOptions::default()).unwrap();
    let (_, report) = nn::train(&data, 24, &LmConfig::default(), None).unwrap();
    assert!(
        report.final_train_mse < 0.1 * data.target_variance(),
        "{} vs variance {}",
        report.final_train_mse,
        data.target_variance()
    );
}

#[test]
fn min_speed_drops_resting_patterns() {
    let runs = collect_grid(&PlantConfig::default(), &small_grid(), &CollectOptions::default()).unwrap();
    let all = segment_and_concat(&runs, &SegmentOptions::default()).unwrap();
    let moving = segment_and_concat(&runs, &SegmentOptions { min_speed: 1e-6, ..Default::default() }).unwrap();
    assert!(moving.len() < all.len());
    assert!(moving.column(0).iter().all(|v| v.abs() >= 1e-6));
    assert!(moving.segments_tile());
}

#[test]
fn dataset_csv_round_trips() {
    let runs = collect_grid(&PlantConfig::default(), &small_grid(), &CollectOptions::default()).unwrap();
    let d = segment_and_concat(&runs, &SegmentOptions { arity: 2, ..Default::default() }).unwrap();
    let back = Dataset::read_csv(csv_bytes(&d).as_slice()).unwrap();
    assert_eq!((back.arity, &back.inputs, &back.targets), (2, &d.inputs, &d.targets));
}
