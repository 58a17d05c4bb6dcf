use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tunnelkit_core::gbrt::GbrtParams;
use tunnelkit_core::slope::{shap_slope, ArchFamily, ExperimentRecord, Target};

fn records(seed: u64, target: impl Fn(&ExperimentRecord, &mut ChaCha8Rng) -> f64) -> Vec<ExperimentRecord> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..512)
        .map(|_| {
            let mut rec = ExperimentRecord {
                backbone_id: String::new(),
                ood_dataset: String::new(),
                resolution: [32, 64, 128, 224][r.random_range(0..4)],
                augmentation: r.random_bool(0.5),
                id_class_count: [10, 100, 1000][r.random_range(0..3)],
                spatial_reduction: [0.25, 0.5, 1.0][r.random_range(0..3)],
                stem: [3, 7][r.random_range(0..2)],
                arch_family: if r.random_bool(0.5) { ArchFamily::Cnn } else { ArchFamily::Vit },
                overparam: r.random_range(1.0..100.0),
                depth: [11, 18, 34][r.random_range(0..3)],
                retained: 0.0,
                pearson: 0.0,
                alignment: 0.0,
            };
            rec.retained = target(&rec, &mut r).clamp(0.0, 100.0);
            rec
        })
        .collect()
}

#[test]
fn null_target_spreads_slope_mass() {
    let recs = records(3, |_, r| r.random_range(40.0..100.0));
    let rep = shap_slope(&recs, Target::Retained, &GbrtParams::default()).unwrap();
    let l1: f64 = rep.variables.iter().map(|v| v.slope.abs()).sum();
    assert!((l1 - 1.0).abs() < 1e-9);
    for v in &rep.variables {
        assert!(v.slope.abs() <= 0.5, "{} carries {:.3}", v.variable, v.slope);
    }
}

#[test]
fn negative_planted_depth_signal() {
    let recs = records(4, |rec, r| 100.0 - 1.5 * f64::from(rec.depth) + r.random_range(-2.0..2.0));
    let rep = shap_slope(&recs, Target::Retained, &GbrtParams::default()).unwrap();
    let top = rep.ranked()[0];
    assert_eq!(top.variable, "depth");
    assert!(top.slope < 0.0);
}
