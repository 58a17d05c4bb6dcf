use proptest::prelude::*;
use tunnelkit::io::{read_dump, write_dump};
use tunnelkit::plot::{curve_plot_svg, Band};
use tunnelkit::records::{run_stats, PairRow};
use tunnelkit_core::embedding::{EmbeddingSet, Split};
use tunnelkit_core::metrics::detect_tunnel;
use tunnelkit_core::probe::ProbeCurve;

fn set_strategy() -> impl Strategy<Value = EmbeddingSet> {
    (1u32..50, 1usize..6, 1usize..20, 2u32..9, any::<bool>()).prop_flat_map(|(layer, dim, n, classes, test)| {
        (prop::collection::vec(-1e3f32..1e3, n * dim), prop::collection::vec(0..classes, n)).prop_map(move |(f, l)| {
            let split = if test { Split::Test } else { Split::Train };
            EmbeddingSet::new(layer, "", classes, split, dim, f, l).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dumps_survive_the_disk(set in set_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.tkd");
        write_dump(&set, &path).unwrap();
        prop_assert_eq!(read_dump(&path).unwrap(), set);
    }

    #[test]
    fn curve_plot_is_well_formed(
        id in prop::collection::vec(0.01f64..1.0, 2..12),
        shifts in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 12), 1..4),
        ci in any::<bool>(),
    ) {
        let n = id.len();
        let oods: Vec<ProbeCurve> = shifts.iter().map(|s| ProbeCurve::new("b", "o", 0.1, s[..n].to_vec())).collect();
        let start = detect_tunnel(&oods[0]).unwrap();
        let band = if ci { Band::Ci95 } else { Band::Std };
        let svg = curve_plot_svg(&ProbeCurve::new("b", "i", 0.1, id), &oods, start, band).unwrap();
        prop_assert_eq!(svg.matches("class=\"xtick\"").count(), n);
        prop_assert_eq!(svg.contains("tunnel-star"), start.is_some());
        prop_assert!(!svg.contains("NaN"));
        prop_assert_eq!(svg.matches("<svg").count(), 1);
    }

    #[test]
    fn swapping_conditions_flips_effect_sign(ab in prop::collection::vec((0i32..6, 0i32..6), 1..30)) {
        prop_assume!(ab.iter().any(|(a, b)| a != b));
        let rows = |swap: bool| -> Vec<PairRow> {
            ab.iter()
                .map(|&(a, b)| {
                    let (a, b) = if swap { (b, a) } else { (a, b) };
                    PairRow { comparison: "c".into(), metric: "m".into(), a: f64::from(a), b: f64::from(b) }
                })
                .collect()
        };
        let x = run_stats(&rows(false)).unwrap();
        let y = run_stats(&rows(true)).unwrap();
        prop_assert_eq!(x[0].effect_size, -y[0].effect_size);
        prop_assert_eq!(x[0].p_value, y[0].p_value);
        prop_assert_eq!(x[0].statistic, y[0].statistic);
    }
}
