use fedbs::eval::{benjamini_hochberg, paired_t_test};
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::statistics::Statistics;

const TOL: f64 = 1e-9;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL * b.abs().max(1.0)
}

/// (t, p, d) from statrs.
fn reference(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diff.len() as f64;
    let d = (&diff).mean() / (&diff).std_dev();
    let t = d * n.sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).unwrap();
    (t, 2.0 * dist.cdf(-t.abs()), d)
}

// Values computed with scipy.stats.ttest_rel.
const SCIPY: [(&[f64], &[f64], f64, f64, f64); 3] = [
    (
        &[0.61, 0.72, 0.55, 0.80, 0.67, 0.59],
        &[0.52, 0.70, 0.49, 0.71, 0.66, 0.50],
        3.9852669849304303,
        0.01047567041425919,
        1.626978433639922,
    ),
    (
        &[0.5312, 0.4875, 0.6021, 0.5533, 0.4411, 0.5999, 0.5105, 0.4787, 0.6400],
        &[0.4522, 0.4913, 0.5501, 0.4712, 0.4588, 0.5010, 0.4999, 0.4302, 0.5611],
        3.4043164407302973,
        0.00930092851816988,
        1.134772146910099,
    ),
    (&[1.0, 2.0, 3.0, 4.0], &[1.5, 1.9, 3.6, 3.2], -0.15491933384829681, 0.886721023749397, -0.07745966692414841),
];

#[test]
fn matches_scipy() {
    for (a, b, t, p, d) in SCIPY {
        let r = paired_t_test(a, b).unwrap();
        assert!(close(r.t_value, t), "t {} vs {t}", r.t_value);
        assert!(close(r.p_value, p), "p {} vs {p}", r.p_value);
        assert!(close(r.cohen_d, d), "d {} vs {d}", r.cohen_d);
        assert_eq!(r.df, a.len() - 1);
    }
}

#[test]
fn bh_hand_example() {
    assert_eq!(benjamini_hochberg(&[0.01, 0.02, 0.04]).unwrap(), vec![0.03, 0.03, 0.04]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn matches_statrs(
        pairs in prop::collection::vec((0.3f64..0.9, -0.1f64..0.1), 3..80),
    ) {
        let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let b: Vec<f64> = pairs.iter().map(|p| p.0 - p.1).collect();
        let r = paired_t_test(&a, &b).unwrap();
        let (t, p, d) = reference(&a, &b);
        prop_assert!(close(r.t_value, t), "t {} vs {}", r.t_value, t);
        prop_assert!(close(r.p_value, p), "p {} vs {}", r.p_value, p);
        prop_assert!(close(r.cohen_d, d), "d {} vs {}", r.cohen_d, d);
        prop_assert!(close(r.t_value, r.cohen_d * (a.len() as f64).sqrt()));
    }
}
