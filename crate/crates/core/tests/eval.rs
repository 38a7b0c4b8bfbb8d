use hatelens_core::eval::{
    confidence_interval, confidence_interval_with_t, macro_f1, speedup, t_critical_95, threshold_sweep, thresholds,
    MetricsReport,
};
use hatelens_core::Error;
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol + 1e-12
}

#[test]
fn macro_f1_hand_computed_cases() {
    assert_eq!(macro_f1(&[1, 0, 1], &[1, 0, 1]).unwrap(), 1.0);
    assert!((macro_f1(&[1, 0, 1, 0], &[1, 1, 0, 0]).unwrap() - 0.5).abs() < 1e-15);
    assert!((macro_f1(&[1, 1], &[1, 0]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    assert!(matches!(macro_f1(&[1], &[1, 0]), Err(Error::Input(_))));
}

#[test]
fn sweep_grid_is_nineteen_thresholds() {
    let grid = thresholds();
    assert_eq!(grid.len(), 19);
    assert!((grid[0] - 0.05).abs() < 1e-15);
    assert!((grid[18] - 0.95).abs() < 1e-15);
    let sweep = threshold_sweep(&[0.1, 0.9, 0.2, 0.8], &[0, 1, 0, 1]).unwrap();
    assert_eq!(sweep.table.len(), 19);
    assert_eq!(sweep.best_macro_f1, 1.0);
}

#[test]
fn tabulated_t_values_match_student_t_quantiles() {
    for df in 1..=30 {
        let exact = StudentsT::new(0.0, 1.0, df as f64).unwrap().inverse_cdf(0.975);
        let table = t_critical_95(df).unwrap();
        assert!((exact - table).abs() < 5e-4, "df={df}: {table} vs {exact}");
    }
    assert!(t_critical_95(0).is_err());
}

#[test]
fn reported_intervals_reproduce_results_table() {
    let ihc = confidence_interval(&[82.31, 81.63, 81.87]).unwrap().rounded(2);
    assert!(close(ihc.mean, 81.94, 0.01) && close(ihc.std, 0.34, 0.01));
    assert!(close(ihc.lo, 81.10, 0.01) && close(ihc.hi, 82.78, 0.01));
    let sbic = confidence_interval(&[84.05, 84.15, 83.90]).unwrap().rounded(2);
    assert!(close(sbic.lo, 83.71, 0.01) && close(sbic.hi, 84.35, 0.01));
    let third = confidence_interval(&[93.83, 92.60, 93.21]).unwrap().rounded(2);
    assert!(close(third.lo, 91.67, 0.01) && close(third.hi, 94.75, 0.01));
    assert!(confidence_interval(&[1.0]).is_err());
}

#[test]
fn reported_speedups() {
    for (base, model, expect) in [(1286, 380, 3.38), (1358, 1646, 0.83), (256, 126, 2.03), (500, 500, 1.0)] {
        assert!(close(speedup(base, model).unwrap(), expect, 0.01));
    }
    assert!(speedup(0, 3).is_err());
}

proptest! {
    #[test]
    fn macro_f1_symmetric_under_relabeling(pairs in proptest::collection::vec((0u8..2, 0u8..2), 1..60)) {
        let (preds, labels): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
        let flip = |v: &[u8]| v.iter().map(|x| 1 - x).collect::<Vec<u8>>();
        let a = macro_f1(&preds, &labels).unwrap();
        let b = macro_f1(&flip(&preds), &flip(&labels)).unwrap();
        prop_assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn sweep_never_worse_than_half(data in proptest::collection::vec((0.0f64..=1.0, 0u8..2), 1..80)) {
        let (probs, labels): (Vec<f64>, Vec<u8>) = data.into_iter().unzip();
        let sweep = threshold_sweep(&probs, &labels).unwrap();
        let at_half = MetricsReport::at_threshold(&probs, &labels, 0.5).unwrap().macro_f1;
        prop_assert!(sweep.best_macro_f1 >= at_half);
        prop_assert_eq!(sweep.table.len(), 19);
    }

    #[test]
    fn interval_width_closed_form_and_monotone(mean in 0.0f64..100.0, s1 in 0.0f64..5.0, s2 in 0.0f64..5.0) {
        // three scores with sample std exactly s: mean - s, mean, mean + s
        let ci = |s: f64| confidence_interval(&[mean - s, mean, mean + s]).unwrap();
        let (a, b) = (ci(s1), ci(s2));
        prop_assert!((a.width() - 2.0 * 4.303 * a.std / 3f64.sqrt()).abs() < 1e-9);
        if s1 < s2 {
            prop_assert!(a.width() <= b.width());
        }
        let general = confidence_interval_with_t(&[mean - s1, mean, mean + s1], 4.303).unwrap();
        prop_assert!((general.width() - a.width()).abs() < 1e-12);
    }
}
