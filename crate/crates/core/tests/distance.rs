mod common;

use approx::assert_relative_eq;
use common::*;
use curve_equivalence::*;
use proptest::prelude::*;

fn linear_spec() -> ModelSpec {
    let linear = ModelFamily::from_tag("linear").unwrap();
    ModelSpec::new(linear.clone(), linear, 0, 4.0).unwrap()
}

#[test]
fn linear_difference_peaks_at_an_endpoint() {
    let spec = linear_spec();
    let dev = max_abs_deviation(&spec, &[1.0, 1.0, 0.5, 2.0], &region()).unwrap();
    assert_relative_eq!(dev.d_inf, 3.5, epsilon = 1e-12);
    assert_eq!(dev.maximizers.len(), 1);
    assert_eq!(dev.first_maximizer(), 4.0);
    assert_eq!(dev.maximizers[0].sign, Sign::Negative);
}

#[test]
fn crossing_lines_report_both_tied_ends() {
    let spec = linear_spec();
    let dev = max_abs_deviation(&spec, &[1.0, 0.0, -1.0, 1.0], &region()).unwrap();
    // m1 - m2 = 2 - d on [0, 4]: |.| is 2 at both ends
    assert_relative_eq!(dev.d_inf, 2.0, epsilon = 1e-12);
    let doses: Vec<f64> = dev.maximizers.iter().map(|m| m.dose).collect();
    assert_eq!(doses, [0.0, 4.0]);
    assert_eq!(dev.maximizers[0].sign, Sign::Positive);
    assert_eq!(dev.maximizers[1].sign, Sign::Negative);
    let sets = extremal_sets(&spec, &[1.0, 0.0, -1.0, 1.0], &region(), 1e-9).unwrap();
    assert_eq!(sets.positive, [0.0]);
    assert_eq!(sets.negative, [4.0]);
}

#[test]
fn identical_curves_have_flat_zero_profile() {
    let spec = sigmoid_spec(3);
    let dev = max_abs_deviation(&spec, &[1.0, 5.0, 4.0, 1.3, 1.3], &region()).unwrap();
    assert_eq!(dev.d_inf, 0.0);
    assert_eq!(dev.maximizers.len(), region().grid);
}

#[test]
fn later_comparator_sits_below_reference() {
    let spec = sigmoid_spec(3);
    let dev = max_abs_deviation(&spec, &[1.0, 5.0, 4.0, 1.3, 1.59], &region()).unwrap();
    assert_eq!(dev.maximizers.len(), 1);
    assert_eq!(dev.maximizers[0].sign, Sign::Positive);
    let d = dev.first_maximizer();
    assert!(d > 1.3 && d < 1.59);
}

#[test]
fn trace_csv_has_one_row_per_grid_point() {
    let spec = sigmoid_spec(3);
    let region = region().with_grid(11).unwrap();
    let dev = deviation_with_trace(&spec, &[1.0, 5.0, 4.0, 1.3, 1.59], &region).unwrap();
    let mut out = Vec::new();
    dev.write_trace_csv(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "dose,delta");
    assert_eq!(lines.len(), 12);
    assert!(lines[11].starts_with("4,"));
}

#[test]
fn region_validation() {
    assert!(DoseRegion::new(1.0, 1.0).is_err());
    assert!(DoseRegion::new(-1.0, 1.0).is_err());
    assert!(region().with_grid(1).is_err());
}

#[test]
fn integrated_deviation_of_lines() {
    let spec = linear_spec();
    // |2 - d| over [0, 4] integrates to 4
    let area = integrated_abs_deviation(&spec, &[1.0, 0.0, -1.0, 1.0], &region()).unwrap();
    assert_relative_eq!(area, 4.0, epsilon = 1e-9);
}

proptest! {
    #[test]
    fn swapping_groups_keeps_distance(ed1 in 0.5..3.0f64, ed2 in 0.5..3.0f64, h1 in 1.0..6.0f64, h2 in 1.0..6.0f64) {
        let spec = sigmoid_spec(2);
        let a = max_abs_deviation(&spec, &[1.0, 5.0, h1, ed1, h2, ed2], &region()).unwrap();
        let b = max_abs_deviation(&spec, &[1.0, 5.0, h2, ed2, h1, ed1], &region()).unwrap();
        prop_assert!((a.d_inf - b.d_inf).abs() <= 1e-9 * (1.0 + a.d_inf));
        prop_assert!(a.maximizers[0].sign != b.maximizers[0].sign || a.d_inf == 0.0);
    }

    #[test]
    fn distance_dominates_every_dose(ed1 in 0.5..3.0f64, ed2 in 0.5..3.0f64, h in 1.0..8.0f64, d in 0.0..4.0f64) {
        let spec = sigmoid_spec(3);
        let beta = [1.0, 5.0, h, ed1, ed2];
        let dev = max_abs_deviation(&spec, &beta, &region()).unwrap();
        let gap = spec.evaluate(Group::First, d, &beta).unwrap() - spec.evaluate(Group::Second, d, &beta).unwrap();
        prop_assert!(gap.abs() <= dev.d_inf + 1e-12);
        let at = dev.first_maximizer();
        let top = spec.evaluate(Group::First, at, &beta).unwrap() - spec.evaluate(Group::Second, at, &beta).unwrap();
        prop_assert!((top.abs() - dev.d_inf).abs() <= 1e-12 * (1.0 + dev.d_inf));
    }

    #[test]
    fn common_shift_and_scale(shift in -5.0..5.0f64, scale in 0.1..4.0f64, ed2 in 1.0..2.5f64) {
        let spec = sigmoid_spec(0);
        let base = max_abs_deviation(&spec, &[1.0, 5.0, 4.0, 1.3, 1.0, 5.0, 4.0, ed2], &region()).unwrap();
        let moved = [1.0 * scale + shift, 5.0 * scale, 4.0, 1.3, 1.0 * scale + shift, 5.0 * scale, 4.0, ed2];
        let other = max_abs_deviation(&spec, &moved, &region()).unwrap();
        prop_assert!((other.d_inf - scale * base.d_inf).abs() <= 1e-9 * (1.0 + other.d_inf));
    }

    #[test]
    fn integral_bounded_by_sup(ed2 in 0.5..3.0f64) {
        let spec = sigmoid_spec(3);
        let beta = [1.0, 5.0, 4.0, 1.3, ed2];
        let d = max_abs_deviation(&spec, &beta, &region()).unwrap().d_inf;
        let area = integrated_abs_deviation(&spec, &beta, &region()).unwrap();
        prop_assert!(area <= 4.0 * d + 1e-12);
    }
}
