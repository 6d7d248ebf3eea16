mod common;

use common::*;
use curve_equivalence::*;

fn outcome(data: &TrialDataset, eps: f64, replicates: usize, seed: u64) -> BootstrapOutcome {
    let opts = BootstrapOptions {
        alphas: vec![0.05, 0.1, 0.2],
        keep_replicates: true,
        ..BootstrapOptions::new(eps, 0.05, replicates, seed)
    };
    bootstrap_equivalence_test_with(data, &sigmoid_spec(3), &region(), &opts).unwrap()
}

#[test]
fn t_quantile_oracles() {
    for df in [1.0, 5.0, 298.0] {
        assert_eq!(t_quantile(0.5, df).unwrap(), 0.0);
    }
    assert!((t_quantile(0.95, 298.0).unwrap() - 1.64990).abs() < 1e-4);
    assert!((t_quantile(0.975, 1e7).unwrap() - 1.95996).abs() < 1e-3);
    // closed forms for one and two degrees of freedom
    for p in [0.6, 0.9, 0.975, 0.999] {
        let cauchy = (std::f64::consts::PI * (p - 0.5)).tan();
        assert!((t_quantile(p, 1.0).unwrap() - cauchy).abs() < 1e-8 * cauchy.abs().max(1.0));
        let two = (2.0 * p - 1.0) / (2.0 * p * (1.0 - p)).sqrt();
        assert!((t_quantile(p, 2.0).unwrap() - two).abs() < 1e-8 * two.abs().max(1.0));
        assert!((t_quantile(1.0 - p, 7.0).unwrap() + t_quantile(p, 7.0).unwrap()).abs() < 1e-10);
    }
    assert!(t_quantile(0.0, 3.0).is_err());
    assert!(t_quantile(1.0, 3.0).is_err());
    assert!(t_quantile(0.9, 0.5).is_err());
}

#[test]
fn pretest_thresholds_from_given_omega() {
    let t = pretest_thresholds(&[3127.91, 10748.27], 300, 1.5, 0.05).unwrap();
    assert!((t[0] - 1.191).abs() <= 0.002, "{t:?}");
    assert!((t[1] - 0.928).abs() <= 0.002, "{t:?}");
}

#[test]
fn tiny_delta_gives_negative_thresholds() {
    let t = pretest_thresholds(&[3127.91], 300, 0.1, 0.05).unwrap();
    assert!(t[0] < 0.0);
    assert!(pretest_thresholds(&[1.0], 2, 1.0, 0.05).is_err());
    assert!(pretest_thresholds(&[-1.0], 30, 1.0, 0.05).is_err());
}

#[test]
fn identical_noise_free_groups_pass_the_pretest() {
    let spec = sigmoid_spec(0);
    let beta = [1.0, 5.0, 4.0, 1.3, 1.0, 5.0, 4.0, 1.3];
    let data = noise_free(&spec, &beta, &DOSES, 6);
    let r = parameter_equivalence_pretest(&data, &spec, 0.5, 0.05, 3, &SolverOptions::default()).unwrap();
    assert_eq!(r.decision, PretestDecision::RejectK0);
    assert!(r.differences.iter().all(|d| *d < 1e-6));
    assert_eq!(r.n, 60);
    assert_eq!(r.thresholds.len(), 3);
}

#[test]
fn pretest_fails_when_threshold_is_negative() {
    let spec = sigmoid_spec(0);
    let data = scenario1_data(1.3, 6, 1.0, 4);
    let r = parameter_equivalence_pretest(&data, &spec, 0.01, 0.05, 2, &SolverOptions::default()).unwrap();
    assert!(r.thresholds.iter().all(|t| *t < 0.0));
    assert_eq!(r.decision, PretestDecision::FailToReject);
    assert!(r.passes.iter().all(|p| !p));
}

#[test]
fn pretest_is_symmetric_in_group_labels() {
    let spec = sigmoid_spec(0);
    for seed in 0..4 {
        let data = scenario1_data(1.5, 18, 1.0, seed);
        let swapped = TrialDataset::new(
            data.group(Group::Second).clone(),
            data.group(Group::First).clone(),
            None,
            data.region(),
        )
        .unwrap();
        let opts = SolverOptions::default();
        let a = parameter_equivalence_pretest(&data, &spec, 1.0, 0.05, 3, &opts).unwrap();
        let b = parameter_equivalence_pretest(&swapped, &spec, 1.0, 0.05, 3, &opts).unwrap();
        assert_eq!(a.decision, b.decision);
        for i in 0..3 {
            assert!((a.differences[i] - b.differences[i]).abs() < 1e-6);
            assert!((a.omega_diagonal[i] - b.omega_diagonal[i]).abs() < 1e-6 * a.omega_diagonal[i].max(1.0));
        }
    }
}

#[test]
fn pretest_rejects_bad_shared_count() {
    let spec = sigmoid_spec(0);
    let data = scenario1_data(1.3, 6, 1.0, 4);
    for shared in [0, 5] {
        assert!(parameter_equivalence_pretest(&data, &spec, 1.0, 0.05, shared, &SolverOptions::default()).is_err());
    }
}

#[test]
fn report_invariants() {
    let data = scenario1_data(1.43, 18, 1.0, 21);
    let o = outcome(&data, 1.0, 200, 5);
    assert_eq!(o.statistics.len(), 200);
    assert!(o.statistics.iter().all(|d| *d >= 0.0));
    let reports = o.reports().unwrap();
    let sorted = o.sorted_statistics();
    let below = o.statistics.iter().filter(|d| **d <= o.d_hat).count();
    for r in &reports {
        let k = (200.0 * r.alpha + 1e-9).floor() as usize;
        assert_eq!(r.quantile, sorted[k - 1]);
        assert_eq!(r.rejects(), r.d_hat < r.quantile);
        assert_eq!(r.p_value, below as f64 / 200.0);
        // p < alpha forces rejection; the converse can fail only on ties
        if r.p_value < r.alpha {
            assert!(r.rejects());
        }
        assert_eq!(r.replicate_statistics.as_deref(), Some(&o.statistics[..]));
    }
    assert!(reports.windows(2).all(|w| w[0].quantile <= w[1].quantile));
}

#[test]
fn bootstrap_is_reproducible_across_thread_counts() {
    let data = scenario1_data(1.59, 6, 1.0, 2);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| outcome(&data, 1.0, 100, 77).statistics)
    };
    let one = run(1);
    assert_eq!(one, run(3));
    assert_eq!(one, run(1));
    assert_ne!(one, outcome(&data, 1.0, 100, 78).statistics);
}

#[test]
fn rejection_is_monotone_in_margin() {
    let data = scenario1_data(1.43, 18, 1.0, 13);
    let mut seen = false;
    for eps in [0.3, 0.5, 0.7, 0.9, 1.1, 1.5, 2.0, 3.0] {
        let r = outcome(&data, eps, 100, 3).report(0.05).unwrap();
        if seen {
            assert!(r.rejects(), "rejected at a smaller margin but not at {eps}");
        }
        seen |= r.rejects();
    }
    assert!(seen, "a margin of 3 must be rejected");
}

#[test]
fn equivalent_curves_with_generous_margin_reject() {
    let data = scenario1_data(1.3, 30, 0.1, 6);
    let report = bootstrap_equivalence_test(&data, &sigmoid_spec(3), &region(), 1.0, 0.05, 100, 1).unwrap();
    assert_eq!(report.decision, Decision::RejectH0);
    assert!(report.constrained);
    assert_eq!(report.failed_replicates, 0);
    assert!(!report.unreliable);
    assert!(report.replicate_statistics.is_none());
}

#[test]
fn distant_curves_are_not_declared_equivalent() {
    let data = scenario1_data(1.99, 30, 1.0, 6);
    let report = bootstrap_equivalence_test(&data, &sigmoid_spec(3), &region(), 1.0, 0.05, 100, 1).unwrap();
    assert!(report.d_hat > 1.0);
    assert!(!report.constrained);
    assert_eq!(report.decision, Decision::FailToReject);
}

#[test]
fn bootstrap_options_are_validated() {
    let data = scenario1_data(1.59, 6, 1.0, 2);
    let spec = sigmoid_spec(3);
    for opts in [
        BootstrapOptions::new(1.0, 0.05, 99, 0),
        BootstrapOptions::new(1.0, 0.005, 100, 0),
        BootstrapOptions::new(0.0, 0.05, 100, 0),
        BootstrapOptions::new(1.0, 1.0, 100, 0),
    ] {
        assert!(bootstrap_equivalence_test_with(&data, &spec, &region(), &opts).is_err());
    }
}

#[test]
fn pooled_placebo_bootstrap_runs() {
    let full = scenario1_data(1.43, 10, 1.0, 8);
    let active = |g: Group| GroupData::new(full.group(g).levels[1..].to_vec());
    let placebo: Vec<f64> = Group::BOTH
        .iter()
        .flat_map(|&g| full.group(g).levels[0].responses.clone())
        .collect();
    let data = TrialDataset::new(active(Group::First), active(Group::Second), Some(placebo), (0.0, 4.0)).unwrap();
    let spec = sigmoid_spec(1);
    let o = bootstrap_equivalence_test_with(&data, &spec, &region(), &BootstrapOptions::new(1.0, 0.05, 100, 4)).unwrap();
    assert!(o.fit.placebo_variance.is_some());
    assert_eq!(o.fit.n_placebo, 20);
    assert_eq!(o.statistics.len(), 100);
}

#[test]
fn t_quantile_matches_reference_values() {
    // independent inversion of the incomplete beta function
    let table = [
        (0.95, 298.0, 1.6499829759955265),
        (0.975, 1e7, 1.959964221767205),
        (0.999, 3.0, 10.214531852405331),
        (0.95, 58.0, 1.671552762454859),
        (0.9, 999.0, 1.2823995700373974),
        (0.9, 1000.0, 1.2823987214609247),
        (0.05, 20.0, -1.7247182429207863),
        (0.999, 5000.0, 3.091863119960981),
    ];
    for (p, df, want) in table {
        let got = t_quantile(p, df).unwrap();
        assert!((got - want).abs() <= 1e-8, "t({p}, {df}) = {got}, want {want}");
    }
}

proptest::proptest! {
    #[test]
    fn t_quantile_inverts_the_cdf(p in 0.001..0.999f64, df in 1.0..900.0f64) {
        use statrs::distribution::{ContinuousCDF, StudentsT};
        let t = t_quantile(p, df).unwrap();
        let back = StudentsT::new(0.0, 1.0, df).unwrap().cdf(t);
        proptest::prop_assert!((back - p).abs() < 1e-10);
    }

    #[test]
    fn t_quantile_is_monotone_in_df(p in 0.55..0.999f64, df in 1.0..5000.0f64) {
        proptest::prop_assert!(t_quantile(p, df).unwrap() >= t_quantile(p, df + 1.0).unwrap() - 1e-12);
    }
}
