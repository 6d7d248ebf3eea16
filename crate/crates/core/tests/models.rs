use approx::assert_relative_eq;
use curve_equivalence::*;
use proptest::prelude::*;

fn central_difference(family: &ModelFamily, d: f64, p: &[f64], j: usize) -> f64 {
    let h = 1e-5 * p[j].abs().max(1.0);
    let at = |s: f64| {
        let mut q = p.to_vec();
        q[j] += s * h;
        family.evaluate(d, &q).unwrap()
    };
    // five-point stencil
    (8.0 * (at(1.0) - at(-1.0)) - (at(2.0) - at(-2.0))) / (12.0 * h)
}

fn exponential_family() -> LocationScale {
    LocationScale::new(
        "exp_rate",
        vec!["rate".into()],
        vec![(0.01, 5.0)],
        |d, b| 1.0 - (-b[0] * d).exp(),
        |d, b, g| g[0] = d * (-b[0] * d).exp(),
    )
    .unwrap()
}

#[test]
fn sigmoid_emax_known_values() {
    let f = ModelFamily::SigmoidEmax4;
    assert_relative_eq!(f.evaluate(0.0, &[1.0, 5.0, 4.0, 1.3]).unwrap(), 1.0);
    assert_relative_eq!(f.evaluate(1.3, &[1.0, 5.0, 4.0, 1.3]).unwrap(), 3.5, epsilon = 1e-12);
    let d: f64 = 2.0;
    let expect = 1.0 + 5.0 * d.powi(4) / (d.powi(4) + 1.3f64.powi(4));
    assert_relative_eq!(f.evaluate(d, &[1.0, 5.0, 4.0, 1.3]).unwrap(), expect, epsilon = 1e-12);
}

#[test]
fn emax_reduces_to_sigmoid_with_unit_hill() {
    for d in [0.0, 0.3, 1.0, 7.5] {
        let a = ModelFamily::Emax3.evaluate(d, &[0.2, 3.0, 1.1]).unwrap();
        let b = ModelFamily::SigmoidEmax4.evaluate(d, &[0.2, 3.0, 1.0, 1.1]).unwrap();
        assert_relative_eq!(a, b, epsilon = 1e-12);
    }
}

#[test]
fn domain_errors_are_reported() {
    let f = ModelFamily::SigmoidEmax4;
    assert!(matches!(f.evaluate(-1.0, &[0.0, 1.0, 1.0, 1.0]), Err(Error::Domain(_))));
    assert!(matches!(f.evaluate(1.0, &[0.0, 1.0, 1.0, 0.0]), Err(Error::Domain(_))));
    assert!(matches!(f.evaluate(1.0, &[0.0, 1.0, 1.0]), Err(Error::Dimension { .. })));
}

#[test]
fn registry_resolves_custom_families() {
    let mut reg = ModelRegistry::new();
    reg.register(exponential_family()).unwrap();
    let f = reg.lookup("exp_rate").unwrap();
    assert_eq!(f.dim(), 3);
    assert_relative_eq!(f.evaluate(0.0, &[2.0, 3.0, 1.0]).unwrap(), 2.0);
    assert!(reg.register(exponential_family()).is_err());
    assert!(matches!(reg.lookup("nope"), Err(Error::UnknownFamily(_))));
}

#[test]
fn joint_names_follow_partition() {
    let spec = ModelSpec::new(ModelFamily::SigmoidEmax4, ModelFamily::Emax3, 2, 4.0).unwrap();
    assert_eq!(spec.param_names(), ["e0", "emax", "hill_1", "ed50_1", "ed50_2"]);
    let beta = [1.0, 5.0, 4.0, 1.3, 0.7];
    assert_eq!(spec.local_params(Group::Second, &beta), [1.0, 5.0, 0.7]);
    assert_eq!(spec.joint_from_locals(&[1.0, 5.0, 4.0, 1.3], &[9.0, 9.0, 0.7]).unwrap(), beta);
}

proptest! {
    #[test]
    fn sigmoid_gradient_matches_finite_differences(
        e0 in -10.0..10.0f64,
        emax in -10.0..10.0f64,
        hill in 0.3..8.0f64,
        ed50 in 0.2..4.0f64,
        d in 0.0..6.0f64,
    ) {
        let f = ModelFamily::SigmoidEmax4;
        let p = [e0, emax, hill, ed50];
        let g = f.gradient_vec(d, &p).unwrap();
        for j in 0..4 {
            let fd = central_difference(&f, d, &p, j);
            prop_assert!((g[j] - fd).abs() <= 1e-6 * g[j].abs().max(1.0), "j={} {} vs {}", j, g[j], fd);
        }
    }

    #[test]
    fn custom_gradient_is_embedded(b0 in -3.0..3.0f64, b1 in -3.0..3.0f64, rate in 0.1..4.0f64, d in 0.0..5.0f64) {
        let f = ModelFamily::LocationScale(std::sync::Arc::new(exponential_family()));
        let p = [b0, b1, rate];
        let g = f.gradient_vec(d, &p).unwrap();
        for j in 0..3 {
            let fd = central_difference(&f, d, &p, j);
            prop_assert!((g[j] - fd).abs() <= 1e-6 * g[j].abs().max(1.0));
        }
    }

    #[test]
    fn curves_start_at_intercept(e0 in -10.0..10.0f64, emax in -10.0..10.0f64, hill in 0.1..20.0f64, ed50 in 1e-4..40.0f64) {
        prop_assert_eq!(ModelFamily::SigmoidEmax4.evaluate(0.0, &[e0, emax, hill, ed50]).unwrap(), e0);
        prop_assert_eq!(ModelFamily::Emax3.evaluate(0.0, &[e0, emax, ed50]).unwrap(), e0);
    }
}
