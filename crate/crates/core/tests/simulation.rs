mod common;

use common::*;
use curve_equivalence::*;

fn small(mut c: ScenarioConfig, comparators: &[usize]) -> ScenarioConfig {
    c.comparators = comparators.iter().map(|&i| c.comparators[i].clone()).collect();
    c.labels = comparators.iter().filter_map(|&i| c.labels.get(i).copied()).collect();
    c.per_dose = vec![6];
    c.variances = vec![1.0];
    c.runs = 4;
    c.bootstrap = 100;
    c.seed = 12;
    c
}

#[test]
fn presets_validate() {
    let registry = ModelRegistry::new();
    scenario1().validate(&registry).unwrap();
    scenario2().validate(&registry).unwrap();
    for shared in [0, 1, 2, 3] {
        scenario3(&simulation::SCENARIO3_KAPPAS, shared).unwrap().validate(&registry).unwrap();
    }
    assert_eq!(scenario1().comparators.len(), 6);
    assert_eq!(scenario2().shared, 2);
}

#[test]
fn scenario1_truths_follow_the_labels() {
    let c = scenario1();
    let spec = c.spec(&ModelRegistry::new()).unwrap();
    let d: Vec<f64> = (0..6)
        .map(|i| max_abs_deviation(&spec, &c.truth(&spec, i).unwrap(), &c.region().unwrap()).unwrap().d_inf)
        .collect();
    assert!(d.windows(2).all(|w| w[0] > w[1]), "{d:?}");
    assert_eq!(d[5], 0.0);
    assert!((d[2] - 1.0).abs() < 0.01, "{d:?}");
}

#[test]
fn invalid_scenarios_are_rejected() {
    let registry = ModelRegistry::new();
    let mut c = small(scenario1(), &[0]);
    c.bootstrap = 99;
    assert!(c.validate(&registry).is_err());
    let mut c = small(scenario1(), &[0]);
    c.comparators[0][0] = 2.0;
    assert!(c.validate(&registry).unwrap_err().to_string().contains("shared"));
    let mut c = small(scenario1(), &[0]);
    c.labels = vec![1.0, 2.0];
    assert!(c.validate(&registry).is_err());
    let mut c = small(scenario1(), &[0]);
    c.runs = 0;
    assert!(c.validate(&registry).is_err());
    let mut c = small(scenario1(), &[0]);
    c.families[1] = "nope".into();
    assert!(c.validate(&registry).is_err());
    assert!(scenario3(&[1.2], 3).is_err());
    assert!(scenario3(&[2.0], 4).is_err());
}

#[test]
fn config_serde_round_trip_denies_unknown() {
    let c = scenario2();
    let text = serde_json::to_string(&c).unwrap();
    assert_eq!(serde_json::from_str::<ScenarioConfig>(&text).unwrap(), c);
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["extra"] = 1.into();
    assert!(serde_json::from_value::<ScenarioConfig>(v).is_err());
}

#[test]
fn generated_datasets_are_deterministic() {
    let truth = scenario1_truth(1.59, 6, 1.0);
    let a = generate_dataset(&truth, 9).unwrap();
    assert_eq!(a, generate_dataset(&truth, 9).unwrap());
    assert_ne!(a, generate_dataset(&truth, 10).unwrap());
    assert_eq!(a.n(Group::First), 30);
    assert_eq!(a.group(Group::Second).doses(), DOSES);
}

#[test]
fn zero_variance_reproduces_the_curves() {
    let truth = scenario1_truth(1.59, 2, 0.0);
    let data = generate_dataset(&truth, 1).unwrap();
    let spec = sigmoid_spec(3);
    let beta = [1.0, 5.0, 4.0, 1.3, 1.59];
    for g in Group::BOTH {
        for l in &data.group(g).levels {
            let m = spec.evaluate(g, l.dose, &beta).unwrap();
            assert!(l.responses.iter().all(|y| *y == m));
        }
    }
}

#[test]
fn rrmse_oracle() {
    let r = rrmse(&[vec![1.0, 1.0], vec![3.0, -1.0]], &[2.0, 0.0]).unwrap();
    assert!((r[0].value - 0.5).abs() < 1e-15);
    assert!(r[0].relative);
    assert!((r[1].value - 1.0).abs() < 1e-15);
    assert!(!r[1].relative);
    assert!(rrmse(&[], &[1.0]).is_err());
    assert!(rrmse(&[vec![1.0]], &[1.0, 2.0]).is_err());
}

#[test]
fn small_scenario_run() {
    let config = small(scenario1(), &[0, 5]);
    let result = run_scenario(&config).unwrap();
    assert_eq!(result.cells.len(), 2);
    for cell in &result.cells {
        assert_eq!(cell.runs, 4);
        assert_eq!(cell.n_per_group, [30, 30]);
        assert_eq!(cell.levels.len(), 2);
        assert_eq!(cell.rrmse.len(), 5);
        for l in &cell.levels {
            assert!((0.0..=1.0).contains(&l.proportion));
            assert_eq!(l.proportion, l.rejections as f64 / 4.0);
        }
        assert!(cell.levels[0].rejections <= cell.levels[1].rejections);
    }
    assert_eq!(result.cells[0].label, Some(2.0));
    assert_eq!(result.cells[1].true_d_inf, 0.0);

    let again = run_scenario(&config).unwrap();
    assert_eq!(result.to_json().unwrap(), again.to_json().unwrap());
    let back: ScenarioResult = serde_json::from_str(&result.to_json().unwrap()).unwrap();
    assert_eq!(back.cells, result.cells);

    let mut rej = Vec::new();
    result.write_rejections_csv(&mut rej).unwrap();
    let rej = String::from_utf8(rej).unwrap();
    assert!(rej.starts_with("scenario,shared,n_per_group,per_dose,variance,label,true_d_inf,alpha,"));
    assert_eq!(rej.lines().count(), 5);
    let mut rr = Vec::new();
    result.write_rrmse_csv(&mut rr).unwrap();
    let rr = String::from_utf8(rr).unwrap();
    assert!(rr.lines().nth(1).unwrap().starts_with("scenario1,30,1,2,e0,1,"));
    assert_eq!(rr.lines().count(), 11);
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let config = small(scenario2(), &[3]);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| run_scenario(&config).unwrap().cells)
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn kappa_for_distance_hits_the_target() {
    let spec = ModelSpec::new(ModelFamily::SigmoidEmax4, ModelFamily::SigmoidEmax4, 0, 10.0).unwrap();
    let region = DoseRegion::new(0.0, 10.0).unwrap();
    for target in [0.25, 0.5, 1.0] {
        let k = scenario3_kappa_for_distance(target).unwrap();
        assert!(k > 1.3 && k <= 3.0);
        let d = max_abs_deviation(&spec, &[0.0, 5.0, 2.0, 1.3, 0.0, 5.0, 2.0, k], &region).unwrap().d_inf;
        assert!((d - target).abs() < 1e-9, "{target}: {d}");
    }
    assert!(scenario3_kappa_for_distance(0.0).is_err());
    assert!(scenario3_kappa_for_distance(50.0).is_err());
}

#[test]
fn tiny_power_curve() {
    let points = scenario3_power_curve(&[1.5, 3.0], &[3, 0], 3, 100, 2).unwrap();
    assert_eq!(points.len(), 4);
    assert_eq!(points[0].d_inf, points[2].d_inf);
    assert!(points[0].d_inf < points[1].d_inf);
    let mut out = Vec::new();
    simulation::write_power_csv(&points, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text.lines().next(), Some("kappa,shared,d_inf,power,standard_error"));
    assert_eq!(text.lines().count(), 5);
}
