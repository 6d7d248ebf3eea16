mod common;

use std::fs;
use std::process::Command;
use std::sync::OnceLock;

use common::*;
use curve_equivalence::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

const MASTER_SEED: u64 = 20240917;

fn verdict(id: &str, what: &str, pass: bool, detail: String) {
    println!("{} {id} {what}: {detail}", if pass { "PASS" } else { "FAIL" });
}

#[test]
fn c1_pretest_thresholds() {
    let t = pretest_thresholds(&[3127.91, 10748.27], 300, 1.5, 0.05).unwrap();
    let pass = (t[0] - 1.191).abs() <= 0.002 && (t[1] - 0.928).abs() <= 0.002;
    verdict("C1", "pretest thresholds", pass, format!("{:.4} (1.191 ± 0.002), {:.4} (0.928 ± 0.002)", t[0], t[1]));
    assert!(pass);
}

#[test]
fn c2_distance_mapping() {
    let registry = ModelRegistry::new();
    let mut pass = true;
    let mut detail = Vec::new();
    let targets = [2.0, 1.5, 1.0, 0.5, 0.25];
    let s1_doses = [1.61, 1.52, 1.44, 1.37, 1.33];
    let s2_doses = [0.66, 0.75, 0.83, 0.9, 0.93];
    for (config, name) in [(scenario1(), "s1"), (scenario2(), "s2")] {
        let spec = config.spec(&registry).unwrap();
        let region = config.region().unwrap();
        for (i, &target) in targets.iter().enumerate() {
            let dev = max_abs_deviation(&spec, &config.truth(&spec, i).unwrap(), &region).unwrap();
            let at = dev.first_maximizer();
            let want_at = if name == "s1" { s1_doses[i] } else { s2_doses[i] };
            let ok = (dev.d_inf - target).abs() <= 0.01 && (at - want_at).abs() <= 0.01;
            pass &= ok;
            detail.push(format!(
                "{name}[{i}] d={:.4}/{target} at {:.4}/{want_at}{}",
                dev.d_inf,
                at,
                if ok { "" } else { " !" }
            ));
        }
    }
    verdict("C2", "distance mapping (±0.01)", pass, detail.join("; "));
    assert!(pass);
}

#[test]
fn c3_constrained_fit_properties() {
    let spec = sigmoid_spec(3);
    let mut rng = ChaCha8Rng::seed_from_u64(MASTER_SEED);
    let (mut converged, mut violations) = (0, Vec::new());
    for i in 0..100 {
        let ed50 = rng.random_range(1.3..2.0);
        let per_dose = [6, 18, 30][rng.random_range(0..3)];
        let variance = rng.random_range(0.5..3.0);
        let data = scenario1_data(ed50, per_dose, variance, MASTER_SEED + i);
        let fit = fit_joint_ols(&data, &spec, &SolverOptions::default()).unwrap();
        let Ok(c) = fit_constrained(&data, &spec, &region(), &fit, &ConstraintOptions::with_epsilon(1.0)) else {
            continue;
        };
        if !c.converged {
            continue;
        }
        converged += 1;
        let d = max_abs_deviation(&spec, c.params(), &region()).unwrap().d_inf;
        if (d - 1.0).abs() > 1e-6 || c.rss() < fit.rss - 1e-8 {
            violations.push(format!("#{i}: |d-eps| {:.2e}, rss gap {:.2e}", (d - 1.0).abs(), c.rss() - fit.rss));
        }
    }
    let pass = converged >= 95 && violations.is_empty();
    verdict(
        "C3",
        "constrained fit on the margin",
        pass,
        format!("{converged}/100 converged (>= 95), violations {violations:?}"),
    );
    assert!(pass);
}

fn five_point(f: impl Fn(&[f64]) -> f64, x: &[f64], j: usize) -> f64 {
    let h = 1e-3 * x[j].abs().max(1e-2);
    let at = |k: f64| {
        let mut y = x.to_vec();
        y[j] += k * h;
        f(&y)
    };
    (at(-2.0) - 8.0 * at(-1.0) + 8.0 * at(1.0) - at(2.0)) / (12.0 * h)
}

#[test]
fn c4_gradient_correctness() {
    let mut registry = ModelRegistry::new();
    registry
        .register(
            LocationScale::new(
                "exp_rate",
                vec!["rate".into()],
                vec![(0.01, 5.0)],
                |d, b| 1.0 - (-b[0] * d).exp(),
                |d, b, g| g[0] = d * (-b[0] * d).exp(),
            )
            .unwrap(),
        )
        .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(MASTER_SEED);
    let mut pass = true;
    let mut detail = Vec::new();
    for tag in ["emax3", "sigemax4", "linear", "exp_rate"] {
        let family = registry.lookup(tag).unwrap();
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let d = rng.random_range(0.0..4.0);
            let params: Vec<f64> = match tag {
                "emax3" => vec![rng.random_range(-5.0..5.0), rng.random_range(-10.0..10.0), rng.random_range(0.05..4.0)],
                "sigemax4" => vec![
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-10.0..10.0),
                    rng.random_range(0.5..10.0),
                    rng.random_range(0.05..4.0),
                ],
                "linear" => vec![rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)],
                _ => vec![rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(0.05..4.0)],
            };
            let g = family.gradient_vec(d, &params).unwrap();
            for j in 0..params.len() {
                let fd = five_point(|p| family.evaluate(d, p).unwrap(), &params, j);
                worst = worst.max((g[j] - fd).abs() / g[j].abs().max(1.0));
            }
        }
        pass &= worst < 1e-6;
        detail.push(format!("{tag} {worst:.2e}"));
    }
    verdict("C4", "analytic vs finite-difference gradients (< 1e-6)", pass, detail.join(", "));
    assert!(pass);
}

struct CliRuns {
    proportion: f64,
    se: f64,
    one_thread: Vec<u8>,
    four_threads: Vec<u8>,
}

/// The nl = 30, sigma^2 = 1, d_inf = 1 cell run through the binary twice.
fn margin_cell() -> &'static CliRuns {
    static RUNS: OnceLock<CliRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let mut scenario = scenario1();
        scenario.comparators = vec![scenario.comparators[2].clone()];
        scenario.labels = vec![1.0];
        scenario.per_dose = vec![6];
        scenario.variances = vec![1.0];
        scenario.alphas = vec![0.05];
        scenario.runs = 500;
        scenario.bootstrap = 300;
        let file = dir.path().join("scenario.json");
        fs::write(&file, serde_json::to_string(&scenario).unwrap()).unwrap();
        let run = |threads: &str| {
            let out = dir.path().join(format!("out{threads}"));
            let cfg = dir.path().join(format!("run{threads}.json"));
            let body = json!({"mode": "simulate", "scenario": file, "output": out, "seed": MASTER_SEED});
            fs::write(&cfg, body.to_string()).unwrap();
            let status = Command::new(env!("CARGO_BIN_EXE_curveq"))
                .args(["--config", cfg.to_str().unwrap(), "--threads", threads])
                .output()
                .unwrap();
            assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
            fs::read(out.join("scenario_result.json")).unwrap()
        };
        let one_thread = run("1");
        let four_threads = run("4");
        let v: Value = serde_json::from_slice(&one_thread).unwrap();
        let level = &v["cells"][0]["levels"][0];
        CliRuns {
            proportion: level["proportion"].as_f64().unwrap(),
            se: level["standard_error"].as_f64().unwrap(),
            one_thread,
            four_threads,
        }
    })
}

#[test]
fn c5_type_one_error_at_margin() {
    let r = margin_cell();
    let pass = (r.proportion - 0.068).abs() <= 0.035;
    verdict(
        "C5",
        "rejection at the margin",
        pass,
        format!("{:.3} (se {:.3}), band 0.068 ± 0.035", r.proportion, r.se),
    );
    assert!(pass);
}

#[test]
fn c9_thread_count_determinism() {
    let r = margin_cell();
    let pass = r.one_thread == r.four_threads;
    verdict(
        "C9",
        "byte-identical results for 1 and 4 threads",
        pass,
        format!("{} vs {} bytes", r.one_thread.len(), r.four_threads.len()),
    );
    assert!(pass);
}

#[test]
fn c6_deep_null_conservatism() {
    let mut config = scenario1();
    config.comparators = vec![config.comparators[0].clone()];
    config.labels = vec![2.0];
    config.per_dose = vec![30];
    config.variances = vec![1.0];
    config.alphas = vec![0.05];
    config.runs = 200;
    config.bootstrap = 300;
    config.seed = MASTER_SEED;
    let cell = &run_scenario(&config).unwrap().cells[0];
    let p = cell.levels[0].proportion;
    let pass = p <= 0.01;
    verdict("C6", "rejection at d_inf = 2", pass, format!("{p:.3} (<= 0.01), d_inf {:.3}", cell.true_d_inf));
    assert!(pass);
}

#[test]
fn c7_sharing_increases_power() {
    let kappa = scenario3_kappa_for_distance(0.5).unwrap();
    let points = scenario3_power_curve(&[kappa], &[3, 0], 200, 300, MASTER_SEED).unwrap();
    let (shared, separate) = (&points[0], &points[1]);
    let pooled = (shared.standard_error.powi(2) + separate.standard_error.powi(2)).sqrt();
    let gap = shared.proportion - separate.proportion;
    let pass = gap > 2.0 * pooled;
    verdict(
        "C7",
        "power with 3 shared vs 0 shared at d_inf 0.5",
        pass,
        format!("{:.3} vs {:.3}, gap {gap:.3} (> 2 x {pooled:.3})", shared.proportion, separate.proportion),
    );
    assert!(pass);
}

#[test]
fn c8_rrmse_bands() {
    let mut config = scenario1();
    config.comparators = vec![config.comparators[2].clone()];
    config.labels = vec![1.0];
    config.per_dose = vec![6, 18, 30];
    config.variances = vec![1.0];
    config.alphas = vec![0.05];
    config.runs = 500;
    config.bootstrap = 100;
    config.seed = MASTER_SEED;
    let result = run_scenario(&config).unwrap();
    let value = |cell: &CellResult, name: &str| cell.rrmse.iter().find(|e| e.name == name).unwrap().rrmse;
    let big = &result.cells[2];
    assert_eq!(big.n_per_group, [150, 150]);
    let (e0, hill) = (value(big, "e0"), value(big, "hill"));
    let mut pass = (e0 - 0.123).abs() <= 0.02 && (hill - 0.129).abs() <= 0.03;
    let mut trend = Vec::new();
    for cell in &result.cells {
        trend.push(format!("{}: {:.3?}", cell.n_per_group[0], cell.rrmse.iter().map(|e| e.rrmse).collect::<Vec<_>>()));
    }
    for w in result.cells.windows(2) {
        pass &= w[0].rrmse.iter().zip(&w[1].rrmse).all(|(a, b)| b.rrmse < a.rrmse);
    }
    verdict(
        "C8",
        "RRMSE bands and decrease in n",
        pass,
        format!("e0 {e0:.3} (0.123 ± 0.02), hill {hill:.3} (0.129 ± 0.03); {}", trend.join("; ")),
    );
    assert!(pass);
}
