//! Monte-Carlo harness: data generation from known curves, repeated
//! bootstrap tests per design cell, rejection rates and RRMSE.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{GroupData, TrialDataset};
use crate::distance::{max_abs_deviation, DoseRegion};
use crate::equivalence::{bootstrap_equivalence_test_with, draw_levels, BootstrapOptions, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::fitting::{FrozenParam, SolverOptions};
use crate::model::{Group, ModelFamily, ModelRegistry, ModelSpec};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioTag {
    Scenario1,
    Scenario2,
    Scenario3,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub tag: ScenarioTag,
    /// Family tags of the reference and comparator curves.
    pub families: [String; 2],
    /// Leading parameters shared in the fitted model.
    pub shared: usize,
    pub doses: [Vec<f64>; 2],
    pub region: (f64, f64),
    /// True local parameters of the reference curve.
    pub reference: Vec<f64>,
    /// True local parameters of the comparator, one per cell.
    pub comparators: Vec<Vec<f64>>,
    /// Nominal `d_inf` of each comparator, for table labels.
    #[serde(default)]
    pub labels: Vec<f64>,
    /// Observations per dose level, `n_{l,i}`.
    pub per_dose: Vec<usize>,
    /// Residual variances, equal in both groups.
    pub variances: Vec<f64>,
    pub epsilon: f64,
    pub alphas: Vec<f64>,
    pub runs: usize,
    pub bootstrap: usize,
    /// Joint coordinates of the fitted model held at fixed values.
    #[serde(default)]
    pub frozen: Vec<FrozenParam>,
    /// Joint coordinates held at the cell's true values.
    #[serde(default)]
    pub freeze_at_truth: Vec<usize>,
    pub seed: u64,
    #[serde(default)]
    pub solver: Option<SolverOptions>,
}

impl ScenarioConfig {
    pub fn spec(&self, registry: &ModelRegistry) -> Result<ModelSpec> {
        let f1 = registry.lookup(&self.families[0])?;
        let f2 = registry.lookup(&self.families[1])?;
        ModelSpec::new(f1, f2, self.shared, self.region.1)
    }

    pub fn region(&self) -> Result<DoseRegion> {
        DoseRegion::new(self.region.0, self.region.1)
    }

    pub fn truth(&self, spec: &ModelSpec, cell: usize) -> Result<Vec<f64>> {
        spec.joint_from_locals(&self.reference, &self.comparators[cell])
    }

    pub fn validate(&self, registry: &ModelRegistry) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::InvalidInput("runs must be >= 1".into()));
        }
        let probe = BootstrapOptions {
            epsilon: self.epsilon,
            alphas: self.alphas.clone(),
            replicates: self.bootstrap,
            ..BootstrapOptions::default()
        };
        let spec = self.spec(registry)?;
        probe.validate(spec.dim())?;
        if self.comparators.is_empty() || self.per_dose.is_empty() || self.variances.is_empty() {
            return Err(Error::InvalidInput(
                "comparators, per_dose and variances must be non-empty".into(),
            ));
        }
        if !self.labels.is_empty() && self.labels.len() != self.comparators.len() {
            return Err(Error::InvalidInput("labels must match comparators".into()));
        }
        if self.variances.iter().any(|v| !(*v >= 0.0)) || self.per_dose.contains(&0) {
            return Err(Error::InvalidInput("variances >= 0 and per_dose >= 1 required".into()));
        }
        for cell in 0..self.comparators.len() {
            let truth = self.truth(&spec, cell)?;
            if !spec.bounds.contains(&truth) {
                return Err(Error::InvalidInput(format!(
                    "true parameters of cell {cell} lie outside the parameter box"
                )));
            }
            for g in Group::BOTH {
                let local = if g == Group::First { &self.reference } else { &self.comparators[cell] };
                if spec.local_params(g, &truth) != *local {
                    return Err(Error::InvalidInput(format!(
                        "cell {cell}: truths differ in a parameter declared shared"
                    )));
                }
            }
        }
        for &j in &self.freeze_at_truth {
            if j >= spec.dim() {
                return Err(Error::InvalidInput(format!("freeze_at_truth index {j} out of range")));
            }
        }
        self.region()?;
        Ok(())
    }
}

const SCENARIO1_ED50: [f64; 6] = [1.99, 1.77, 1.59, 1.43, 1.37, 1.3];
const SCENARIO2_SHAPE: [(f64, f64); 6] = [
    (0.81, 0.86),
    (1.4, 1.07),
    (2.15, 1.18),
    (3.15, 1.25),
    (3.75, 1.28),
    (4.5, 1.3),
];
const NOMINAL_DISTANCES: [f64; 6] = [2.0, 1.5, 1.0, 0.5, 0.25, 0.0];
pub const SCENARIO3_KAPPAS: [f64; 5] = [1.5, 1.7, 2.0, 2.5, 3.0];

fn sigmoid_base(tag: ScenarioTag, shared: usize, doses: Vec<f64>, region: (f64, f64)) -> ScenarioConfig {
    ScenarioConfig {
        tag,
        families: ["sigemax4".into(), "sigemax4".into()],
        shared,
        doses: [doses.clone(), doses],
        region,
        reference: Vec::new(),
        comparators: Vec::new(),
        labels: Vec::new(),
        per_dose: vec![6, 18, 30],
        variances: vec![1.0, 2.0, 3.0],
        epsilon: 1.0,
        alphas: vec![0.05, 0.1],
        runs: 200,
        bootstrap: 300,
        frozen: Vec::new(),
        freeze_at_truth: Vec::new(),
        seed: 0,
        solver: None,
    }
}

/// Shared `(E0, Emax, h) = (1, 5, 4)`, reference ED50 1.3, comparator ED50
/// per nominal distance `{2, 1.5, 1, 0.5, 0.25, 0}` on doses `0..=4`.
pub fn scenario1() -> ScenarioConfig {
    let mut c = sigmoid_base(ScenarioTag::Scenario1, 3, vec![0.0, 1.0, 2.0, 3.0, 4.0], (0.0, 4.0));
    c.reference = vec![1.0, 5.0, 4.0, 1.3];
    c.comparators = SCENARIO1_ED50.iter().map(|&e| vec![1.0, 5.0, 4.0, e]).collect();
    c.labels = NOMINAL_DISTANCES.to_vec();
    c
}

/// Shared `(E0, Emax) = (1, 5)`, reference `(h, ED50) = (4.5, 1.3)`.
pub fn scenario2() -> ScenarioConfig {
    let mut c = sigmoid_base(ScenarioTag::Scenario2, 2, vec![0.0, 1.0, 2.0, 3.0, 4.0], (0.0, 4.0));
    c.reference = vec![1.0, 5.0, 4.5, 1.3];
    c.comparators = SCENARIO2_SHAPE.iter().map(|&(h, e)| vec![1.0, 5.0, h, e]).collect();
    c.labels = NOMINAL_DISTANCES.to_vec();
    c
}

/// Reference `(0, 5, 2, 1.3)` against `(0, 5, 2, kappa)` on doses
/// `{0, 1, 2, 5, 10}`, 35 per dose, variance 2, fitted with `shared`
/// leading parameters in common.
pub fn scenario3(kappas: &[f64], shared: usize) -> Result<ScenarioConfig> {
    if let Some(k) = kappas.iter().find(|k| !(**k > 1.3 && **k <= 3.0)) {
        return Err(Error::InvalidInput(format!("kappa {k} outside (1.3, 3]")));
    }
    if shared > 3 {
        return Err(Error::InvalidInput("at most three parameters can be shared".into()));
    }
    let mut c = sigmoid_base(ScenarioTag::Scenario3, shared, vec![0.0, 1.0, 2.0, 5.0, 10.0], (0.0, 10.0));
    c.reference = vec![0.0, 5.0, 2.0, 1.3];
    c.comparators = kappas.iter().map(|&k| vec![0.0, 5.0, 2.0, k]).collect();
    c.per_dose = vec![35];
    c.variances = vec![2.0];
    c.alphas = vec![0.05];
    Ok(c)
}

/// Comparator ED50 giving a Scenario-3 distance `target`, by bisection on
/// `(1.3, 3]`.
pub fn scenario3_kappa_for_distance(target: f64) -> Result<f64> {
    let spec = ModelSpec::new(ModelFamily::SigmoidEmax4, ModelFamily::SigmoidEmax4, 0, 10.0)?;
    let region = DoseRegion::new(0.0, 10.0)?;
    let d = |k: f64| -> Result<f64> {
        let beta = [0.0, 5.0, 2.0, 1.3, 0.0, 5.0, 2.0, k];
        Ok(max_abs_deviation(&spec, &beta, &region)?.d_inf)
    };
    let (mut lo, mut hi) = (1.3, 3.0);
    if !(target > 0.0) || target > d(hi)? {
        return Err(Error::InvalidInput(format!("distance {target} not reachable for kappa in (1.3, 3]")));
    }
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if d(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Known curves and design of one simulated trial.
#[derive(Debug, Clone)]
pub struct CellTruth {
    pub families: [ModelFamily; 2],
    pub params: [Vec<f64>; 2],
    pub doses: [Vec<f64>; 2],
    pub per_dose: [usize; 2],
    pub variances: [f64; 2],
    pub region: (f64, f64),
}

/// `Y_{l,i,j} = m_l(d_{l,i}) + N(0, s_l^2)` from the counter streams of
/// `seed` (replicate 0, group labels 1 and 2).
pub fn generate_dataset(truth: &CellTruth, seed: u64) -> Result<TrialDataset> {
    let groups = Group::BOTH.map(|g| {
        let k = g.index();
        let design: Vec<(f64, usize)> = truth.doses[k].iter().map(|&d| (d, truth.per_dose[k])).collect();
        let family = &truth.families[k];
        let params = &truth.params[k];
        let ys = draw_levels(seed, 0, g.label(), &design, |d| family.value(d, params), truth.variances[k]);
        GroupData::from_design(&truth.doses[k], ys)
    });
    let [a, b] = groups;
    TrialDataset::new(a, b, None, truth.region)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RrmseEntry {
    pub value: f64,
    /// `false` when the truth is 0 and the plain RMSE is reported.
    pub relative: bool,
}

/// `sqrt(mean_r (est_r - truth)^2) / |truth|` per coordinate.
pub fn rrmse(estimates: &[Vec<f64>], truth: &[f64]) -> Result<Vec<RrmseEntry>> {
    if estimates.is_empty() {
        return Err(Error::InvalidInput("rrmse needs at least one run".into()));
    }
    if let Some(e) = estimates.iter().find(|e| e.len() != truth.len()) {
        return Err(Error::Dimension {
            expected: truth.len(),
            got: e.len(),
        });
    }
    let r = estimates.len() as f64;
    Ok(truth
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let mse = estimates.iter().map(|e| (e[j] - t).powi(2)).sum::<f64>() / r;
            if t == 0.0 {
                RrmseEntry {
                    value: mse.sqrt(),
                    relative: false,
                }
            } else {
                RrmseEntry {
                    value: mse.sqrt() / t.abs(),
                    relative: true,
                }
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelResult {
    pub alpha: f64,
    pub rejections: usize,
    pub proportion: f64,
    pub standard_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterError {
    pub name: String,
    pub truth: f64,
    pub rrmse: f64,
    pub relative: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub per_dose: usize,
    pub n_per_group: [usize; 2],
    pub variance: f64,
    pub comparator: usize,
    pub label: Option<f64>,
    pub true_d_inf: f64,
    pub runs: usize,
    pub levels: Vec<LevelResult>,
    pub rrmse: Vec<ParameterError>,
    /// Runs whose test errored; they count as non-rejections.
    pub failed_runs: usize,
    /// Runs flagged unreliable by the bootstrap.
    pub unreliable_runs: usize,
    pub failed_replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub schema_version: String,
    pub tag: ScenarioTag,
    pub shared: usize,
    pub epsilon: f64,
    pub runs: usize,
    pub bootstrap: usize,
    pub seed: u64,
    pub cells: Vec<CellResult>,
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

struct RunOutcome {
    rejected: Vec<bool>,
    estimate: Option<Vec<f64>>,
    unreliable: bool,
    failed_replicates: usize,
}

fn cell_seed(master: u64, per_dose: usize, variance: f64, comparator: usize, run: usize) -> u64 {
    derive_seed(master, &[per_dose as u64, variance.to_bits(), comparator as u64, run as u64])
}

/// Runs every `(per_dose, variance, comparator)` cell `runs` times. Results
/// depend only on the config, not on the worker count.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioResult> {
    run_scenario_with(config, &ModelRegistry::new())
}

pub fn run_scenario_with(config: &ScenarioConfig, registry: &ModelRegistry) -> Result<ScenarioResult> {
    config.validate(registry)?;
    let started = Instant::now();
    let spec = config.spec(registry)?;
    let region = config.region()?;
    let names = spec.param_names();

    let mut cells = Vec::new();
    for &per_dose in &config.per_dose {
        for &variance in &config.variances {
            for comparator in 0..config.comparators.len() {
                cells.push((per_dose, variance, comparator));
            }
        }
    }

    let tasks: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..config.runs).map(move |r| (c, r)))
        .collect();
    let outcomes: Vec<RunOutcome> = tasks
        .par_iter()
        .map(|&(c, run)| {
            let (per_dose, variance, comparator) = cells[c];
            let truth = config.truth(&spec, comparator).expect("validated");
            let cell = CellTruth {
                families: spec.families.clone(),
                params: [config.reference.clone(), config.comparators[comparator].clone()],
                doses: config.doses.clone(),
                per_dose: [per_dose; 2],
                variances: [variance; 2],
                region: config.region,
            };
            let seed = cell_seed(config.seed, per_dose, variance, comparator, run);
            let mut solver = config.solver.clone().unwrap_or_default();
            solver.seed = derive_seed(seed, &[3]);
            solver.frozen.extend(config.frozen.iter().copied());
            solver
                .frozen
                .extend(config.freeze_at_truth.iter().map(|&index| FrozenParam { index, value: truth[index] }));
            let opts = BootstrapOptions {
                epsilon: config.epsilon,
                alphas: config.alphas.clone(),
                replicates: config.bootstrap,
                seed: derive_seed(seed, &[4]),
                solver,
                ..BootstrapOptions::default()
            };
            let outcome = generate_dataset(&cell, seed)
                .and_then(|data| bootstrap_equivalence_test_with(&data, &spec, &region, &opts));
            match outcome {
                Ok(o) => RunOutcome {
                    rejected: config
                        .alphas
                        .iter()
                        .map(|&a| o.quantile(a).map(|q| o.d_hat < q).unwrap_or(false))
                        .collect(),
                    unreliable: o.unreliable(),
                    failed_replicates: o.failed,
                    estimate: Some(o.fit.params),
                },
                Err(_) => RunOutcome {
                    rejected: vec![false; config.alphas.len()],
                    estimate: None,
                    unreliable: false,
                    failed_replicates: 0,
                },
            }
        })
        .collect();

    let mut results = Vec::with_capacity(cells.len());
    for (c, &(per_dose, variance, comparator)) in cells.iter().enumerate() {
        let chunk = &outcomes[c * config.runs..(c + 1) * config.runs];
        let truth = config.truth(&spec, comparator)?;
        let true_d_inf = max_abs_deviation(&spec, &truth, &region)?.d_inf;
        let r = config.runs as f64;
        let levels = config
            .alphas
            .iter()
            .enumerate()
            .map(|(k, &alpha)| {
                let rejections = chunk.iter().filter(|o| o.rejected[k]).count();
                let p = rejections as f64 / r;
                LevelResult {
                    alpha,
                    rejections,
                    proportion: p,
                    standard_error: (p * (1.0 - p) / r).sqrt(),
                }
            })
            .collect();
        let estimates: Vec<Vec<f64>> = chunk.iter().filter_map(|o| o.estimate.clone()).collect();
        let errors = if estimates.is_empty() {
            Vec::new()
        } else {
            rrmse(&estimates, &truth)?
                .into_iter()
                .zip(&names)
                .zip(&truth)
                .map(|((e, name), &t)| ParameterError {
                    name: name.clone(),
                    truth: t,
                    rrmse: e.value,
                    relative: e.relative,
                })
                .collect()
        };
        results.push(CellResult {
            per_dose,
            n_per_group: [config.doses[0].len() * per_dose, config.doses[1].len() * per_dose],
            variance,
            comparator,
            label: config.labels.get(comparator).copied(),
            true_d_inf,
            runs: config.runs,
            levels,
            rrmse: errors,
            failed_runs: chunk.iter().filter(|o| o.estimate.is_none()).count(),
            unreliable_runs: chunk.iter().filter(|o| o.unreliable).count(),
            failed_replicates: chunk.iter().map(|o| o.failed_replicates).sum(),
        });
    }

    Ok(ScenarioResult {
        schema_version: SCHEMA_VERSION.into(),
        tag: config.tag,
        shared: config.shared,
        epsilon: config.epsilon,
        runs: config.runs,
        bootstrap: config.bootstrap,
        seed: config.seed,
        cells: results,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    })
}

impl ScenarioResult {
    /// One row per `(cell, alpha)`, laid out like the rejection tables.
    pub fn write_rejections_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "scenario,shared,n_per_group,per_dose,variance,label,true_d_inf,alpha,runs,rejections,proportion,standard_error,failed_runs,unreliable_runs"
        )?;
        for c in &self.cells {
            for l in &c.levels {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    self.tag.as_str(),
                    self.shared,
                    c.n_per_group[0],
                    c.per_dose,
                    c.variance,
                    c.label.map(|v| v.to_string()).unwrap_or_default(),
                    c.true_d_inf,
                    l.alpha,
                    c.runs,
                    l.rejections,
                    l.proportion,
                    l.standard_error,
                    c.failed_runs,
                    c.unreliable_runs
                )?;
            }
        }
        Ok(())
    }

    /// One row per `(cell, parameter)`.
    pub fn write_rrmse_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "scenario,n_per_group,variance,label,parameter,truth,rrmse,relative")?;
        for c in &self.cells {
            for e in &c.rrmse {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    self.tag.as_str(),
                    c.n_per_group[0],
                    c.variance,
                    c.label.map(|v| v.to_string()).unwrap_or_default(),
                    e.name,
                    e.truth,
                    e.rrmse,
                    e.relative
                )?;
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

impl ScenarioTag {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioTag::Scenario1 => "scenario1",
            ScenarioTag::Scenario2 => "scenario2",
            ScenarioTag::Scenario3 => "scenario3",
            ScenarioTag::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerPoint {
    pub kappa: f64,
    pub shared: usize,
    pub d_inf: f64,
    pub proportion: f64,
    pub standard_error: f64,
}

/// Rejection rate against `d_inf(kappa)` for each sharing level. Every level
/// sees the same simulated datasets.
pub fn scenario3_power_curve(
    kappas: &[f64],
    sharing: &[usize],
    runs: usize,
    bootstrap: usize,
    seed: u64,
) -> Result<Vec<PowerPoint>> {
    let mut points = Vec::new();
    for &shared in sharing {
        let mut config = scenario3(kappas, shared)?;
        config.runs = runs;
        config.bootstrap = bootstrap;
        config.seed = seed;
        let result = run_scenario(&config)?;
        for cell in &result.cells {
            let level = &cell.levels[0];
            points.push(PowerPoint {
                kappa: kappas[cell.comparator],
                shared,
                d_inf: cell.true_d_inf,
                proportion: level.proportion,
                standard_error: level.standard_error,
            });
        }
    }
    Ok(points)
}

pub fn write_power_csv<W: Write>(points: &[PowerPoint], mut out: W) -> std::io::Result<()> {
    writeln!(out, "kappa,shared,d_inf,power,standard_error")?;
    for p in points {
        writeln!(out, "{},{},{},{},{}", p.kappa, p.shared, p.d_inf, p.proportion, p.standard_error)?;
    }
    Ok(())
}
