//! Config-driven runner behind the `curveq` binary: CSV ingestion, mode
//! dispatch and report files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{DoseLevel, GroupData, TrialDataset};
use crate::distance::{deviation_with_trace, DeviationResult, DoseRegion};
use crate::equivalence::{
    bootstrap_equivalence_test_with, parameter_equivalence_pretest, BootstrapOptions, SCHEMA_VERSION,
};
use crate::error::{Error, Result};
use crate::fitting::{fit, FitResult, FrozenParam, SolverOptions};
use crate::model::{ModelRegistry, ModelSpec};
use crate::simulation::{run_scenario_with, scenario1, scenario2, scenario3, ScenarioConfig, SCENARIO3_KAPPAS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Fit,
    Test,
    Pretest,
    Distance,
    Simulate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    #[serde(default)]
    pub families: Option<[String; 2]>,
    /// Number of leading shared parameters.
    #[serde(default)]
    pub shared: Option<usize>,
    /// Alternative to `shared`: the leading parameter names that are shared.
    #[serde(default)]
    pub shared_names: Option<Vec<String>>,
    /// Joint parameter name -> fixed value.
    #[serde(default)]
    pub frozen: BTreeMap<String, f64>,
    #[serde(default)]
    pub region: Option<(f64, f64)>,
    #[serde(default)]
    pub grid: Option<usize>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub bootstrap: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub pooled_placebo: bool,
    /// Joint parameters for `distance` mode; fitted from `data` when absent.
    #[serde(default)]
    pub parameters: Option<Vec<f64>>,
    /// ScenarioConfig JSON file for `simulate`.
    #[serde(default)]
    pub scenario: Option<PathBuf>,
    /// Built-in scenario for `simulate`: scenario1, scenario2 or scenario3.
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub runs: Option<usize>,
    /// Large Monte-Carlo sizes (1000 runs, 500 bootstrap replicates).
    #[serde(default)]
    pub full_fidelity: bool,
    #[serde(default)]
    pub emit_replicates: bool,
    #[serde(default)]
    pub solver: Option<SolverOptions>,
}

fn default_alpha() -> f64 {
    0.05
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub bootstrap: Option<usize>,
    pub out: Option<PathBuf>,
    pub emit_replicates: bool,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(b) = o.bootstrap {
            self.bootstrap = Some(b);
        }
        if let Some(out) = &o.out {
            self.output = Some(out.clone());
        }
        self.emit_replicates |= o.emit_replicates;
    }

    fn require<T: Clone>(&self, value: &Option<T>, name: &str) -> Result<T> {
        value.clone().ok_or_else(|| {
            Error::InvalidInput(format!("mode `{}` requires `{name}`", self.mode_name()))
        })
    }

    fn mode_name(&self) -> &'static str {
        match self.mode {
            Mode::Fit => "fit",
            Mode::Test => "test",
            Mode::Pretest => "pretest",
            Mode::Distance => "distance",
            Mode::Simulate => "simulate",
        }
    }

    fn shared_count(&self, registry: &ModelRegistry) -> Result<usize> {
        match (&self.shared, &self.shared_names) {
            (Some(_), Some(_)) => Err(Error::InvalidInput(
                "give either `shared` or `shared_names`, not both".into(),
            )),
            (Some(p), None) => Ok(*p),
            (None, Some(names)) => {
                let families = self.require(&self.families, "families")?;
                for tag in &families {
                    let own = registry.lookup(tag)?.param_names();
                    if names.len() > own.len() || own[..names.len()] != names[..] {
                        return Err(Error::InvalidInput(format!(
                            "shared_names {names:?} are not the leading parameters of `{tag}` ({own:?})"
                        )));
                    }
                }
                Ok(names.len())
            }
            (None, None) => Err(Error::InvalidInput(format!(
                "mode `{}` requires `shared` or `shared_names`",
                self.mode_name()
            ))),
        }
    }

    pub fn spec(&self, registry: &ModelRegistry, max_dose: f64) -> Result<ModelSpec> {
        let families = self.require(&self.families, "families")?;
        let f1 = registry.lookup(&families[0])?;
        let f2 = registry.lookup(&families[1])?;
        ModelSpec::new(f1, f2, self.shared_count(registry)?, max_dose)
    }

    fn solver(&self, spec: &ModelSpec) -> Result<SolverOptions> {
        let mut opts = self.solver.clone().unwrap_or_default();
        opts.seed = self.seed;
        let names = spec.param_names();
        for (name, &value) in &self.frozen {
            let index = names.iter().position(|n| n == name).ok_or_else(|| {
                Error::InvalidInput(format!("frozen parameter `{name}` is not one of {names:?}"))
            })?;
            opts.frozen.push(FrozenParam { index, value });
        }
        opts.validate(spec.dim())?;
        Ok(opts)
    }

    fn output_dir(&self) -> PathBuf {
        self.output.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}

/// Reads `group,dose,response` rows. Group 0 marks the pooled placebo arm
/// and is accepted only when `pooled_placebo` is set. Rows of a group are
/// collected into dose levels by exact dose equality.
pub fn ingest_csv(path: &Path, pooled_placebo: bool, region: Option<(f64, f64)>) -> Result<TrialDataset> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let csv_err = |line: u64, msg: String| Error::Csv {
        path: path.to_owned(),
        line,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file);
    let headers = reader.headers().map_err(|e| csv_err(1, e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["group", "dose", "response"] {
        return Err(csv_err(1, format!("header must be `group,dose,response`, found `{}`", headers.iter().collect::<Vec<_>>().join(","))));
    }

    let mut rows: [Vec<(f64, f64)>; 2] = [Vec::new(), Vec::new()];
    let mut placebo = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            csv_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize, name: &str| -> Result<f64> {
            let raw = record.get(i).unwrap_or("");
            raw.parse::<f64>()
                .map_err(|_| csv_err(line, format!("`{name}` value `{raw}` is not a number")))
        };
        let group = record.get(0).unwrap_or("");
        let dose = field(1, "dose")?;
        let response = field(2, "response")?;
        if !(dose >= 0.0) || !dose.is_finite() {
            return Err(csv_err(line, format!("dose {dose} must be finite and >= 0")));
        }
        if !response.is_finite() {
            return Err(csv_err(line, "response must be finite".into()));
        }
        match group {
            "1" => rows[0].push((dose, response)),
            "2" => rows[1].push((dose, response)),
            "0" if pooled_placebo => {
                if dose != 0.0 {
                    return Err(csv_err(line, format!("pooled placebo row has dose {dose}, expected 0")));
                }
                placebo.push(response);
            }
            "0" => {
                return Err(csv_err(
                    line,
                    "group 0 (pooled placebo) rows need `pooled_placebo: true`".into(),
                ))
            }
            other => return Err(csv_err(line, format!("group must be 0, 1 or 2, found `{other}`"))),
        }
    }

    let groups = rows.map(|mut r| {
        r.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut levels: Vec<DoseLevel> = Vec::new();
        for (dose, y) in r {
            match levels.last_mut() {
                Some(l) if l.dose == dose => l.responses.push(y),
                _ => levels.push(DoseLevel {
                    dose,
                    responses: vec![y],
                }),
            }
        }
        GroupData::new(levels)
    });
    for (k, g) in groups.iter().enumerate() {
        if g.levels.is_empty() {
            return Err(Error::Dataset(format!("{}: group {} has no rows", path.display(), k + 1)));
        }
    }
    let placebo = if pooled_placebo {
        if placebo.is_empty() {
            return Err(Error::Dataset(format!("{}: no pooled placebo (group 0) rows", path.display())));
        }
        Some(placebo)
    } else {
        None
    };
    let [a, b] = groups;
    match region {
        Some(r) => TrialDataset::new(a, b, placebo, r),
        None => TrialDataset::with_default_region(a, b, placebo),
    }
}

#[derive(Debug, Clone, Serialize)]
struct Versioned<'a, T: Serialize> {
    schema_version: &'static str,
    #[serde(flatten)]
    inner: &'a T,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &[u8]) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Files written by a run.
#[derive(Debug, Clone, Default)]
pub struct Artifacts {
    pub files: Vec<PathBuf>,
    /// One-line human summary.
    pub summary: String,
}

fn load_data(config: &RunConfig) -> Result<TrialDataset> {
    let path = config.require(&config.data, "data")?;
    ingest_csv(&path, config.pooled_placebo, config.region)
}

fn region_of(config: &RunConfig, data: Option<&TrialDataset>) -> Result<DoseRegion> {
    let (lo, hi) = match (config.region, data) {
        (Some(r), _) => r,
        (None, Some(d)) => d.region(),
        (None, None) => {
            return Err(Error::InvalidInput("`region` is required without a dataset".into()));
        }
    };
    let r = DoseRegion::new(lo, hi)?;
    match config.grid {
        Some(g) => r.with_grid(g),
        None => Ok(r),
    }
}

/// Executes one configured run and writes its reports into the output
/// directory. Statistical outcomes never produce an error.
pub fn run(config: &RunConfig, registry: &ModelRegistry) -> Result<Artifacts> {
    let out = config.output_dir();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut artifacts = Artifacts::default();
    match config.mode {
        Mode::Fit => {
            let data = load_data(config)?;
            let spec = config.spec(registry, data.max_dose())?;
            let fitted: FitResult = fit(&data, &spec, &config.solver(&spec)?)?;
            let path = out.join("fit.json");
            write_json(&path, &Versioned { schema_version: SCHEMA_VERSION, inner: &fitted })?;
            artifacts.summary = format!(
                "fit: rss {:.6}, converged {}, parameters {:?}",
                fitted.rss,
                fitted.converged(),
                fitted.params
            );
            artifacts.files.push(path);
        }
        Mode::Test => {
            let data = load_data(config)?;
            let spec = config.spec(registry, data.max_dose())?;
            let region = region_of(config, Some(&data))?;
            let opts = BootstrapOptions {
                epsilon: config.require(&config.epsilon, "epsilon")?,
                alphas: vec![config.alpha],
                replicates: config.bootstrap.unwrap_or(500),
                seed: config.seed,
                keep_replicates: config.emit_replicates,
                solver: config.solver(&spec)?,
                ..BootstrapOptions::default()
            };
            let outcome = bootstrap_equivalence_test_with(&data, &spec, &region, &opts)?;
            let report = outcome.report(config.alpha)?;
            let path = out.join("equivalence_report.json");
            write_json(&path, &report)?;
            artifacts.files.push(path);
            let trace = deviation_with_trace(&spec, &outcome.fit.params, &region)?;
            let mut csv = Vec::new();
            trace.write_trace_csv(&mut csv).map_err(|e| Error::io(out.join("deviation_trace.csv"), e))?;
            let path = out.join("deviation_trace.csv");
            write_text(&path, &csv)?;
            artifacts.files.push(path);
            artifacts.summary = format!(
                "test: d_hat {:.6}, q {:.6}, p-value {:.4}, decision {:?}",
                report.d_hat, report.quantile, report.p_value, report.decision
            );
        }
        Mode::Pretest => {
            let data = load_data(config)?;
            let spec = config.spec(registry, data.max_dose())?;
            let shared = config.shared_count(registry)?;
            let report = parameter_equivalence_pretest(
                &data,
                &spec,
                config.require(&config.delta, "delta")?,
                config.alpha,
                shared,
                &config.solver(&spec)?,
            )?;
            let path = out.join("pretest_report.json");
            write_json(&path, &report)?;
            artifacts.summary = format!(
                "pretest: thresholds {:?}, differences {:?}, decision {:?}",
                report.thresholds, report.differences, report.decision
            );
            artifacts.files.push(path);
        }
        Mode::Distance => {
            let data = match &config.data {
                Some(_) => Some(load_data(config)?),
                None => None,
            };
            let region = region_of(config, data.as_ref())?;
            let spec = config.spec(registry, region.hi)?;
            let beta = match (&config.parameters, &data) {
                (Some(p), _) => p.clone(),
                (None, Some(d)) => fit(d, &spec, &config.solver(&spec)?)?.params,
                (None, None) => {
                    return Err(Error::InvalidInput(
                        "mode `distance` requires `parameters` or `data`".into(),
                    ))
                }
            };
            let with_trace = deviation_with_trace(&spec, &beta, &region)?;
            let result = DeviationResult {
                trace: None,
                ..with_trace.clone()
            };
            let path = out.join("deviation.json");
            write_json(&path, &Versioned { schema_version: SCHEMA_VERSION, inner: &result })?;
            artifacts.files.push(path);
            let mut csv = Vec::new();
            with_trace.write_trace_csv(&mut csv).map_err(|e| Error::io(out.join("deviation_trace.csv"), e))?;
            let path = out.join("deviation_trace.csv");
            write_text(&path, &csv)?;
            artifacts.files.push(path);
            artifacts.summary = format!(
                "distance: d_inf {:.6} at {:?}",
                result.d_inf,
                result.maximizers.iter().map(|m| m.dose).collect::<Vec<_>>()
            );
        }
        Mode::Simulate => {
            let mut scenario = scenario_config(config)?;
            scenario.seed = config.seed;
            if config.full_fidelity {
                scenario.runs = 1000;
                scenario.bootstrap = 500;
            }
            if let Some(r) = config.runs {
                scenario.runs = r;
            }
            if let Some(b) = config.bootstrap {
                scenario.bootstrap = b;
            }
            let result = run_scenario_with(&scenario, registry)?;
            let path = out.join("scenario_result.json");
            write_text(&path, (result.to_json()? + "\n").as_bytes())?;
            artifacts.files.push(path);
            let mut csv = Vec::new();
            result.write_rejections_csv(&mut csv).map_err(|e| Error::io(out.join("rejections.csv"), e))?;
            let path = out.join("rejections.csv");
            write_text(&path, &csv)?;
            artifacts.files.push(path);
            let mut csv = Vec::new();
            result.write_rrmse_csv(&mut csv).map_err(|e| Error::io(out.join("rrmse.csv"), e))?;
            let path = out.join("rrmse.csv");
            write_text(&path, &csv)?;
            artifacts.files.push(path);
            artifacts.summary = format!(
                "simulate: {} cells x {} runs in {:.1}s",
                result.cells.len(),
                result.runs,
                result.wall_clock_seconds
            );
        }
    }
    Ok(artifacts)
}

fn scenario_config(config: &RunConfig) -> Result<ScenarioConfig> {
    match (&config.scenario, &config.preset) {
        (Some(_), Some(_)) => Err(Error::InvalidInput("give either `scenario` or `preset`, not both".into())),
        (Some(path), None) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
        }
        (None, Some(name)) => match name.as_str() {
            "scenario1" => Ok(scenario1()),
            "scenario2" => Ok(scenario2()),
            "scenario3" => scenario3(&SCENARIO3_KAPPAS, config.shared.unwrap_or(3)),
            other => Err(Error::InvalidInput(format!("unknown preset `{other}`"))),
        },
        (None, None) => Err(Error::InvalidInput("mode `simulate` requires `scenario` or `preset`".into())),
    }
}
