//! Parametric bootstrap test of `H0: d_inf >= epsilon` and the pretest of
//! equivalence of the shared parameters.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal, StudentsT};

use crate::constrained::{constrained_from, ConstrainedFit, ConstraintOptions};
use crate::data::{LevelSummary, TrialDataset};
use crate::distance::{deviation, max_abs_deviation, Difference, DoseRegion, Maximizer};
use crate::error::{Error, Result};
use crate::fitting::problem::{JointProblem, PlaceboRow};
use crate::fitting::{fit, fit_separate, solve, FitResult, GroupFit, SolverOptions};
use crate::model::ModelSpec;
use crate::rng::{derive_seed, GaussianStream};

pub const SCHEMA_VERSION: &str = "1";

/// Replicate failures above this share flag the report as unreliable.
const FAILURE_SHARE: f64 = 0.05;
pub const MIN_REPLICATES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapOptions {
    pub epsilon: f64,
    /// Levels evaluated from one set of replicates.
    pub alphas: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
    pub replicate_multistart: usize,
    pub keep_replicates: bool,
    pub solver: SolverOptions,
    pub constraint_tolerance: f64,
    pub penalty_start: f64,
    pub penalty_growth: f64,
    pub max_outer: usize,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        let c = ConstraintOptions::default();
        Self {
            epsilon: 1.0,
            alphas: vec![0.05],
            replicates: 500,
            seed: 0,
            replicate_multistart: 3,
            keep_replicates: false,
            solver: SolverOptions::default(),
            constraint_tolerance: c.tolerance,
            penalty_start: c.penalty_start,
            penalty_growth: c.penalty_growth,
            max_outer: c.max_outer,
        }
    }
}

impl BootstrapOptions {
    pub fn new(epsilon: f64, alpha: f64, replicates: usize, seed: u64) -> Self {
        Self {
            epsilon,
            alphas: vec![alpha],
            replicates,
            seed,
            ..Self::default()
        }
    }

    pub fn constraint_options(&self) -> ConstraintOptions {
        ConstraintOptions {
            epsilon: self.epsilon,
            tolerance: self.constraint_tolerance,
            penalty_start: self.penalty_start,
            penalty_growth: self.penalty_growth,
            max_outer: self.max_outer,
            solver: self.solver.clone(),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.alphas.is_empty() {
            return Err(Error::InvalidInput("at least one alpha is required".into()));
        }
        if self.replicates < MIN_REPLICATES {
            return Err(Error::InvalidInput(format!(
                "bootstrap needs B >= {MIN_REPLICATES}, got {}",
                self.replicates
            )));
        }
        for &a in &self.alphas {
            order_index(self.replicates, a)?;
        }
        if self.replicate_multistart == 0 {
            return Err(Error::InvalidInput("replicate_multistart must be >= 1".into()));
        }
        self.constraint_options().validate(dim)
    }
}

/// 1-based order statistic `floor(B alpha)`.
fn order_index(replicates: usize, alpha: f64) -> Result<usize> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let k = (replicates as f64 * alpha + 1e-9).floor() as usize;
    if k == 0 {
        return Err(Error::InvalidInput(format!(
            "B = {replicates} is too small for alpha = {alpha}: need B >= 1/alpha"
        )));
    }
    Ok(k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    /// Equivalence: `d_hat < q_alpha`.
    RejectH0,
    FailToReject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub schema_version: String,
    pub d_hat: f64,
    pub maximizers: Vec<Maximizer>,
    pub epsilon: f64,
    pub alpha: f64,
    pub replicates: usize,
    pub quantile: f64,
    pub p_value: f64,
    pub decision: Decision,
    pub failed_replicates: usize,
    pub unreliable: bool,
    pub seed: u64,
    pub parameter_names: Vec<String>,
    pub estimate: Vec<f64>,
    /// Data-generating parameter of the bootstrap.
    pub bootstrap_estimate: Vec<f64>,
    pub constrained: bool,
    pub variances: [f64; 2],
    pub placebo_variance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicate_statistics: Option<Vec<f64>>,
}

impl EquivalenceReport {
    pub fn rejects(&self) -> bool {
        self.decision == Decision::RejectH0
    }
}

/// Everything computed by one bootstrap run; reports for each level share
/// the replicates.
#[derive(Debug, Clone)]
pub struct BootstrapOutcome {
    pub fit: FitResult,
    pub d_hat: f64,
    pub maximizers: Vec<Maximizer>,
    pub constrained: Option<ConstrainedFit>,
    pub bootstrap_estimate: Vec<f64>,
    /// Replicate statistics in replicate order.
    pub statistics: Vec<f64>,
    pub failed: usize,
    pub options: BootstrapOptions,
}

impl BootstrapOutcome {
    pub fn sorted_statistics(&self) -> Vec<f64> {
        let mut s = self.statistics.clone();
        s.sort_by(f64::total_cmp);
        s
    }

    pub fn quantile(&self, alpha: f64) -> Result<f64> {
        let k = order_index(self.statistics.len(), alpha)?;
        Ok(self.sorted_statistics()[k - 1])
    }

    /// `#{d*_b <= d_hat} / B`.
    pub fn p_value(&self) -> f64 {
        let below = self.statistics.iter().filter(|&&d| d <= self.d_hat).count();
        below as f64 / self.statistics.len() as f64
    }

    pub fn unreliable(&self) -> bool {
        self.failed as f64 > FAILURE_SHARE * self.statistics.len() as f64
    }

    pub fn report(&self, alpha: f64) -> Result<EquivalenceReport> {
        let quantile = self.quantile(alpha)?;
        Ok(EquivalenceReport {
            schema_version: SCHEMA_VERSION.into(),
            d_hat: self.d_hat,
            maximizers: self.maximizers.clone(),
            epsilon: self.options.epsilon,
            alpha,
            replicates: self.statistics.len(),
            quantile,
            p_value: self.p_value(),
            decision: if self.d_hat < quantile {
                Decision::RejectH0
            } else {
                Decision::FailToReject
            },
            failed_replicates: self.failed,
            unreliable: self.unreliable(),
            seed: self.options.seed,
            parameter_names: self.fit.names.clone(),
            estimate: self.fit.params.clone(),
            bootstrap_estimate: self.bootstrap_estimate.clone(),
            constrained: self.constrained.is_some(),
            variances: self.fit.variances,
            placebo_variance: self.fit.placebo_variance,
            replicate_statistics: self.options.keep_replicates.then(|| self.statistics.clone()),
        })
    }

    pub fn reports(&self) -> Result<Vec<EquivalenceReport>> {
        self.options.alphas.iter().map(|&a| self.report(a)).collect()
    }
}

/// Joint fit, its deviation, and the constrained estimate when the
/// deviation falls short of the margin. A constrained fit with lower RSS
/// than the unconstrained one exposes a local optimum; the unconstrained fit
/// is then restarted from it, at most twice.
pub(crate) fn estimation_step(
    data: &TrialDataset,
    spec: &ModelSpec,
    region: &DoseRegion,
    opts: &BootstrapOptions,
) -> Result<(FitResult, f64, Vec<Maximizer>, Option<ConstrainedFit>)> {
    let problem = JointProblem::joint(data, spec);
    let mut fitted = fit(data, spec, &opts.solver)?;
    let copts = opts.constraint_options();
    for attempt in 0..=2 {
        let dev = max_abs_deviation(spec, &fitted.params, region)?;
        if dev.d_inf >= opts.epsilon {
            return Ok((fitted, dev.d_inf, dev.maximizers, None));
        }
        let constrained = constrained_from(&problem, data, spec, region, &fitted.params, &copts)?;
        if constrained.rss() >= fitted.rss - 1e-8 || attempt == 2 {
            return Ok((fitted, dev.d_inf, dev.maximizers, Some(constrained)));
        }
        let restart = SolverOptions {
            initial: Some(constrained.fit.params.clone()),
            ..opts.solver.clone()
        };
        let refit = fit(data, spec, &restart)?;
        if refit.rss < fitted.rss {
            fitted = refit;
        } else {
            return Ok((fitted, dev.d_inf, dev.maximizers, Some(constrained)));
        }
    }
    unreachable!("loop returns on its last pass")
}

/// Responses of one group at its design levels, drawn from the counter
/// stream `(seed, replicate, label)` with observation indices running over
/// the levels in order.
pub(crate) fn draw_levels(
    seed: u64,
    replicate: u64,
    label: u8,
    levels: &[(f64, usize)],
    mean: impl Fn(f64) -> f64,
    variance: f64,
) -> Vec<Vec<f64>> {
    let mut stream = GaussianStream::new(seed, replicate, label);
    let mut start = 0u64;
    levels
        .iter()
        .map(|&(dose, n)| {
            let mut ys = vec![0.0; n];
            stream.fill(start, mean(dose), variance, &mut ys);
            start += n as u64;
            ys
        })
        .collect()
}

struct Replicate {
    statistic: f64,
    converged: bool,
}

fn run_replicate(
    template: &JointProblem,
    spec: &ModelSpec,
    region: &DoseRegion,
    beta: &[f64],
    variances: [f64; 2],
    placebo_variance: Option<f64>,
    stream_seed: u64,
    b: usize,
    opts: &SolverOptions,
) -> Replicate {
    let mut problem = template.clone();
    for block in &mut problem.blocks {
        let local: Vec<f64> = block.index_map.iter().map(|&j| beta[j]).collect();
        let design: Vec<(f64, usize)> = block.rows.iter().map(|r| (r.dose, r.n)).collect();
        let family = &block.family;
        let ys = draw_levels(
            stream_seed,
            b as u64,
            block.group.label(),
            &design,
            |d| family.value(d, &local),
            variances[block.group.index()],
        );
        for (row, y) in block.rows.iter_mut().zip(ys) {
            *row = LevelSummary::from_responses(row.dose, &y);
        }
    }
    if let Some(p) = &template.placebo {
        let ys = draw_levels(
            stream_seed,
            b as u64,
            0,
            &[(0.0, p.summary.n)],
            |_| beta[p.index],
            placebo_variance.unwrap_or(variances[0]),
        );
        problem.placebo = Some(PlaceboRow {
            index: p.index,
            summary: LevelSummary::from_responses(0.0, &ys[0]),
        });
    }
    let problem = problem.rebuilt();
    let solved = solve(&problem, &spec.bounds, beta, opts);
    let statistic = deviation(&Difference::unchecked(spec, &solved.x), region, false).d_inf;
    Replicate {
        statistic,
        converged: solved.diagnostics.converged,
    }
}

/// Algorithm: fit, pick the data-generating point on the null boundary,
/// simulate `B` parametric replicates with per-group `N(0, s_l^2)` errors,
/// refit each warm-started at that point, and compare `d_hat` with the
/// `floor(B alpha)`-th order statistic of the replicate deviations.
pub fn bootstrap_equivalence_test_with(
    data: &TrialDataset,
    spec: &ModelSpec,
    region: &DoseRegion,
    opts: &BootstrapOptions,
) -> Result<BootstrapOutcome> {
    opts.validate(spec.dim())?;
    region.validate()?;
    let (fitted, d_hat, maximizers, constrained) = estimation_step(data, spec, region, opts)?;
    let beta = match &constrained {
        Some(c) => c.fit.params.clone(),
        None => fitted.params.clone(),
    };

    let template = JointProblem::joint(data, spec);
    let stream_seed = derive_seed(opts.seed, &[1]);
    let replicates: Vec<Replicate> = (0..opts.replicates)
        .into_par_iter()
        .map(|b| {
            let solver = SolverOptions {
                multistart: opts.replicate_multistart,
                initial: None,
                seed: derive_seed(opts.seed, &[2, b as u64]),
                ..opts.solver.clone()
            };
            run_replicate(
                &template,
                spec,
                region,
                &beta,
                fitted.variances,
                fitted.placebo_variance,
                stream_seed,
                b,
                &solver,
            )
        })
        .collect();

    Ok(BootstrapOutcome {
        d_hat,
        maximizers,
        constrained,
        bootstrap_estimate: beta,
        failed: replicates.iter().filter(|r| !r.converged).count(),
        statistics: replicates.into_iter().map(|r| r.statistic).collect(),
        fit: fitted,
        options: opts.clone(),
    })
}

/// Single-level test with default solver settings.
pub fn bootstrap_equivalence_test(
    data: &TrialDataset,
    spec: &ModelSpec,
    region: &DoseRegion,
    epsilon: f64,
    alpha: f64,
    replicates: usize,
    seed: u64,
) -> Result<EquivalenceReport> {
    let opts = BootstrapOptions::new(epsilon, alpha, replicates, seed);
    bootstrap_equivalence_test_with(data, spec, region, &opts)?.report(alpha)
}

/// Degrees of freedom from which the Cornish-Fisher series replaces the
/// incomplete-beta inversion.
const LARGE_DF: f64 = 1000.0;

/// Inverse CDF of Student's t.
pub fn t_quantile(prob: f64, df: f64) -> Result<f64> {
    if !(prob > 0.0 && prob < 1.0) {
        return Err(Error::Domain(format!("probability must lie in (0, 1), got {prob}")));
    }
    if !(df >= 1.0) {
        return Err(Error::Domain(format!("degrees of freedom must be >= 1, got {df}")));
    }
    if prob == 0.5 {
        return Ok(0.0);
    }
    // solve in the lower tail, where the CDF keeps full relative precision
    let lower = prob.min(1.0 - prob);
    let sign = if prob > 0.5 { -1.0 } else { 1.0 };
    let t = if df >= LARGE_DF {
        cornish_fisher(lower, df)
    } else {
        let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Domain(e.to_string()))?;
        let mut t = dist.inverse_cdf(lower);
        for _ in 0..4 {
            let step = (dist.cdf(t) - lower) / dist.pdf(t);
            t -= step;
            if step.abs() <= 1e-14 * t.abs().max(1.0) {
                break;
            }
        }
        t
    };
    Ok(sign * t)
}

/// Abramowitz-Stegun 26.7.5 expansion around the normal quantile.
fn cornish_fisher(prob: f64, df: f64) -> f64 {
    let z = Normal::standard().inverse_cdf(prob);
    let z2 = z * z;
    let g1 = z * (z2 + 1.0) / 4.0;
    let g2 = z * ((5.0 * z2 + 16.0) * z2 + 3.0) / 96.0;
    let g3 = z * (((3.0 * z2 + 19.0) * z2 + 17.0) * z2 - 15.0) / 384.0;
    let g4 = z * ((((79.0 * z2 + 776.0) * z2 + 1482.0) * z2 - 1920.0) * z2 - 945.0) / 92160.0;
    z + (g1 + (g2 + (g3 + g4 / df) / df) / df) / df
}

/// `delta - t_{1-alpha, n-2} sqrt(omega_ii / (n (n - 2)))`.
pub fn pretest_thresholds(omega_diagonal: &[f64], n: usize, delta: f64, alpha: f64) -> Result<Vec<f64>> {
    if n <= 2 {
        return Err(Error::InvalidInput(format!("pretest needs n > 2, got {n}")));
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidInput(format!("delta must be > 0, got {delta}")));
    }
    let nf = n as f64;
    let t = t_quantile(1.0 - alpha, nf - 2.0)?;
    omega_diagonal
        .iter()
        .map(|&w| {
            if !(w >= 0.0) {
                return Err(Error::InvalidInput(format!("omega diagonal entry {w} is negative")));
            }
            Ok(delta - t * (w / (nf * (nf - 2.0))).sqrt())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretestDecision {
    /// Shared parameters equivalent within `delta`.
    RejectK0,
    FailToReject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretestReport {
    pub schema_version: String,
    pub delta: f64,
    pub alpha: f64,
    pub n: usize,
    pub shared: usize,
    pub differences: Vec<f64>,
    pub omega_diagonal: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub passes: Vec<bool>,
    pub decision: PretestDecision,
    pub estimates: [Vec<f64>; 2],
}

/// `Omega = lambda Lambda_1^-1 + lambda / (lambda - 1) Lambda_2^-1` with
/// `lambda = n / n_1` and `Lambda_l^-1` the leading `shared x shared` block of
/// `Sigma_l^-1 = n_l Cov_l`.
pub fn pretest_omega(fits: &[GroupFit; 2], shared: usize) -> Result<Vec<Vec<f64>>> {
    let n1 = fits[0].n as f64;
    let n = n1 + fits[1].n as f64;
    let lambda = n / n1;
    if !(lambda > 1.0) || !lambda.is_finite() {
        return Err(Error::InvalidInput("pretest needs observations in both groups".into()));
    }
    let inv: Vec<_> = fits
        .iter()
        .map(|f| {
            f.information_inverse().ok_or_else(|| {
                Error::Singular(format!("Sigma_{} of the separate fit is singular", f.group.label()))
            })
        })
        .collect::<Result<_>>()?;
    Ok((0..shared)
        .map(|i| {
            (0..shared)
                .map(|j| lambda * inv[0][(i, j)] + lambda / (lambda - 1.0) * inv[1][(i, j)])
                .collect()
        })
        .collect())
}

/// Tests `K0: max_i |b_{1,i} - b_{2,i}| >= delta` over the first `shared`
/// parameters from separate per-group fits.
pub fn parameter_equivalence_pretest(
    data: &TrialDataset,
    spec: &ModelSpec,
    delta: f64,
    alpha: f64,
    shared: usize,
    opts: &SolverOptions,
) -> Result<PretestReport> {
    let max_shared = spec.families.iter().map(|f| f.dim()).min().unwrap_or(0);
    if shared == 0 || shared > max_shared {
        return Err(Error::InvalidInput(format!(
            "pretest compares 1..={max_shared} leading parameters, got {shared}"
        )));
    }
    let fits = fit_separate(data, spec, opts)?;
    let n = fits[0].n + fits[1].n;
    let omega = pretest_omega(&fits, shared)?;
    let omega_diagonal: Vec<f64> = (0..shared).map(|i| omega[i][i]).collect();
    let thresholds = pretest_thresholds(&omega_diagonal, n, delta, alpha)?;
    let differences: Vec<f64> = (0..shared)
        .map(|i| (fits[0].params[i] - fits[1].params[i]).abs())
        .collect();
    let passes: Vec<bool> = differences.iter().zip(&thresholds).map(|(d, t)| d < t).collect();
    let [a, b] = fits;
    Ok(PretestReport {
        schema_version: SCHEMA_VERSION.into(),
        delta,
        alpha,
        n,
        shared,
        decision: if passes.iter().all(|p| *p) {
            PretestDecision::RejectK0
        } else {
            PretestDecision::FailToReject
        },
        differences,
        omega_diagonal,
        thresholds,
        passes,
        estimates: [a.params, b.params],
    })
}
