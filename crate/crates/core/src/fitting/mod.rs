//! Joint least squares over both groups with a shared parameter block,
//! per-group residual variances, and sandwich covariance matrices.

pub(crate) mod lm;
pub(crate) mod problem;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{LevelSummary, TrialDataset};
use crate::error::{Error, Result};
use crate::model::{Group, ModelFamily, ModelSpec, ParamBox};
use crate::rng::{derive_seed, jitter_rng};

pub use self::lm::Termination;
use self::lm::{LeastSquares, LmSettings};
use self::problem::JointProblem;

/// A parameter held at a fixed value during estimation (joint index).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrozenParam {
    pub index: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub step_tolerance: f64,
    pub multistart: usize,
    /// Initial damping relative to the largest diagonal of `J^T J`.
    pub initial_damping: f64,
    pub damping_floor: f64,
    /// Multiplicative jitter range for the extra starts.
    pub jitter: (f64, f64),
    /// Start point in joint coordinates; data-driven guess when absent.
    pub initial: Option<Vec<f64>>,
    pub frozen: Vec<FrozenParam>,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tolerance: 1e-8,
            step_tolerance: 1e-10,
            multistart: 8,
            initial_damping: 1e-3,
            damping_floor: 1e-8,
            jitter: (0.5, 2.0),
            initial: None,
            frozen: Vec::new(),
            seed: 0,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self, dim: usize) -> Result<()> {
        let positive = [
            ("gradient_tolerance", self.gradient_tolerance),
            ("step_tolerance", self.step_tolerance),
            ("damping_floor", self.damping_floor),
            ("initial_damping", self.initial_damping),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.multistart == 0 {
            return Err(Error::InvalidInput("multistart must be >= 1".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput("max_iterations must be >= 1".into()));
        }
        if !(0.0 < self.jitter.0 && self.jitter.0 <= self.jitter.1) {
            return Err(Error::InvalidInput("jitter needs 0 < low <= high".into()));
        }
        if let Some(init) = &self.initial {
            if init.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: init.len(),
                });
            }
        }
        if let Some(f) = self.frozen.iter().find(|f| f.index >= dim) {
            return Err(Error::InvalidInput(format!(
                "frozen index {} out of range for {dim} parameters",
                f.index
            )));
        }
        Ok(())
    }

    fn lm_settings(&self) -> LmSettings {
        LmSettings {
            max_iterations: self.max_iterations,
            gradient_tolerance: self.gradient_tolerance,
            step_tolerance: self.step_tolerance,
            damping_floor: self.damping_floor,
            initial_damping: self.initial_damping,
            record_trace: false,
        }
    }

    pub(crate) fn free_mask(&self, dim: usize) -> Vec<bool> {
        let mut free = vec![true; dim];
        for f in &self.frozen {
            free[f.index] = false;
        }
        free
    }

    pub(crate) fn apply_frozen(&self, x: &mut [f64]) {
        for f in &self.frozen {
            x[f.index] = f.value;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartReport {
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub termination: Termination,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub best_objective: f64,
    pub singular_jacobian_events: usize,
    pub starts: Vec<StartReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub params: Vec<f64>,
    /// `RSS_l / n_l` for each group (own observations only).
    pub variances: [f64; 2],
    /// `RSS_0 / n_0` of the pooled placebo arm.
    pub placebo_variance: Option<f64>,
    pub rss: f64,
    pub group_rss: [f64; 2],
    pub placebo_rss: Option<f64>,
    pub n: [usize; 2],
    pub n_placebo: usize,
    /// Joint asymptotic covariance of the estimate; `None` if singular.
    pub covariance: Option<Vec<Vec<f64>>>,
    pub standard_errors: Option<Vec<f64>>,
    pub frozen: Vec<bool>,
    pub diagnostics: SolverDiagnostics,
}

impl FitResult {
    pub fn converged(&self) -> bool {
        self.diagnostics.converged
    }

    pub fn local_params(&self, spec: &ModelSpec, group: Group) -> Vec<f64> {
        spec.local_params(group, &self.params)
    }
}

/// Separate fit of one group's own curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFit {
    pub group: Group,
    pub names: Vec<String>,
    pub params: Vec<f64>,
    pub variance: f64,
    pub rss: f64,
    pub n: usize,
    /// `Sigma_l^{-1} / n_l`; `None` if singular.
    pub covariance: Option<Vec<Vec<f64>>>,
    pub frozen: Vec<bool>,
    pub diagnostics: SolverDiagnostics,
}

impl GroupFit {
    /// `Sigma_l^{-1}`, the asymptotic covariance of `sqrt(n_l)(b_l - beta_l)`.
    pub fn information_inverse(&self) -> Option<DMatrix<f64>> {
        self.covariance
            .as_ref()
            .map(|c| to_matrix(c) * self.n as f64)
    }
}

pub(crate) struct Solved {
    pub x: Vec<f64>,
    pub objective: f64,
    pub diagnostics: SolverDiagnostics,
}

/// Runs the multistart policy: the first start is `base`, the rest jitter
/// each free coordinate multiplicatively. Picks the lowest objective among
/// converged starts, or the lowest overall when none converged.
pub(crate) fn solve<P: LeastSquares + ?Sized>(
    problem: &P,
    bounds: &ParamBox,
    base: &[f64],
    opts: &SolverOptions,
) -> Solved {
    let free = opts.free_mask(problem.dim());
    let settings = opts.lm_settings();
    let jitter_seed = derive_seed(opts.seed, &[0x6a17]);
    let mut best: Option<(bool, lm::LmOutcome)> = None;
    let mut starts = Vec::with_capacity(opts.multistart);
    let mut singular = 0;

    for s in 0..opts.multistart {
        let mut x0 = base.to_vec();
        if s > 0 {
            let mut rng = jitter_rng(jitter_seed, s as u64);
            for (v, is_free) in x0.iter_mut().zip(&free) {
                if *is_free {
                    *v *= rng.random_range(opts.jitter.0..=opts.jitter.1);
                }
            }
        }
        opts.apply_frozen(&mut x0);
        bounds.project(&mut x0);
        let out = lm::minimize(problem, &x0, bounds, &free, &settings);
        singular += out.singular_events;
        starts.push(StartReport {
            objective: out.objective,
            converged: out.converged,
            iterations: out.iterations,
            termination: out.termination,
        });
        let better = match &best {
            None => true,
            Some((conv, b)) => {
                (out.converged && !conv) || (out.converged == *conv && out.objective < b.objective)
            }
        };
        if better {
            best = Some((out.converged, out));
        }
    }

    let (converged, out) = best.expect("multistart >= 1");
    Solved {
        objective: out.objective,
        diagnostics: SolverDiagnostics {
            iterations: out.iterations,
            converged,
            best_objective: out.objective,
            singular_jacobian_events: singular,
            starts,
        },
        x: out.x,
    }
}

/// Data-driven start for one family: placebo level from the lowest dose,
/// maximal effect from the highest, ED50 where the mean response crosses
/// half the effect.
fn family_guess(family: &ModelFamily, rows: &[LevelSummary], placebo_mean: Option<f64>, bounds: &[(f64, f64)]) -> Vec<f64> {
    let first = rows.first().expect("group has dose levels");
    let last = rows.last().expect("group has dose levels");
    let low = placebo_mean.unwrap_or(first.mean);
    let mut effect = last.mean - low;
    if effect.abs() < 1e-3 {
        effect = 1e-3;
    }
    let half = low + 0.5 * effect;
    let mut ed50 = 0.5 * last.dose;
    let mut prev = (placebo_mean.map_or(first.dose, |_| 0.0), low);
    for row in rows {
        if (prev.1 - half) * (row.mean - half) <= 0.0 && row.mean != prev.1 {
            let t = (half - prev.1) / (row.mean - prev.1);
            ed50 = prev.0 + t * (row.dose - prev.0);
            break;
        }
        prev = (row.dose, row.mean);
    }
    ed50 = ed50.max(0.05 * last.dose).max(1e-3);

    let mut guess = match family {
        ModelFamily::Emax3 => {
            // d / (ED50 + d) < 1 on the design, so scale the effect up
            let frac = last.dose / (ed50 + last.dose);
            vec![low, effect / frac.max(0.1), ed50]
        }
        ModelFamily::SigmoidEmax4 => vec![low, effect, 2.0, ed50],
        ModelFamily::LocationScale(_) => {
            let mut g = vec![low, 1.0];
            g.extend(bounds[2..].iter().map(|&(lo, hi)| 0.5 * (lo + hi)));
            let base = family.value(last.dose, &[0.0, 1.0].iter().chain(&g[2..]).copied().collect::<Vec<_>>());
            g[1] = if base.abs() > 1e-12 { effect / base } else { effect };
            g
        }
    };
    for (v, (lo, hi)) in guess.iter_mut().zip(bounds) {
        *v = v.clamp(*lo, *hi);
    }
    guess
}

fn local_bounds(spec: &ModelSpec, group: Group) -> Vec<(f64, f64)> {
    spec.partition
        .index_map(group)
        .into_iter()
        .map(|j| (spec.bounds.lower[j], spec.bounds.upper[j]))
        .collect()
}

/// Joint start: shared coordinates average both groups' guesses.
pub(crate) fn initial_guess(data: &TrialDataset, spec: &ModelSpec) -> Vec<f64> {
    let dim = spec.dim();
    let mut sum = vec![0.0; dim];
    let mut count = vec![0usize; dim];
    let placebo_mean = data
        .placebo()
        .map(|ys| ys.iter().sum::<f64>() / ys.len() as f64);
    for group in Group::BOTH {
        let rows = data.group(group).summaries();
        let guess = family_guess(spec.family(group), &rows, placebo_mean, &local_bounds(spec, group));
        for (i, v) in guess.into_iter().enumerate() {
            let j = spec.partition.joint_index(group, i);
            sum[j] += v;
            count[j] += 1;
        }
    }
    sum.iter().zip(&count).map(|(s, c)| s / *c as f64).collect()
}

/// Each group needs at least as many dose levels as free curve parameters.
fn check_estimable(data: &TrialDataset, spec: &ModelSpec, free: &[bool]) -> Result<()> {
    for group in Group::BOTH {
        let levels = data.group(group).levels.len() + usize::from(data.placebo().is_some());
        let free_local = spec
            .partition
            .index_map(group)
            .into_iter()
            .filter(|&j| free[j])
            .count();
        if levels < free_local {
            return Err(Error::Dataset(format!(
                "group {} has {levels} dose levels but {free_local} free parameters",
                group.label()
            )));
        }
    }
    Ok(())
}

fn start_point(data: &TrialDataset, spec: &ModelSpec, opts: &SolverOptions) -> Vec<f64> {
    let mut x = match &opts.initial {
        Some(init) => init.clone(),
        None => initial_guess(data, spec),
    };
    opts.apply_frozen(&mut x);
    spec.bounds.project(&mut x);
    x
}

/// Joint fit for an already assembled problem; shared by the plain and
/// pooled-placebo entry points and by the bootstrap replicates.
pub(crate) fn fit_problem(
    problem: &JointProblem,
    data: &TrialDataset,
    spec: &ModelSpec,
    base: &[f64],
    opts: &SolverOptions,
) -> FitResult {
    let solved = solve(problem, &spec.bounds, base, opts);
    finish_fit(problem, data, spec, solved.x, solved.objective, solved.diagnostics, opts)
}

pub(crate) fn finish_fit(
    problem: &JointProblem,
    data: &TrialDataset,
    spec: &ModelSpec,
    x: Vec<f64>,
    objective: f64,
    diagnostics: SolverDiagnostics,
    opts: &SolverOptions,
) -> FitResult {
    let mut group_rss = [0.0; 2];
    let mut n = [0usize; 2];
    for block in &problem.blocks {
        group_rss[block.group.index()] = block.rss(&x);
        n[block.group.index()] = block.n();
    }
    let placebo_rss = problem.placebo.as_ref().map(|p| p.rss(&x));
    let variances = [group_rss[0] / n[0] as f64, group_rss[1] / n[1] as f64];
    let placebo_variance = placebo_rss.map(|r| r / data.n_placebo() as f64);
    let free = opts.free_mask(spec.dim());
    let covariance = sandwich(problem, &x, &variances, placebo_variance, &free).ok();
    let standard_errors = covariance
        .as_ref()
        .map(|c| (0..c.nrows()).map(|i| c[(i, i)].max(0.0).sqrt()).collect());
    FitResult {
        names: spec.param_names(),
        params: x,
        variances,
        placebo_variance,
        rss: objective,
        group_rss,
        placebo_rss,
        n,
        n_placebo: data.n_placebo(),
        covariance: covariance.as_ref().map(from_matrix),
        standard_errors,
        frozen: free.iter().map(|f| !f).collect(),
        diagnostics,
    }
}

/// Least squares over the combined sample with the shared block `beta_0`.
pub fn fit_joint_ols(data: &TrialDataset, spec: &ModelSpec, opts: &SolverOptions) -> Result<FitResult> {
    if data.placebo().is_some() {
        return Err(Error::InvalidInput(
            "dataset has a pooled placebo arm; use fit_pooled_placebo".into(),
        ));
    }
    fit_checked(data, spec, opts)
}

/// Least squares with one placebo arm shared by both curves through the
/// common intercept: placebo residuals against `b_{0,1}` plus both groups'
/// active-dose residuals.
pub fn fit_pooled_placebo(data: &TrialDataset, spec: &ModelSpec, opts: &SolverOptions) -> Result<FitResult> {
    if !spec.supports_pooled_placebo() {
        return Err(Error::InvalidInput(
            "pooled placebo needs location-scale families sharing the intercept".into(),
        ));
    }
    if data.placebo().is_none() {
        return Err(Error::Dataset("dataset has no pooled placebo arm".into()));
    }
    fit_checked(data, spec, opts)
}

/// Dispatches on the presence of a pooled placebo arm.
pub fn fit(data: &TrialDataset, spec: &ModelSpec, opts: &SolverOptions) -> Result<FitResult> {
    if data.placebo().is_some() {
        fit_pooled_placebo(data, spec, opts)
    } else {
        fit_joint_ols(data, spec, opts)
    }
}

fn fit_checked(data: &TrialDataset, spec: &ModelSpec, opts: &SolverOptions) -> Result<FitResult> {
    opts.validate(spec.dim())?;
    check_estimable(data, spec, &opts.free_mask(spec.dim()))?;
    let problem = JointProblem::joint(data, spec);
    let base = start_point(data, spec, opts);
    Ok(fit_problem(&problem, data, spec, &base, opts))
}

/// Independent per-group fits. Frozen joint coordinates are frozen in every
/// group that uses them. A pooled placebo arm enters both fits.
pub fn fit_separate(data: &TrialDataset, spec: &ModelSpec, opts: &SolverOptions) -> Result<[GroupFit; 2]> {
    opts.validate(spec.dim())?;
    let joint_start = start_point(data, spec, opts);
    let fits = Group::BOTH.map(|group| {
        let family = spec.family(group);
        let map = spec.partition.index_map(group);
        let bounds = ParamBox {
            lower: map.iter().map(|&j| spec.bounds.lower[j]).collect(),
            upper: map.iter().map(|&j| spec.bounds.upper[j]).collect(),
        };
        let local_opts = SolverOptions {
            initial: None,
            frozen: opts
                .frozen
                .iter()
                .filter_map(|f| {
                    spec.partition
                        .local_index(group, f.index)
                        .map(|index| FrozenParam { index, value: f.value })
                })
                .collect(),
            seed: derive_seed(opts.seed, &[group.index() as u64]),
            ..opts.clone()
        };
        let problem = JointProblem::single(data, spec, group);
        let levels = data.group(group).levels.len() + usize::from(data.placebo().is_some());
        let free = local_opts.free_mask(family.dim());
        let free_count = free.iter().filter(|f| **f).count();
        if levels < free_count {
            return Err(Error::Dataset(format!(
                "group {} has {levels} dose levels but {free_count} free parameters",
                group.label()
            )));
        }
        let base: Vec<f64> = if opts.initial.is_some() {
            map.iter().map(|&j| joint_start[j]).collect()
        } else {
            let placebo_mean = data.placebo().map(|ys| ys.iter().sum::<f64>() / ys.len() as f64);
            let mut g = family_guess(family, &data.group(group).summaries(), placebo_mean, &local_bounds(spec, group));
            local_opts.apply_frozen(&mut g);
            g
        };
        let solved = solve(&problem, &bounds, &base, &local_opts);
        let rss = solved.objective;
        let n = problem.blocks[0].n() + data.n_placebo();
        let variance = rss / n as f64;
        let covariance = sandwich(&problem, &solved.x, &[variance], Some(variance), &free).ok();
        Ok(GroupFit {
            group,
            names: family.param_names(),
            params: solved.x,
            variance,
            rss,
            n,
            covariance: covariance.as_ref().map(from_matrix),
            frozen: free.iter().map(|f| !f).collect(),
            diagnostics: solved.diagnostics,
        })
    });
    let [a, b] = fits;
    Ok([a?, b?])
}

/// Plug-in asymptotic covariance of the joint estimate,
/// `(1/n) S^-1 (s1^2 S1 + s2^2 S2) S^-1` with `S_l` built from embedded
/// gradients weighted by `n_{l,i}/n_l` and `n_l/n`. Frozen coordinates get
/// zero rows and columns.
pub fn joint_asymptotic_covariance(fit: &FitResult, data: &TrialDataset, spec: &ModelSpec) -> Result<DMatrix<f64>> {
    if fit.params.len() != spec.dim() {
        return Err(Error::Dimension {
            expected: spec.dim(),
            got: fit.params.len(),
        });
    }
    let problem = JointProblem::joint(data, spec);
    let free: Vec<bool> = fit.frozen.iter().map(|f| !f).collect();
    sandwich(&problem, &fit.params, &fit.variances, fit.placebo_variance, &free)
}

/// With `S_l = (1/n) sum_i n_{l,i} g g^T` the `1/n` factors cancel, leaving
/// `A^-1 M A^-1` with `A = J^T J` and `M` its variance-weighted version.
fn sandwich(
    problem: &JointProblem,
    x: &[f64],
    variances: &[f64],
    placebo_variance: Option<f64>,
    free: &[bool],
) -> Result<DMatrix<f64>> {
    let dim = problem.dim();
    let idx: Vec<usize> = (0..dim).filter(|&j| free[j]).collect();
    let k = idx.len();
    let mut bread = DMatrix::zeros(k, k);
    let mut meat = DMatrix::zeros(k, k);
    let mut buf = Vec::new();
    let mut grad = Vec::new();
    let mut joint = vec![0.0; dim];
    for block in &problem.blocks {
        let var = if problem.blocks.len() == 1 { variances[0] } else { variances[block.group.index()] };
        buf.clear();
        buf.extend(block.index_map.iter().map(|&j| x[j]));
        grad.resize(buf.len(), 0.0);
        for row in &block.rows {
            block.family.grad_into(row.dose, &buf, &mut grad);
            joint.iter_mut().for_each(|v| *v = 0.0);
            for (g, &j) in grad.iter().zip(&block.index_map) {
                joint[j] = *g;
            }
            accumulate(&mut bread, &mut meat, &joint, &idx, row.n as f64, var);
        }
    }
    if let Some(p) = &problem.placebo {
        joint.iter_mut().for_each(|v| *v = 0.0);
        joint[p.index] = 1.0;
        let var = placebo_variance.unwrap_or(variances[0]);
        accumulate(&mut bread, &mut meat, &joint, &idx, p.summary.n as f64, var);
    }

    let inv = match bread.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => {
            let rank = bread.clone().svd(false, false).rank(1e-12 * bread.norm().max(1.0));
            return Err(Error::Singular(format!(
                "information matrix has rank {rank} < {k} free parameters"
            )));
        }
    };
    let cov = &inv * meat * &inv;
    let mut full = DMatrix::zeros(dim, dim);
    for (a, &i) in idx.iter().enumerate() {
        for (b, &j) in idx.iter().enumerate() {
            full[(i, j)] = 0.5 * (cov[(a, b)] + cov[(b, a)]);
        }
    }
    Ok(full)
}

fn accumulate(bread: &mut DMatrix<f64>, meat: &mut DMatrix<f64>, g: &[f64], idx: &[usize], n: f64, var: f64) {
    for (a, &i) in idx.iter().enumerate() {
        for (b, &j) in idx.iter().enumerate() {
            let v = n * g[i] * g[j];
            bread[(a, b)] += v;
            meat[(a, b)] += var * v;
        }
    }
}

pub(crate) fn from_matrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub(crate) fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(n, m, |i, j| rows[i][j])
}
