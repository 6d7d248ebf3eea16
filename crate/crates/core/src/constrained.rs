//! Least squares under the equality constraint `d_inf(beta) = epsilon`,
//! solved by an augmented Lagrangian around the joint LM solver.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::TrialDataset;
use crate::distance::{deviation, deviation_gradient, max_abs_deviation, Difference, DoseRegion};
use crate::error::{Error, Result};
use crate::fitting::lm::LeastSquares;
use crate::fitting::problem::JointProblem;
use crate::fitting::{finish_fit, solve, FitResult, SolverOptions};
use crate::model::ModelSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstraintOptions {
    pub epsilon: f64,
    pub tolerance: f64,
    pub penalty_start: f64,
    pub penalty_growth: f64,
    pub max_outer: usize,
    pub solver: SolverOptions,
}

impl Default for ConstraintOptions {
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            tolerance: 1e-6,
            penalty_start: 10.0,
            penalty_growth: 10.0,
            max_outer: 20,
            solver: SolverOptions::default(),
        }
    }
}

impl ConstraintOptions {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self {
            epsilon,
            ..Self::default()
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidInput(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidInput("constraint tolerance must be > 0".into()));
        }
        if !(self.penalty_start > 0.0) || !(self.penalty_growth > 1.0) {
            return Err(Error::InvalidInput("penalty start > 0 and growth > 1 required".into()));
        }
        if self.max_outer == 0 {
            return Err(Error::InvalidInput("max_outer must be >= 1".into()));
        }
        self.solver.validate(dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartKind {
    Unconstrained,
    PushedTowardMargin,
    OppositeSide,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub start: StartKind,
    pub rss: f64,
    pub constraint_gap: f64,
    pub converged: bool,
    pub outer_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedFit {
    pub fit: FitResult,
    pub epsilon: f64,
    pub d_inf: f64,
    /// `d_inf(beta_bar) - epsilon`.
    pub constraint_gap: f64,
    pub converged: bool,
    pub outer_iterations: usize,
    pub penalty: f64,
    pub multiplier: f64,
    pub candidates: Vec<CandidateReport>,
}

impl ConstrainedFit {
    pub fn params(&self) -> &[f64] {
        &self.fit.params
    }

    pub fn rss(&self) -> f64 {
        self.fit.rss
    }
}

/// RSS plus `(rho / 2) (g + lambda / rho)^2` with `g = d_inf - epsilon`,
/// written as one extra residual row.
struct Augmented<'a> {
    base: &'a JointProblem,
    spec: &'a ModelSpec,
    region: &'a DoseRegion,
    epsilon: f64,
    rho: f64,
    lambda: f64,
}

impl LeastSquares for Augmented<'_> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn len(&self) -> usize {
        self.base.len() + 1
    }

    fn residuals(&self, x: &[f64], r: &mut [f64]) {
        self.base.residuals(x, r);
        let g = gap(self.spec, self.region, x, self.epsilon);
        r[self.base.len()] = (0.5 * self.rho).sqrt() * (g + self.lambda / self.rho);
    }

    fn jacobian(&self, x: &[f64], jac: &mut DMatrix<f64>) {
        self.base.jacobian(x, jac);
        let diff = Difference::unchecked(self.spec, x);
        let dev = deviation(&diff, self.region, false);
        let grad = deviation_gradient(&diff, &dev.maximizers, x.len());
        let w = (0.5 * self.rho).sqrt();
        let row = self.base.len();
        for (j, g) in grad.iter().enumerate() {
            jac[(row, j)] = w * g;
        }
    }

    fn offset(&self) -> f64 {
        self.base.offset()
    }
}

fn gap(spec: &ModelSpec, region: &DoseRegion, x: &[f64], epsilon: f64) -> f64 {
    deviation(&Difference::unchecked(spec, x), region, false).d_inf - epsilon
}

/// Newton steps on `g` along its gradient, kept only while `|g|` shrinks.
fn restore(spec: &ModelSpec, region: &DoseRegion, x: &mut Vec<f64>, epsilon: f64, free: &[bool], steps: usize) -> f64 {
    let mut g = gap(spec, region, x, epsilon);
    for _ in 0..steps {
        if g == 0.0 {
            break;
        }
        let diff = Difference::unchecked(spec, x);
        let dev = deviation(&diff, region, false);
        let mut grad = deviation_gradient(&diff, &dev.maximizers, x.len());
        for (v, f) in grad.iter_mut().zip(free) {
            if !f {
                *v = 0.0;
            }
        }
        let norm2: f64 = grad.iter().map(|v| v * v).sum();
        if !(norm2 > 0.0) {
            break;
        }
        let mut trial: Vec<f64> = x.iter().zip(&grad).map(|(xi, gi)| xi - g * gi / norm2).collect();
        spec.bounds.project(&mut trial);
        let g_trial = gap(spec, region, &trial, epsilon);
        if g_trial.abs() < g.abs() {
            *x = trial;
            g = g_trial;
        } else {
            break;
        }
    }
    g
}

/// Moves `x` so the signed deviation at its current first maximizer reaches
/// `target` to first order.
fn push_signed(spec: &ModelSpec, region: &DoseRegion, x: &[f64], target_sign: f64, epsilon: f64, free: &[bool]) -> Vec<f64> {
    let diff = Difference::unchecked(spec, x);
    let dev = deviation(&diff, region, false);
    let dose = dev.maximizers[0].dose;
    let sign = dev.maximizers[0].sign.value();
    let mut grad = vec![0.0; x.len()];
    diff.gradient(dose, &mut grad);
    for (v, f) in grad.iter_mut().zip(free) {
        if !f {
            *v = 0.0;
        }
    }
    let norm2: f64 = grad.iter().map(|v| v * v).sum();
    let current = diff.at(dose);
    let target = target_sign * sign * epsilon;
    let mut out = x.to_vec();
    if norm2 > 0.0 {
        for (o, g) in out.iter_mut().zip(&grad) {
            *o += (target - current) * g / norm2;
        }
    }
    spec.bounds.project(&mut out);
    out
}

struct Attempt {
    x: Vec<f64>,
    rss: f64,
    gap: f64,
    converged: bool,
    outer: usize,
    rho: f64,
    lambda: f64,
    diagnostics: crate::fitting::SolverDiagnostics,
}

fn augmented_lagrangian(
    problem: &JointProblem,
    spec: &ModelSpec,
    region: &DoseRegion,
    start: Vec<f64>,
    copts: &ConstraintOptions,
) -> Attempt {
    let inner_opts = SolverOptions {
        multistart: 1,
        initial: None,
        ..copts.solver.clone()
    };
    let free = inner_opts.free_mask(problem.dim());
    let mut x = start;
    let mut rho = copts.penalty_start;
    let mut lambda = 0.0;
    let mut prev = f64::INFINITY;
    let mut outer = 0;
    let mut converged = false;
    let mut g = gap(spec, region, &x, copts.epsilon);
    let mut diagnostics = None;

    if g.abs() <= copts.tolerance {
        converged = true;
    }
    while !converged && outer < copts.max_outer {
        outer += 1;
        let aug = Augmented {
            base: problem,
            spec,
            region,
            epsilon: copts.epsilon,
            rho,
            lambda,
        };
        let solved = solve(&aug, &spec.bounds, &x, &inner_opts);
        x = solved.x;
        diagnostics = Some(solved.diagnostics);
        g = gap(spec, region, &x, copts.epsilon);
        if g.abs() <= copts.tolerance {
            break;
        }
        lambda += rho * g;
        if g.abs() > 0.25 * prev {
            rho *= copts.penalty_growth;
        }
        prev = g.abs();
    }
    g = restore(spec, region, &mut x, copts.epsilon, &free, 5);
    converged = g.abs() <= copts.tolerance;

    let rss = problem.objective(&x);
    Attempt {
        x,
        rss,
        gap: g,
        converged,
        outer,
        rho,
        lambda,
        diagnostics: diagnostics.unwrap_or_else(|| crate::fitting::SolverDiagnostics {
            iterations: 0,
            converged: true,
            best_objective: rss,
            singular_jacobian_events: 0,
            starts: Vec::new(),
        }),
    }
}

/// Largest `d_inf` reachable inside the parameter box, by LM on
/// `C - d_inf(beta)` from a few starts.
pub fn max_achievable_deviation(spec: &ModelSpec, region: &DoseRegion, start: &[f64], solver: &SolverOptions) -> Result<f64> {
    struct Push<'a> {
        spec: &'a ModelSpec,
        region: &'a DoseRegion,
        ceiling: f64,
    }
    impl LeastSquares for Push<'_> {
        fn dim(&self) -> usize {
            self.spec.dim()
        }
        fn len(&self) -> usize {
            1
        }
        fn residuals(&self, x: &[f64], r: &mut [f64]) {
            r[0] = self.ceiling - deviation(&Difference::unchecked(self.spec, x), self.region, false).d_inf;
        }
        fn jacobian(&self, x: &[f64], jac: &mut DMatrix<f64>) {
            let diff = Difference::unchecked(self.spec, x);
            let dev = deviation(&diff, self.region, false);
            for (j, g) in deviation_gradient(&diff, &dev.maximizers, x.len()).iter().enumerate() {
                jac[(0, j)] = -g;
            }
        }
    }
    let bound = spec
        .bounds
        .lower
        .iter()
        .chain(&spec.bounds.upper)
        .filter(|v| v.is_finite())
        .fold(1.0f64, |a, v| a.max(v.abs()));
    let push = Push {
        spec,
        region,
        ceiling: 100.0 * bound,
    };
    let opts = SolverOptions {
        multistart: solver.multistart.max(4),
        ..solver.clone()
    };
    let solved = solve(&push, &spec.bounds, start, &opts);
    Ok(max_abs_deviation(spec, &solved.x, region)?.d_inf)
}

/// Minimizes the joint sum of squares subject to `|d_inf - epsilon| <= tol`,
/// starting from the unconstrained estimate, from it pushed onto the margin
/// along the deviation gradient, and from the mirror image on the other side.
/// Returns the lowest-RSS converged candidate.
pub fn fit_constrained(
    data: &TrialDataset,
    spec: &ModelSpec,
    region: &DoseRegion,
    unconstrained: &FitResult,
    copts: &ConstraintOptions,
) -> Result<ConstrainedFit> {
    copts.validate(spec.dim())?;
    region.validate()?;
    if unconstrained.params.len() != spec.dim() {
        return Err(Error::Dimension {
            expected: spec.dim(),
            got: unconstrained.params.len(),
        });
    }
    let problem = JointProblem::joint(data, spec);
    constrained_from(&problem, data, spec, region, &unconstrained.params, copts)
}

pub(crate) fn constrained_from(
    problem: &JointProblem,
    data: &TrialDataset,
    spec: &ModelSpec,
    region: &DoseRegion,
    beta_hat: &[f64],
    copts: &ConstraintOptions,
) -> Result<ConstrainedFit> {
    let free = copts.solver.free_mask(spec.dim());
    let eps = copts.epsilon;
    let mut pushed = beta_hat.to_vec();
    restore(spec, region, &mut pushed, eps, &free, 8);
    let mut opposite = push_signed(spec, region, beta_hat, -1.0, eps, &free);
    restore(spec, region, &mut opposite, eps, &free, 8);

    let starts = [
        (StartKind::Unconstrained, beta_hat.to_vec()),
        (StartKind::PushedTowardMargin, pushed),
        (StartKind::OppositeSide, opposite),
    ];
    let attempts: Vec<(StartKind, Attempt)> = starts
        .into_iter()
        .map(|(kind, x)| (kind, augmented_lagrangian(problem, spec, region, x, copts)))
        .collect();

    let candidates = attempts
        .iter()
        .map(|(kind, a)| CandidateReport {
            start: *kind,
            rss: a.rss,
            constraint_gap: a.gap,
            converged: a.converged,
            outer_iterations: a.outer,
        })
        .collect();

    let best = attempts
        .iter()
        .filter(|(_, a)| a.converged)
        .min_by(|a, b| a.1.rss.total_cmp(&b.1.rss))
        .or_else(|| attempts.iter().min_by(|a, b| a.1.gap.abs().total_cmp(&b.1.gap.abs())))
        .map(|(_, a)| a)
        .expect("three starts");

    if !best.converged {
        let reach = max_achievable_deviation(spec, region, beta_hat, &copts.solver)?;
        if reach < eps - copts.tolerance {
            return Err(Error::Infeasible {
                epsilon: eps,
                max_achievable: reach,
            });
        }
    }

    let fit = finish_fit(
        problem,
        data,
        spec,
        best.x.clone(),
        best.rss,
        best.diagnostics.clone(),
        &copts.solver,
    );
    Ok(ConstrainedFit {
        fit,
        epsilon: eps,
        d_inf: eps + best.gap,
        constraint_gap: best.gap,
        converged: best.converged,
        outer_iterations: best.outer,
        penalty: best.rho,
        multiplier: best.lambda,
        candidates,
    })
}

/// The bootstrap's data-generating point: the unconstrained estimate when its
/// deviation already reaches the margin, the constrained one otherwise.
pub fn select_constrained_estimate(
    unconstrained: &FitResult,
    constrained: &ConstrainedFit,
    d_hat: f64,
    epsilon: f64,
) -> Vec<f64> {
    if d_hat >= epsilon {
        unconstrained.params.clone()
    } else {
        constrained.fit.params.clone()
    }
}
