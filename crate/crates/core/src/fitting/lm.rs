//! Box-constrained damped Gauss-Newton (Levenberg-Marquardt).
//!
//! Minimizes `F(x) = |r(x)|^2 + offset` over a coordinate box. Coordinates
//! sitting on a bound whose gradient points outward are held for the step;
//! the remaining step is projected back into the box. Damping follows
//! Nielsen's gain-ratio update with a lower floor instead of a
//! pseudo-inverse for rank-deficient Jacobians.

use nalgebra::{DMatrix, DVector};

use crate::model::ParamBox;

/// Residual vector and Jacobian of a least-squares objective.
pub(crate) trait LeastSquares {
    fn dim(&self) -> usize;
    fn len(&self) -> usize;
    fn residuals(&self, x: &[f64], r: &mut [f64]);
    /// `jac[(i, j)] = d r_i / d x_j`.
    fn jacobian(&self, x: &[f64], jac: &mut DMatrix<f64>);
    /// Constant part of the objective.
    fn offset(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LmSettings {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub step_tolerance: f64,
    pub damping_floor: f64,
    pub initial_damping: f64,
    pub record_trace: bool,
}

/// Why a local solve stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Gradient,
    Step,
    /// No decrease possible even with maximal damping.
    Stalled,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub(crate) struct LmOutcome {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub singular_events: usize,
    pub termination: Termination,
    /// Objective after each accepted step, when requested.
    #[cfg_attr(not(test), allow(dead_code))]
    pub trace: Vec<f64>,
}

const MAX_DAMPING: f64 = 1e32;

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

pub(crate) fn minimize<P: LeastSquares + ?Sized>(
    problem: &P,
    x0: &[f64],
    bounds: &ParamBox,
    free: &[bool],
    settings: &LmSettings,
) -> LmOutcome {
    let n = problem.dim();
    let m = problem.len();
    debug_assert_eq!(x0.len(), n);
    debug_assert_eq!(free.len(), n);

    let mut x = x0.to_vec();
    bounds.project(&mut x);
    let mut r = vec![0.0; m];
    let mut r_trial = vec![0.0; m];
    let mut x_trial = vec![0.0; n];
    let mut jac = DMatrix::zeros(m, n);
    problem.residuals(&x, &mut r);
    let offset = problem.offset();
    let mut f = sum_sq(&r);

    let mut mu: Option<f64> = None;
    let mut nu = 2.0;
    let mut singular_events = 0;
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    let mut trace = Vec::new();
    if settings.record_trace {
        trace.push(f + offset);
    }

    'outer: while iterations < settings.max_iterations {
        iterations += 1;
        problem.jacobian(&x, &mut jac);
        let rv = DVector::from_column_slice(&r);
        let jtr = jac.tr_mul(&rv);
        let jtj = jac.tr_mul(&jac);

        let active: Vec<usize> = (0..n)
            .filter(|&j| {
                let g = 2.0 * jtr[j];
                free[j]
                    && !(x[j] <= bounds.lower[j] && g > 0.0)
                    && !(x[j] >= bounds.upper[j] && g < 0.0)
            })
            .collect();
        let pgrad = active
            .iter()
            .map(|&j| (2.0 * jtr[j]).abs())
            .fold(0.0, f64::max);
        if active.is_empty() || pgrad < settings.gradient_tolerance * (1.0 + (f + offset).abs()) {
            termination = Termination::Gradient;
            break;
        }

        let k = active.len();
        let scale: Vec<f64> = active
            .iter()
            .map(|&j| jtj[(j, j)].max(settings.damping_floor))
            .collect();
        let mut damping = match mu {
            Some(v) => v,
            None => (settings.initial_damping * scale.iter().cloned().fold(0.0, f64::max))
                .max(settings.damping_floor),
        };

        loop {
            let mut system = DMatrix::zeros(k, k);
            let mut rhs = DVector::zeros(k);
            for (a, &ja) in active.iter().enumerate() {
                rhs[a] = -jtr[ja];
                for (b, &jb) in active.iter().enumerate() {
                    system[(a, b)] = jtj[(ja, jb)];
                }
                system[(a, a)] += damping * scale[a];
            }
            let step = match system.clone().cholesky() {
                Some(ch) => ch.solve(&rhs),
                None => {
                    singular_events += 1;
                    damping = (damping * 10.0).max(settings.damping_floor);
                    if damping > MAX_DAMPING {
                        termination = Termination::Stalled;
                        break 'outer;
                    }
                    continue;
                }
            };

            x_trial.copy_from_slice(&x);
            for (a, &j) in active.iter().enumerate() {
                x_trial[j] += step[a];
            }
            bounds.project(&mut x_trial);
            problem.residuals(&x_trial, &mut r_trial);
            let f_trial = sum_sq(&r_trial);
            // f - f_trial without cancelling the unchanged residuals
            let actual: f64 = r.iter().zip(&r_trial).map(|(a, b)| (a - b) * (a + b)).sum();

            if f_trial.is_finite() && actual > 0.0 {
                // predicted decrease of the linear model for the projected step
                let mut d = DVector::zeros(n);
                for j in 0..n {
                    d[j] = x_trial[j] - x[j];
                }
                let predicted = -(2.0 * jtr.dot(&d) + (&jtj * &d).dot(&d));
                let gain = if predicted > 0.0 { actual / predicted } else { 0.0 };
                damping *= (1.0 - (2.0 * gain - 1.0).powi(3)).max(1.0 / 3.0);
                damping = damping.max(settings.damping_floor);
                nu = 2.0;
                mu = Some(damping);

                let step_norm = d.amax();
                let x_norm = x.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
                std::mem::swap(&mut x, &mut x_trial);
                std::mem::swap(&mut r, &mut r_trial);
                f = f_trial;
                if settings.record_trace {
                    trace.push(f + offset);
                }
                if step_norm <= settings.step_tolerance * (x_norm + settings.step_tolerance) {
                    termination = Termination::Step;
                    break 'outer;
                }
                continue 'outer;
            }

            damping *= nu;
            nu *= 2.0;
            if damping > MAX_DAMPING || !nu.is_finite() {
                termination = Termination::Stalled;
                break 'outer;
            }
        }
    }

    if matches!(termination, Termination::Stalled | Termination::Step) {
        f = polish(problem, &mut x, &mut r, bounds, free, settings.damping_floor);
    }

    LmOutcome {
        x,
        objective: f + offset,
        iterations,
        converged: termination != Termination::MaxIterations,
        singular_events,
        termination,
        trace,
    }
}

/// Active coordinates, `J^T r`, `J^T J` and the projected gradient norm.
fn local_model<P: LeastSquares + ?Sized>(
    problem: &P,
    x: &[f64],
    r: &[f64],
    bounds: &ParamBox,
    free: &[bool],
) -> (Vec<usize>, DVector<f64>, DMatrix<f64>, f64) {
    let mut jac = DMatrix::zeros(problem.len(), problem.dim());
    problem.jacobian(x, &mut jac);
    let jtr = jac.tr_mul(&DVector::from_column_slice(r));
    let jtj = jac.tr_mul(&jac);
    let active: Vec<usize> = (0..x.len())
        .filter(|&j| {
            free[j] && !(x[j] <= bounds.lower[j] && jtr[j] > 0.0) && !(x[j] >= bounds.upper[j] && jtr[j] < 0.0)
        })
        .collect();
    let pgrad = active.iter().map(|&j| (2.0 * jtr[j]).abs()).fold(0.0, f64::max);
    (active, jtr, jtj, pgrad)
}

/// Near-undamped Gauss-Newton steps once the objective no longer resolves
/// progress. A step is kept while it shrinks the projected gradient and
/// leaves the objective unchanged up to rounding.
fn polish<P: LeastSquares + ?Sized>(
    problem: &P,
    x: &mut Vec<f64>,
    r: &mut Vec<f64>,
    bounds: &ParamBox,
    free: &[bool],
    damping_floor: f64,
) -> f64 {
    let mut f = sum_sq(r);
    let (mut active, mut jtr, mut jtj, mut pgrad) = local_model(problem, x, r, bounds, free);
    let mut r_trial = vec![0.0; r.len()];
    for _ in 0..5 {
        let k = active.len();
        if k == 0 || pgrad == 0.0 {
            break;
        }
        let mut system = DMatrix::zeros(k, k);
        let mut rhs = DVector::zeros(k);
        for (a, &ja) in active.iter().enumerate() {
            rhs[a] = -jtr[ja];
            for (b, &jb) in active.iter().enumerate() {
                system[(a, b)] = jtj[(ja, jb)];
            }
            system[(a, a)] += damping_floor * jtj[(ja, ja)].max(damping_floor);
        }
        let Some(ch) = system.cholesky() else { break };
        let step = ch.solve(&rhs);
        let mut trial = x.clone();
        for (a, &j) in active.iter().enumerate() {
            trial[j] += step[a];
        }
        bounds.project(&mut trial);
        problem.residuals(&trial, &mut r_trial);
        let f_trial = sum_sq(&r_trial);
        if !f_trial.is_finite() || f_trial > f * (1.0 + 64.0 * f64::EPSILON) {
            break;
        }
        let model = local_model(problem, &trial, &r_trial, bounds, free);
        if !(model.3 < pgrad) {
            break;
        }
        *x = trial;
        r.copy_from_slice(&r_trial);
        f = f_trial;
        (active, jtr, jtj, pgrad) = model;
    }
    f
}
